#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <sstream>
#include <thread>

// Eigen first: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include "affmem/providers.hpp"

#include <httplib.h>
#include <json.hpp>

namespace affmem {

using nlohmann::json;

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(const std::string& endpoint_url) {
    const auto scheme_end = endpoint_url.find("://");
    const auto path_start =
        endpoint_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    base_ = endpoint_url.substr(0, path_start);
    if (path_start != std::string::npos) prefix_ = endpoint_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  HttpResponse post(const std::string& path, const std::string& body, const HttpHeaders& headers,
                    double timeout_s) override {
    httplib::Client client(base_);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - double(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    auto res = client.Post(prefix_ + path, h, body, content_type);
    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
      return {timed_out ? -1 : 0, httplib::to_string(err)};
    }
    return {res->status, res->body};
  }

 private:
  std::string base_;
  std::string prefix_;
};

json parse_json(const std::string& raw, const char* what) {
  try {
    return json::parse(raw);
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, std::string(what) + ": " + e.what(), raw);
  }
}

}  // namespace

std::unique_ptr<HttpTransport> make_httplib_transport(const std::string& endpoint_url) {
  return std::make_unique<HttplibTransport>(endpoint_url);
}

struct HttpProvider::State {
  std::unique_ptr<HttpTransport> transport;
  Sleeper sleeper;
  std::counting_semaphore<> in_flight;
  std::atomic<std::size_t> sent{0};
  std::string api_key;

  State(std::unique_ptr<HttpTransport> t, Sleeper s, int parallel)
      : transport(std::move(t)), sleeper(std::move(s)), in_flight(parallel) {}
};

HttpProvider::HttpProvider(ProviderConfig cfg, std::unique_ptr<HttpTransport> transport,
                           Sleeper sleeper)
    : cfg_(std::move(cfg)) {
  if (cfg_.max_parallel_requests < 1) throw ConfigError("max_parallel_requests must be >= 1");
  if (cfg_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (!sleeper) {
    sleeper = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }
  state_ = std::make_unique<State>(std::move(transport), std::move(sleeper),
                                   cfg_.max_parallel_requests);
  if (!cfg_.api_key_env_var.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env_var.c_str())) state_->api_key = key;
  }
}

HttpProvider::~HttpProvider() = default;

std::size_t HttpProvider::requests_sent() const { return state_->sent.load(); }

std::string HttpProvider::model(const std::string& role) const {
  auto it = cfg_.model_names.find(role);
  if (it == cfg_.model_names.end() || it->second.empty()) {
    throw ProviderError(ProviderErrorKind::UnsupportedOperation,
                        "no model configured for role '" + role + "'");
  }
  return it->second;
}

std::string HttpProvider::request(const std::string& path, const std::string& body) {
  HttpHeaders headers = {{"Content-Type", "application/json"}};
  if (!state_->api_key.empty()) headers.emplace_back("Authorization", "Bearer " + state_->api_key);

  ProviderErrorKind last_kind = ProviderErrorKind::Transport;
  std::string last_detail;
  int attempts = 0;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    HttpResponse res;
    {
      state_->in_flight.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{state_->in_flight};
      ++state_->sent;
      ++attempts;
      res = state_->transport->post(path, body, headers, cfg_.timeout_s);
    }
    if (res.status >= 200 && res.status < 300) return res.body;

    bool retryable = true;
    if (res.status == 401 || res.status == 403) {
      throw ProviderError(ProviderErrorKind::Auth,
                          path + " rejected credentials (HTTP " + std::to_string(res.status) + ")");
    } else if (res.status == 429) {
      last_kind = ProviderErrorKind::RateLimit;
    } else if (res.status == -1) {
      last_kind = ProviderErrorKind::Timeout;
    } else if (res.status == 0 || res.status >= 500) {
      last_kind = ProviderErrorKind::Transport;
    } else {
      last_kind = ProviderErrorKind::Transport;
      retryable = false;
    }
    last_detail = path + " failed (status " + std::to_string(res.status) + "): " + res.body;
    if (!retryable) break;
    if (attempt < cfg_.max_retries) state_->sleeper(kBackoffBase * std::pow(2.0, attempt));
  }
  throw ProviderError(last_kind, last_detail + " (" + std::to_string(attempts) + " attempt(s))");
}

Embedding HttpProvider::embed(const std::string& model_role, const std::string& input) {
  const json body = {{"model", model(model_role)}, {"input", input}};
  const auto raw = request("/v1/embeddings", body.dump());
  const auto res = parse_json(raw, "embeddings response");
  try {
    return Embedding::from_std(res.at("data").at(0).at("embedding").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  } catch (const Error& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::string HttpProvider::chat(const std::string& model_role, const std::string& prompt,
                               const std::vector<std::string>& image_refs) {
  json content;
  if (image_refs.empty()) {
    content = prompt;
  } else {
    content = json::array({{{"type", "text"}, {"text", prompt}}});
    for (const auto& ref : image_refs) {
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", ref}}}});
    }
  }
  const json body = {{"model", model(model_role)},
                     {"temperature", 0},
                     {"response_format", {{"type", "json_object"}}},
                     {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
  const auto raw = request("/v1/chat/completions", body.dump());
  const auto res = parse_json(raw, "chat response");
  try {
    return res.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::string HttpProvider::render(const std::string& template_name,
                                 const std::map<std::string, std::string>& values) const {
  const std::string path = cfg_.prompt_dir + "/" + template_name;
  std::ifstream in(path);
  if (!in) throw ConfigError("missing prompt template " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return render_template(ss.str(), values);
}

Embedding HttpProvider::do_embed_text(std::string_view text) {
  return embed("text_embedding", std::string(text));
}

Embedding HttpProvider::do_embed_query_multimodal(std::string_view text) {
  return embed("multimodal_text", std::string(text));
}

Embedding HttpProvider::do_embed_image_multimodal(const std::string& image_ref) {
  return embed("multimodal_image", image_ref);
}

std::vector<SegmentMask> HttpProvider::do_segment(const ViewRecord& view) {
  const json body = {{"model", model("segmenter")},
                     {"image", view.image_ref},
                     {"width", view.width},
                     {"height", view.height}};
  const auto raw = request("/v1/segment", body.dump());
  const auto res = parse_json(raw, "segment response");
  try {
    std::vector<SegmentMask> out;
    for (const auto& m : res.at("masks")) {
      const auto bbox = m.at("bbox").get<std::vector<int>>();
      if (bbox.size() != 4) throw ProviderError(ProviderErrorKind::ParseFailure, "bbox needs 4 values", raw);
      out.push_back({m.at("mask_id").get<int>(), bbox[0], bbox[1], bbox[2], bbox[3],
                     m.value("area_px", static_cast<long>(bbox[2]) * bbox[3])});
    }
    return out;
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::vector<InstanceProposal> HttpProvider::do_propose_instances(
    const ViewRecord& view, std::span<const SegmentMask> masks) {
  std::ostringstream listing;
  for (const auto& m : masks) {
    listing << m.mask_id << ": bbox [" << m.x << ", " << m.y << ", " << m.w << ", " << m.h
            << "]\n";
  }
  const auto prompt = render("affordance_proposer.txt",
                             {{"embodiment", cfg_.embodiment}, {"candidates", listing.str()}});
  // Original image plus the visual prompt with indexed masks overlaid.
  const auto raw = chat("vlm", prompt, {view.image_ref, view.image_ref + "#masks"});
  const auto res = parse_json(raw, "affordance proposer output");
  try {
    std::vector<InstanceProposal> out;
    for (const auto& p : res.at("instances")) {
      InstanceProposal ip;
      ip.mask_id = p.at("mask_id").get<int>();
      ip.description = p.at("description").get<std::string>();
      for (const auto& a : p.at("affordances")) {
        ip.affordances.push_back(
            {Action::named(a.at("action").get<std::string>()), a.at("score").get<double>()});
      }
      out.push_back(std::move(ip));
    }
    return out;
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::string HttpProvider::do_describe_view(const ViewRecord& view) {
  const auto raw = chat("vlm", render("describe_view.txt", {}), {view.image_ref});
  try {
    return parse_json(raw, "view description").at("description").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::string HttpProvider::do_summarize(std::span<const std::string> descriptions) {
  std::string listing;
  for (const auto& d : descriptions) listing += "- " + d + "\n";
  const auto raw = chat("llm", render("summarize.txt", {{"candidates", listing}}), {});
  try {
    return parse_json(raw, "summary").at("summary").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::vector<InstanceScore> HttpProvider::do_score_instances(
    std::string_view phrase, std::span<const InstanceCandidate> candidates) {
  std::string listing;
  for (const auto& c : candidates) listing += c.instance_id + ": " + c.description + "\n";
  const auto raw = chat("llm",
                        render("score_instances.txt",
                               {{"instruction", std::string(phrase)}, {"candidates", listing}}),
                        {});
  const auto res = parse_json(raw, "instance scores");
  try {
    std::map<std::string, double> by_id;
    for (const auto& s : res.at("scores")) {
      by_id[s.at("id").get<std::string>()] = s.at("relevance").get<double>();
    }
    std::vector<InstanceScore> out;
    for (const auto& c : candidates) {
      auto it = by_id.find(c.instance_id);
      if (it == by_id.end()) {
        throw ProviderError(ProviderErrorKind::ParseFailure,
                            "no score returned for " + c.instance_id, raw);
      }
      out.push_back({c.instance_id, it->second});
    }
    return out;
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

DecomposedInstruction HttpProvider::do_decompose_instruction(std::string_view instruction) {
  const auto raw = chat(
      "llm", render("decompose_instruction.txt", {{"instruction", std::string(instruction)}}), {});
  const auto res = parse_json(raw, "decomposition");
  const auto target = res.value("target", std::string());
  const auto receptacle = res.value("receptacle", std::string());
  if (target.empty() || receptacle.empty()) {
    throw DecompositionError("model returned no target/receptacle for the instruction");
  }
  return {target, receptacle};
}

}  // namespace affmem
