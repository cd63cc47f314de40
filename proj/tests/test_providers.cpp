#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// Eigen before httplib (see http_provider.cpp).
#include "support.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "affmem/geometry.hpp"

using namespace affmem;
using namespace affmem::testing;
using nlohmann::json;

namespace {

// Feature hashing written out from its definition, independent of MockProvider.
Eigen::VectorXd hashing_oracle(const std::string& text, Eigen::Index dim, std::uint64_t salt) {
  auto fnv = [](const std::string& s, std::uint64_t h) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  };
  const std::uint64_t seed = fnv(std::to_string(salt), 0xcbf29ce484222325ULL);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    const auto h = fnv(tok, seed);
    v[Eigen::Index(h % std::uint64_t(dim))] += (h >> 63) ? -1.0 : 1.0;
    tok.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      tok.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  return v / v.norm();
}

SyntheticCatalog kitchen_catalog() {
  Scene s;
  s.view("k0", "kitchen", {0, 0, 1}, {pick("green cup", 0.9), place("coffee machine", 0.4)},
         "green cup on counter")
      .view("k1", "kitchen", {0, 0, 1}, {place("kitchen counter", 0.8)})
      .view("k2", "kitchen", {0, 0, 1}, {})
      .view("k3", "kitchen", {0, 0, 1}, {pick("cup", 0.5), pick("bowl", 0.5), pick("plate", 0.4)});
  return s.catalog;
}

ViewRecord record(const SyntheticCatalog& c, const std::string& ref) { return c.at(ref).record; }

}  // namespace

TEST_CASE("mock text embedding") {
  MockProvider p(mock_config(256));
  const auto a = p.embed_text("red mug");
  CHECK(a == p.embed_text("red mug"));
  CHECK(cosine_similarity(a, p.embed_text("red mug")) == doctest::Approx(1.0));

  SUBCASE("matches the hashing oracle exactly") {
    for (const std::string t : {"red metal mug", "Blue SOFA!", "the desk that has coffee"}) {
      CHECK(p.embed_text(t).values() == hashing_oracle(t, 256, MockProvider::kTextSalt));
    }
  }
  SUBCASE("shared tokens raise similarity") {
    const auto q = p.embed_text("red metal mug");
    const double shared = unit_similarity(q, p.embed_text("red mug"));
    const double disjoint = unit_similarity(q, p.embed_text("blue sofa"));
    const Eigen::VectorXd o = hashing_oracle("red metal mug", 256, MockProvider::kTextSalt);
    CHECK(shared == doctest::Approx(o.dot(hashing_oracle("red mug", 256, MockProvider::kTextSalt))));
    CHECK(shared > disjoint);
  }
  SUBCASE("empty input") {
    try {
      p.embed_text("");
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      CHECK(e.kind() == ProviderErrorKind::EmptyInput);
    }
    CHECK_THROWS_AS(p.embed_text("  ,;"), ProviderError);
  }
}

TEST_CASE("mock multimodal embedding") {
  auto cfg = mock_config(64);
  cfg.d_m = 96;
  MockProvider p(cfg, kitchen_catalog());
  CHECK(p.embed_query_multimodal("green cup").dim() == 96);
  CHECK(p.embed_text("green cup").dim() == 64);
  CHECK(p.embed_image_multimodal("k0") == p.embed_query_multimodal("green cup on counter"));
  // Without a caption the image is hashed from the view description.
  CHECK(p.embed_image_multimodal("k1") == p.embed_query_multimodal("kitchen: kitchen counter"));
  try {
    p.embed_image_multimodal("nope");
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    CHECK(e.kind() == ProviderErrorKind::MissingPrecomputed);
  }
}

TEST_CASE("mock per-view requests") {
  const auto cat = kitchen_catalog();
  MockProvider p(mock_config(32), cat);

  const auto masks = p.segment(record(cat, "k3"));
  REQUIRE(masks.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(masks[std::size_t(i)].mask_id == i);
  CHECK(p.segment(record(cat, "k2")).empty());

  const auto m0 = p.segment(record(cat, "k0"));
  const auto props = p.propose_instances(record(cat, "k0"), m0);
  REQUIRE(props.size() == 2);
  CHECK(props[0].description == "green cup");
  CHECK(props[0].affordances == std::vector<ProposedAffordance>{{Action::pick(), 0.9}});
  CHECK(props[1].affordances == std::vector<ProposedAffordance>{{Action::place(), 0.4}});

  const auto counter = p.propose_instances(record(cat, "k1"), p.segment(record(cat, "k1")));
  REQUIRE(counter.size() == 1);
  CHECK(counter[0].affordances == std::vector<ProposedAffordance>{{Action::place(), 0.8}});

  CHECK(p.describe_view(record(cat, "k0")) == "kitchen: green cup, coffee machine");
  CHECK(p.describe_view(record(cat, "k0")) == p.describe_view(record(cat, "k0")));
}

TEST_CASE("mock summarize") {
  MockProvider p(mock_config(32));
  const std::vector<std::string> two = {"kitchen: cup", "kitchen: sink"};
  CHECK(p.summarize(two) == "kitchen: cup; sink");
  const std::vector<std::string> one = {"bedroom: bed, lamp"};
  CHECK(p.summarize(one) == "bedroom: bed, lamp");
  const std::vector<std::string> rooms = {"kitchen: cup", "bedroom: bed; cup"};
  CHECK(p.summarize(rooms) == "kitchen, bedroom: cup; bed");

  auto small = mock_config(32);
  small.max_summary_chars = 200;
  MockProvider q(small);
  std::vector<std::string> many;
  for (int i = 0; i < 100; ++i) many.push_back("room" + std::to_string(i) + ": object number " + std::to_string(i));
  CHECK(q.summarize(many).size() <= 200);
  CHECK(p.summarize(many).size() <= 8192);

  CHECK_THROWS_AS(p.summarize(std::vector<std::string>{}), ProviderError);
}

TEST_CASE("mock relevance is token Jaccard") {
  MockProvider p(mock_config(32));
  const std::vector<InstanceCandidate> c = {{"i1", "green cup"}, {"i2", "blue sofa"}};
  const auto s = p.score_instances("green cup", c);
  CHECK(s[0].relevance == 1.0);
  CHECK(s[1].relevance == 0.0);
  const std::vector<InstanceCandidate> one = {{"i1", "green cup"}};
  CHECK(p.score_instances("cup", one)[0].relevance == 0.5);
  try {
    p.score_instances("cup", std::vector<InstanceCandidate>{});
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    CHECK(e.kind() == ProviderErrorKind::EmptyInput);
  }
}

TEST_CASE("rule-based decomposition") {
  MockProvider p(mock_config(32));
  auto d = p.decompose_instruction("Please deliver a cup to the desk that has some coffee powder on it.");
  CHECK(d.target == "a cup");
  CHECK(d.receptacle == "the desk that has some coffee powder on it");

  d = p.decompose_instruction(
      "Take a photo frame from the side table in the bedroom and place it on the dining table "
      "with a bouquet of flowers.");
  CHECK(d.target == "a photo frame from the side table in the bedroom");
  CHECK(d.receptacle == "the dining table with a bouquet of flowers");

  d = p.decompose_instruction("Pick up the red mug and put it into the sink");
  CHECK(d.target == "the red mug");
  CHECK(d.receptacle == "the sink");

  d = p.decompose_instruction("Put the towel onto the rack.");
  CHECK(d.target == "the towel");
  CHECK(d.receptacle == "the rack");

  CHECK_THROWS_AS(p.decompose_instruction("hello"), DecompositionError);
  CHECK_THROWS_AS(p.decompose_instruction("move to"), DecompositionError);
}

TEST_CASE("file backend") {
  const std::string doc = R"({"key":"red mug","role":"text","dim":3,"values":[0.1,0.2000000000000001,-0.3]}
{"key":"red mug","role":"query_mm","values":[1,0]}
{"key":"img0","role":"image_mm","values":[0,2]}
{"key":"img0","role":"segment","masks":[{"mask_id":0,"bbox":[0,0,10,10]},{"mask_id":1,"bbox":[10,0,10,10],"area_px":50}]}
{"key":"img0","role":"proposals","proposals":[{"mask_id":0,"description":"green cup","affordances":[{"action":"pick","score":0.9}]}]}
{"key":"img1","role":"proposals","proposals":[{"mask_id":0,"description":"cup","affordances":[{"action":"pick","score":1.2}]}]}
{"key":"img0","role":"description","text":"kitchen: green cup"}
{"key":"a\nb","role":"summary","text":"a; b"}
{"key":"cup","role":"relevance","scores":{"green cup":0.5}}
{"key":"Move it to the desk","role":"decomposition","target":"it","receptacle":"the desk"}
{"key":"x","role":"thumbnail"}
)";
  auto p = FileProvider::from_string(doc);
  CHECK(p.skipped_records() == 1);

  const auto e = p.embed_text("red mug");
  REQUIRE(e.dim() == 3);
  CHECK(e.values()[1] == 0.2000000000000001);  // bit-exact, not normalized
  CHECK(e.values()[2] == -0.3);
  CHECK(p.embed_image_multimodal("img0").values()[1] == 2.0);
  try {
    p.embed_text("blue sofa");
    FAIL("expected ProviderError");
  } catch (const ProviderError& err) {
    CHECK(err.kind() == ProviderErrorKind::MissingPrecomputed);
  }

  const ViewRecord v0{"img0", {0, 0, 0}, 20, 10, "env"};
  const auto masks = p.segment(v0);
  REQUIRE(masks.size() == 2);
  CHECK(masks[0].area_px == 100);
  CHECK(masks[1].area_px == 50);
  const auto props = p.propose_instances(v0, masks);
  REQUIRE(props.size() == 1);
  CHECK(props[0].affordances[0].score == 0.9);
  CHECK(p.describe_view(v0) == "kitchen: green cup");
  CHECK(p.summarize(std::vector<std::string>{"a", "b"}) == "a; b");
  CHECK(p.score_instances("cup", std::vector<InstanceCandidate>{{"i9", "green cup"}})[0].relevance == 0.5);
  CHECK(p.decompose_instruction("Move it to the desk").receptacle == "the desk");

  const ViewRecord v1{"img1", {0, 0, 0}, 20, 10, "env"};
  const std::vector<SegmentMask> one = {{0, 0, 0, 5, 5, 25}};
  try {
    p.propose_instances(v1, one);
    FAIL("expected ProviderError");
  } catch (const ProviderError& err) {
    CHECK(err.kind() == ProviderErrorKind::ScoreRange);
  }

  const ViewRecord narrow{"img0", {0, 0, 0}, 15, 10, "env"};
  CHECK_THROWS_AS(p.segment(narrow), ProviderError);  // second mask leaves the frame

  CHECK_THROWS_AS(FileProvider::from_string("{not json"), FormatError);
}

// ---------------------------------------------------------------------------
// Http backend over a scripted transport.

namespace {

struct Call {
  std::string path;
  json body;
  HttpHeaders headers;
};

class ScriptedTransport final : public HttpTransport {
 public:
  std::vector<HttpResponse> script;  // replayed in order; the last entry repeats
  std::vector<Call> calls;
  std::mutex mu;

  HttpResponse post(const std::string& path, const std::string& body, const HttpHeaders& headers,
                    double) override {
    std::lock_guard lock(mu);
    calls.push_back({path, json::parse(body), headers});
    const auto i = std::min(calls.size() - 1, script.size() - 1);
    return script[i];
  }
};

ProviderConfig http_config() {
  ProviderConfig cfg;
  cfg.backend = Backend::Http;
  cfg.endpoint_url = "http://localhost:1";
  cfg.api_key_env_var = "AFFMEM_TEST_KEY";
  cfg.max_retries = 2;
  cfg.model_names = {{"text_embedding", "emb-small"}, {"llm", "chat-model"}, {"vlm", "vision-model"}};
  return cfg;
}

struct HttpRig {
  ScriptedTransport* transport;
  std::vector<double> sleeps;
  std::unique_ptr<HttpProvider> provider;

  explicit HttpRig(std::vector<HttpResponse> script, ProviderConfig cfg = http_config()) {
    auto t = std::make_unique<ScriptedTransport>();
    t->script = std::move(script);
    transport = t.get();
    provider = std::make_unique<HttpProvider>(cfg, std::move(t),
                                              [this](double s) { sleeps.push_back(s); });
  }
};

std::string chat_reply(const json& content) {
  return json{{"choices", {{{"message", {{"content", content.dump()}}}}}}}.dump();
}

ProviderErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ProviderError& e) {
    return e.kind();
  }
  FAIL("expected ProviderError");
  return ProviderErrorKind::Transport;
}

}  // namespace

TEST_CASE("http embeddings") {
  ::setenv("AFFMEM_TEST_KEY", "sk-test", 1);
  HttpRig rig({{200, R"({"data":[{"embedding":[0.5,-0.25,0.125]}]})"}});
  const auto e = rig.provider->embed_text("red mug");
  CHECK(e.to_std() == std::vector<double>{0.5, -0.25, 0.125});
  REQUIRE(rig.transport->calls.size() == 1);
  const auto& call = rig.transport->calls[0];
  CHECK(call.path == "/v1/embeddings");
  CHECK(call.body["model"] == "emb-small");
  CHECK(call.body["input"] == "red mug");
  CHECK(std::count(call.headers.begin(), call.headers.end(),
                   std::pair<std::string, std::string>{"Authorization", "Bearer sk-test"}) == 1);
  ::unsetenv("AFFMEM_TEST_KEY");

  CHECK(kind_of([&] { rig.provider->embed_image_multimodal("img0"); }) ==
        ProviderErrorKind::UnsupportedOperation);
}

TEST_CASE("http retry policy") {
  SUBCASE("timeouts retry with exponential backoff") {
    HttpRig rig({{-1, ""}});
    CHECK(kind_of([&] { rig.provider->embed_text("x"); }) == ProviderErrorKind::Timeout);
    CHECK(rig.provider->requests_sent() == 3);
    CHECK(rig.sleeps == std::vector<double>{0.25, 0.5});
  }
  SUBCASE("credentials are not retried") {
    HttpRig rig({{401, "denied"}});
    CHECK(kind_of([&] { rig.provider->embed_text("x"); }) == ProviderErrorKind::Auth);
    CHECK(rig.provider->requests_sent() == 1);
    CHECK(rig.sleeps.empty());
  }
  SUBCASE("rate limit then success") {
    HttpRig rig({{429, "slow down"}, {200, R"({"data":[{"embedding":[1,0]}]})"}});
    CHECK(rig.provider->embed_text("x").dim() == 2);
    CHECK(rig.sleeps == std::vector<double>{0.25});
  }
  SUBCASE("persistent rate limit") {
    HttpRig rig({{429, ""}});
    CHECK(kind_of([&] { rig.provider->embed_text("x"); }) == ProviderErrorKind::RateLimit);
    CHECK(rig.provider->requests_sent() == 3);
  }
  SUBCASE("server errors retry, client errors do not") {
    HttpRig five({{503, ""}, {200, R"({"data":[{"embedding":[1]}]})"}});
    CHECK(five.provider->embed_text("x").dim() == 1);
    HttpRig four({{400, "bad"}});
    CHECK(kind_of([&] { four.provider->embed_text("x"); }) == ProviderErrorKind::Transport);
    CHECK(four.provider->requests_sent() == 1);
  }
  SUBCASE("malformed body") {
    HttpRig rig({{200, "<html>"}});
    CHECK(kind_of([&] { rig.provider->embed_text("x"); }) == ProviderErrorKind::ParseFailure);
  }
}

TEST_CASE("http chat operations") {
  SUBCASE("relevance scores are validated") {
    HttpRig ok({{200, chat_reply({{"scores", {{{"id", "i1"}, {"relevance", 0.7}}}}})}});
    const std::vector<InstanceCandidate> c = {{"i1", "green cup"}};
    CHECK(ok.provider->score_instances("cup", c)[0].relevance == 0.7);
    const auto& body = ok.transport->calls[0].body;
    CHECK(body["model"] == "chat-model");
    CHECK(body["response_format"]["type"] == "json_object");
    const auto prompt = body["messages"][0]["content"].get<std::string>();
    CHECK(prompt.find("i1: green cup") != std::string::npos);
    CHECK(prompt.find("cup") != std::string::npos);

    HttpRig bad({{200, chat_reply({{"scores", {{{"id", "i1"}, {"relevance", 1.5}}}}})}});
    CHECK(kind_of([&] { bad.provider->score_instances("cup", c); }) == ProviderErrorKind::ScoreRange);
  }
  SUBCASE("affordance proposals carry the embodiment and both images") {
    HttpRig rig({{200, chat_reply({{"instances",
                                    {{{"mask_id", 0},
                                      {"description", "green cup"},
                                      {"affordances", {{{"action", "pick"}, {"score", 0.9}}}}}}}})}});
    const ViewRecord v{"file:///img0.png", {0, 0, 0}, 10, 10, "env"};
    const std::vector<SegmentMask> masks = {{0, 0, 0, 5, 5, 25}};
    const auto props = rig.provider->propose_instances(v, masks);
    REQUIRE(props.size() == 1);
    CHECK(props[0].affordances[0].action == Action::pick());
    const auto& content = rig.transport->calls[0].body["messages"][0]["content"];
    REQUIRE(content.is_array());
    CHECK(content.size() == 3);
    CHECK(content[0]["text"].get<std::string>().find("parallel-jaw gripper") != std::string::npos);
    CHECK(content[2]["image_url"]["url"] == "file:///img0.png#masks");
  }
  SUBCASE("decomposition") {
    HttpRig rig({{200, chat_reply({{"target", "a cup"}, {"receptacle", "the desk"}})}});
    const auto d = rig.provider->decompose_instruction("Please deliver a cup to the desk.");
    CHECK(d.target == "a cup");
    HttpRig none({{200, chat_reply({{"target", ""}, {"receptacle", ""}})}});
    CHECK_THROWS_AS(none.provider->decompose_instruction("hello"), DecompositionError);
  }
}

TEST_CASE("http parallelism cap") {
  class SlowTransport final : public HttpTransport {
   public:
    std::atomic<int> now{0}, peak{0};
    HttpResponse post(const std::string&, const std::string&, const HttpHeaders&, double) override {
      const int n = ++now;
      int p = peak.load();
      while (n > p && !peak.compare_exchange_weak(p, n)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      --now;
      return {200, R"({"data":[{"embedding":[1,0]}]})"};
    }
  };
  auto cfg = http_config();
  cfg.max_parallel_requests = 2;
  auto t = std::make_unique<SlowTransport>();
  auto* raw = t.get();
  HttpProvider p(cfg, std::move(t));
  {
    std::vector<std::jthread> workers;
    for (int i = 0; i < 6; ++i) workers.emplace_back([&] { p.embed_text("x"); });
  }
  CHECK(raw->peak.load() <= 2);
  CHECK(p.requests_sent() == 6);
}

TEST_CASE("httplib transport against a local server") {
  httplib::Server server;
  server.Post("/api/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const double n = double(body["input"].get<std::string>().size());
    res.set_content(json{{"data", {{{"embedding", {n, 1.0}}}}}}.dump(), "application/json");
  });
  server.Post("/api/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto cfg = http_config();
  cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/api";
  HttpProvider p(cfg, make_httplib_transport(cfg.endpoint_url), [](double) {});
  CHECK(p.embed_text("abcd").to_std() == std::vector<double>{4.0, 1.0});
  CHECK(kind_of([&] { p.summarize(std::vector<std::string>{"a", "b"}); }) == ProviderErrorKind::Auth);

  server.stop();
  th.join();

  HttpProvider down(cfg, make_httplib_transport(cfg.endpoint_url), [](double) {});
  CHECK(kind_of([&] { down.embed_text("x"); }) == ProviderErrorKind::Transport);
  CHECK(down.requests_sent() == 3);
}

TEST_CASE("templates and provider config") {
  CHECK(render_template("a {x} b {y} {x}", {{"x", "1"}}) == "a 1 b {y} 1");
  CHECK(render_template("{", {}) == "{");
  for (const char* name : {"affordance_proposer.txt", "describe_view.txt", "summarize.txt",
                           "score_instances.txt", "decompose_instruction.txt"}) {
    std::ifstream in(std::string(AFFMEM_PROMPT_DIR) + "/" + name);
    CHECK_MESSAGE(in.good(), name);
  }

  ProviderConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.timeout_s = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ProviderConfig{};
  cfg.backend = Backend::Http;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(backend_from_string("file") == Backend::File);
  CHECK_THROWS_AS(backend_from_string("grpc"), ConfigError);
}
