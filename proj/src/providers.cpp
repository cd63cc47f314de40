#include <algorithm>
#include <cctype>
#include <set>

#include "affmem/providers.hpp"

namespace affmem {

const char* to_string(Backend b) {
  switch (b) {
    case Backend::Mock: return "mock";
    case Backend::File: return "file";
    case Backend::Http: return "http";
  }
  return "mock";
}

Backend backend_from_string(const std::string& s) {
  if (s == "mock") return Backend::Mock;
  if (s == "file") return Backend::File;
  if (s == "http") return Backend::Http;
  throw ConfigError("unknown provider backend '" + s + "' (expected mock, file or http)");
}

void ProviderConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ConfigError("providers.timeout must be > 0");
  if (max_retries < 0) throw ConfigError("providers.max_retries must be >= 0");
  if (max_parallel_requests < 1) throw ConfigError("providers.max_parallel_requests must be >= 1");
  if (d_t < 1 || d_m < 1) throw ConfigError("embedding dimensions must be positive");
  if (backend == Backend::Http && endpoint_url.empty()) {
    throw ConfigError("providers.endpoint_url is required for the http backend");
  }
  if (backend == Backend::File && precomputed_path.empty()) {
    throw ConfigError("providers.precomputed_path is required for the file backend");
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string name(tmpl.substr(i + 1, close - i - 1));
        if (auto it = values.find(name); it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool blank(std::string_view s) { return trim(s).empty(); }

void require_text(std::string_view text, const char* op) {
  if (blank(text)) throw ProviderError(ProviderErrorKind::EmptyInput, std::string(op) + ": empty text");
}

void check_embedding(const Embedding& e, const char* op) {
  if (e.empty() || !(e.values().norm() > 0.0)) {
    throw ProviderError(ProviderErrorKind::ParseFailure, std::string(op) + ": degenerate embedding");
  }
}

void check_score(double s, const std::string& what) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw ProviderError(ProviderErrorKind::ScoreRange,
                        what + " score " + std::to_string(s) + " outside [0,1]");
  }
}

// Leading words dropped before looking for the target/receptacle split.
const std::set<std::string>& courtesy_words() {
  static const std::set<std::string> w = {"please", "kindly", "could", "can", "would",
                                          "you", "go", "and", "then"};
  return w;
}

const std::set<std::string>& carry_verbs() {
  static const std::set<std::string> w = {"deliver", "bring", "take",  "move",  "put",
                                          "place",   "carry", "fetch", "get",   "grab",
                                          "pick",    "transfer", "set", "relocate", "return"};
  return w;
}

}  // namespace

DecomposedInstruction rule_based_decompose(std::string_view instruction) {
  std::string text = trim(instruction);
  while (!text.empty() && std::string_view(".!?;,").find(text.back()) != std::string_view::npos) {
    text.pop_back();
  }
  text = trim(text);

  // Strip leading courtesy words and the carry verb ("pick up" counts as one).
  bool saw_verb = false;
  for (;;) {
    const auto sp = text.find(' ');
    if (sp == std::string::npos) break;
    const std::string head = lower(text.substr(0, sp));
    if (carry_verbs().count(head)) {
      saw_verb = true;
      text = trim(text.substr(sp + 1));
      if (head == "pick" && lower(text.substr(0, 3)) == "up ") text = trim(text.substr(3));
      break;
    }
    if (!courtesy_words().count(head)) break;
    text = trim(text.substr(sp + 1));
  }

  const std::string lc = lower(text);
  std::size_t split_at = std::string::npos, rest_at = std::string::npos;

  // "... and place it on the table": the follow-up placement clause wins.
  static const std::vector<std::string> kPlaceVerbs = {"place", "put", "set", "leave", "move",
                                                       "bring", "deliver", "carry", "drop"};
  static const std::vector<std::string> kPronouns = {"it", "them"};
  static const std::vector<std::string> kPreps = {"on top of", "onto", "on", "into", "in",
                                                  "to", "at", "inside", "next to", "beside"};
  for (std::size_t pos = lc.find(" and "); pos != std::string::npos && split_at == std::string::npos;
       pos = lc.find(" and ", pos + 1)) {
    for (const auto& v : kPlaceVerbs) {
      for (const auto& pr : kPronouns) {
        for (const auto& prep : kPreps) {
          const std::string clause = " and " + v + " " + pr + " " + prep + " ";
          if (lc.compare(pos, clause.size(), clause) == 0) {
            split_at = pos;
            rest_at = pos + clause.size();
            break;
          }
        }
        if (split_at != std::string::npos) break;
      }
      if (split_at != std::string::npos) break;
    }
  }

  if (split_at == std::string::npos) {
    for (const std::vector<std::string>& group :
         {std::vector<std::string>{" onto ", " to ", " into "}, std::vector<std::string>{" on "}}) {
      std::size_t best = std::string::npos, len = 0;
      for (const auto& p : group) {
        const auto at = lc.find(p);
        if (at != std::string::npos && at < best) {
          best = at;
          len = p.size();
        }
      }
      if (best != std::string::npos) {
        split_at = best;
        rest_at = best + len;
        break;
      }
    }
  }

  if (split_at == std::string::npos || (!saw_verb && rest_at == std::string::npos)) {
    throw DecompositionError("no target/receptacle split in '" + std::string(instruction) + "'");
  }
  DecomposedInstruction out{trim(text.substr(0, split_at)), trim(text.substr(rest_at))};
  if (out.target.empty() || out.receptacle.empty()) {
    throw DecompositionError("empty target or receptacle in '" + std::string(instruction) + "'");
  }
  return out;
}

Embedding Provider::embed_text(std::string_view text) {
  require_text(text, "embed_text");
  auto e = do_embed_text(text);
  check_embedding(e, "embed_text");
  return e;
}

Embedding Provider::embed_query_multimodal(std::string_view text) {
  require_text(text, "embed_query_multimodal");
  auto e = do_embed_query_multimodal(text);
  check_embedding(e, "embed_query_multimodal");
  return e;
}

Embedding Provider::embed_image_multimodal(const std::string& image_ref) {
  require_text(image_ref, "embed_image_multimodal");
  auto e = do_embed_image_multimodal(image_ref);
  check_embedding(e, "embed_image_multimodal");
  return e;
}

std::vector<SegmentMask> Provider::segment(const ViewRecord& view) {
  require_text(view.image_ref, "segment");
  auto masks = do_segment(view);
  std::set<int> ids;
  for (const auto& m : masks) {
    if (!ids.insert(m.mask_id).second) {
      throw ProviderError(ProviderErrorKind::ParseFailure,
                          "segment: duplicate mask id " + std::to_string(m.mask_id));
    }
    const bool inside = m.x >= 0 && m.y >= 0 && m.w >= 0 && m.h >= 0 &&
                        m.x + m.w <= view.width && m.y + m.h <= view.height;
    if (!inside) {
      throw ProviderError(ProviderErrorKind::ParseFailure,
                          "segment: mask " + std::to_string(m.mask_id) + " outside the view");
    }
  }
  return masks;
}

std::vector<InstanceProposal> Provider::propose_instances(const ViewRecord& view,
                                                          std::span<const SegmentMask> masks) {
  auto proposals = do_propose_instances(view, masks);
  std::set<int> known, seen;
  for (const auto& m : masks) known.insert(m.mask_id);
  for (const auto& p : proposals) {
    const std::string where = "propose_instances: mask " + std::to_string(p.mask_id);
    if (!known.count(p.mask_id)) {
      throw ProviderError(ProviderErrorKind::ParseFailure, where + " was not segmented");
    }
    if (!seen.insert(p.mask_id).second) {
      throw ProviderError(ProviderErrorKind::ParseFailure, where + " proposed twice");
    }
    if (blank(p.description)) {
      throw ProviderError(ProviderErrorKind::ParseFailure, where + " has an empty description");
    }
    std::set<std::string> actions;
    for (const auto& a : p.affordances) {
      check_score(a.score, where + " " + a.action.name());
      if (!actions.insert(a.action.name()).second) {
        throw ProviderError(ProviderErrorKind::ParseFailure,
                            where + " repeats action " + a.action.name());
      }
    }
  }
  return proposals;
}

std::string Provider::describe_view(const ViewRecord& view) {
  require_text(view.image_ref, "describe_view");
  auto d = do_describe_view(view);
  if (blank(d)) throw ProviderError(ProviderErrorKind::ParseFailure, "describe_view: empty output");
  return d;
}

std::string Provider::summarize(std::span<const std::string> descriptions) {
  if (descriptions.empty()) {
    throw ProviderError(ProviderErrorKind::EmptyInput, "summarize: no descriptions");
  }
  auto s = do_summarize(descriptions);
  if (blank(s)) throw ProviderError(ProviderErrorKind::ParseFailure, "summarize: empty output");
  return s;
}

std::vector<InstanceScore> Provider::score_instances(
    std::string_view phrase, std::span<const InstanceCandidate> candidates) {
  require_text(phrase, "score_instances");
  if (candidates.empty()) {
    throw ProviderError(ProviderErrorKind::EmptyInput, "score_instances: no candidates");
  }
  auto scores = do_score_instances(phrase, candidates);
  if (scores.size() != candidates.size()) {
    throw ProviderError(ProviderErrorKind::ParseFailure,
                        "score_instances: expected " + std::to_string(candidates.size()) +
                            " scores, got " + std::to_string(scores.size()));
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].instance_id != candidates[i].instance_id) {
      throw ProviderError(ProviderErrorKind::ParseFailure,
                          "score_instances: unexpected id " + scores[i].instance_id);
    }
    check_score(scores[i].relevance, "relevance of " + scores[i].instance_id);
  }
  return scores;
}

DecomposedInstruction Provider::decompose_instruction(std::string_view instruction) {
  require_text(instruction, "decompose_instruction");
  auto d = do_decompose_instruction(instruction);
  if (blank(d.target) || blank(d.receptacle)) {
    throw DecompositionError("empty target or receptacle phrase");
  }
  return d;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg, SyntheticCatalog catalog) {
  cfg.validate();
  switch (cfg.backend) {
    case Backend::Mock: return std::make_unique<MockProvider>(cfg, std::move(catalog));
    case Backend::File: return std::make_unique<FileProvider>(cfg.precomputed_path);
    case Backend::Http:
      return std::make_unique<HttpProvider>(cfg, make_httplib_transport(cfg.endpoint_url));
  }
  throw ConfigError("unknown backend");
}

}  // namespace affmem
