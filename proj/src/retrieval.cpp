#include "affmem/retrieval.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "affmem/geometry.hpp"

namespace affmem {

const char* to_string(Role r) {
  return r == Role::TargetObject ? "target_object" : "receptacle";
}

const char* to_string(Stage s) { return s == Stage::Fusion ? "fusion" : "rerank"; }

const char* to_string(RerankSource s) {
  return s == RerankSource::Instances ? "instances" : "captions";
}

RerankSource rerank_source_from_string(const std::string& s) {
  if (s == "instances") return RerankSource::Instances;
  if (s == "captions") return RerankSource::Captions;
  throw ConfigError("unknown rerank source '" + s + "' (expected instances or captions)");
}

Action required_action(Role r) {
  return r == Role::TargetObject ? Action::pick() : Action::place();
}

void RetrievalConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("retrieval.alpha must lie in [0,1]");
  if (k_b < 1) throw ConfigError("retrieval.k_b must be >= 1");
  if (k_r < 1) throw ConfigError("retrieval.k_r must be >= 1");
  if (k_f < 1) throw ConfigError("retrieval.k_f must be >= 1");
}

nlohmann::json RetrievalConfig::to_json() const {
  return {{"alpha", alpha},
          {"k_b", k_b},
          {"k_r", k_r},
          {"k_f", k_f},
          {"enable_rerank", enable_rerank},
          {"enable_asr", enable_asr},
          {"rerank_source", to_string(rerank_source)}};
}

Query make_query(Provider& provider, std::string instruction, Role role, std::string phrase) {
  Query q;
  q.l_t = Embedding::normalized(provider.embed_text(phrase).values());
  q.l_m = Embedding::normalized(provider.embed_query_multimodal(phrase).values());
  q.instruction = std::move(instruction);
  q.role = role;
  q.phrase = std::move(phrase);
  return q;
}

namespace {

struct Scored {
  double score;
  const std::string* id;
};

bool by_score_then_id(const Scored& a, const Scored& b) {
  if (a.score != b.score) return a.score > b.score;
  return *a.id < *b.id;
}

const Embedding& text_of(const MemoryNode& n) {
  if (!n.text_embedding) throw StructureError("node has no text embedding", {n.id});
  return *n.text_embedding;
}

}  // namespace

std::vector<std::string> traverse(const EmbodiedMemory& m, const Query& q, int k_b) {
  if (k_b < 1) throw ConfigError("k_b must be >= 1");
  std::vector<std::string> frontier = m.level(m.n_levels());
  for (int level = m.n_levels(); level >= 4; --level) {
    std::vector<Scored> scored;
    scored.reserve(frontier.size());
    for (const auto& id : frontier) {
      scored.push_back({unit_similarity(q.l_t, text_of(m.node(id))), &id});
    }
    const auto keep = std::min<std::size_t>(scored.size(), std::size_t(k_b));
    std::partial_sort(scored.begin(), scored.begin() + std::ptrdiff_t(keep), scored.end(),
                      by_score_then_id);
    std::set<std::string> next;
    for (std::size_t i = 0; i < keep; ++i) {
      for (const auto& c : m.node(*scored[i].id).children) next.insert(c);
    }
    frontier.assign(next.begin(), next.end());
  }
  return frontier;
}

std::vector<ScoredView> fuse(const EmbodiedMemory& m, std::span<const std::string> views,
                             const Query& q, double alpha) {
  if (views.empty()) throw EmptyCandidateSet("fuse: no candidate views");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
  std::vector<ScoredView> out;
  out.reserve(views.size());
  for (const auto& id : views) {
    const auto& n = m.node(id);
    if (n.kind != NodeKind::View || !n.visual_embedding) {
      throw StructureError("fuse: " + id + " is not a view node", {id});
    }
    ScoredView s;
    s.view_id = id;
    s.text_similarity = unit_similarity(q.l_t, text_of(n));
    s.visual_similarity = unit_similarity(q.l_m, *n.visual_embedding);
    s.score = alpha * s.text_similarity + (1.0 - alpha) * s.visual_similarity;
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const ScoredView& a, const ScoredView& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.view_id < b.view_id;
  });
  return out;
}

std::vector<FilteredInstance> prefilter_instances(const EmbodiedMemory& m,
                                                  std::span<const ScoredView> top,
                                                  const Action& action) {
  std::vector<FilteredInstance> out;
  for (std::size_t rank = 0; rank < top.size(); ++rank) {
    const auto& view = m.node(top[rank].view_id);
    for (const auto& child : view.children) {
      const auto& inst = m.node(child);
      if (inst.kind != NodeKind::Instance) continue;
      std::optional<double> best;
      for (const auto& t : inst.affordances) {
        if (t.action == action && (!best || t.score > *best)) best = t.score;
      }
      if (best) out.push_back({inst.id, view.id, inst.description, *best, rank});
    }
  }
  return out;
}

RankedList fusion_only(const EmbodiedMemory& m, std::span<const ScoredView> fused, const Query& q) {
  RankedList out;
  out.instruction = q.instruction;
  out.role = q.role;
  out.phrase = q.phrase;
  out.entries.reserve(fused.size());
  for (const auto& s : fused) {
    out.entries.push_back({s.view_id, *m.node(s.view_id).image_ref, s.score, Stage::Fusion});
  }
  return out;
}

RankedList rerank(const EmbodiedMemory& m, std::span<const ScoredView> fused, const Query& q,
                  const RetrievalConfig& cfg, Provider& provider) {
  if (fused.empty()) throw EmptyCandidateSet("rerank: empty fused list");
  RankedList out = fusion_only(m, fused, q);
  if (!cfg.enable_rerank) return out;

  const auto prefix = std::min<std::size_t>(fused.size(), std::size_t(cfg.k_r));
  const auto top = fused.first(prefix);

  std::vector<FilteredInstance> candidates;
  if (cfg.rerank_source == RerankSource::Instances) {
    candidates = prefilter_instances(m, top, required_action(q.role));
  } else {
    for (std::size_t rank = 0; rank < top.size(); ++rank) {
      const auto& view = m.node(top[rank].view_id);
      candidates.push_back({view.id, view.id, view.description, 0.0, rank});
    }
  }
  if (candidates.empty()) {
    out.fallbacks.push_back("empty_prefilter");
    return out;
  }

  std::vector<InstanceCandidate> request;
  request.reserve(candidates.size());
  for (const auto& c : candidates) request.push_back({c.instance_id, c.description});
  const auto scores = provider.score_instances(q.phrase, request);

  struct Ranked {
    const FilteredInstance* inst;
    double relevance;
  };
  std::vector<Ranked> relevant;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (scores[i].relevance > 0.0) relevant.push_back({&candidates[i], scores[i].relevance});
  }
  if (relevant.empty()) {
    out.fallbacks.push_back("no_relevant_instance");
    return out;
  }

  std::sort(relevant.begin(), relevant.end(), [](const Ranked& a, const Ranked& b) {
    if (a.relevance != b.relevance) return a.relevance > b.relevance;
    if (a.inst->view_rank != b.inst->view_rank) return a.inst->view_rank < b.inst->view_rank;
    return a.inst->instance_id < b.inst->instance_id;
  });
  relevant.resize(std::min<std::size_t>(relevant.size(), std::size_t(cfg.k_f)));

  const bool asr = cfg.enable_asr && cfg.rerank_source == RerankSource::Instances;
  if (asr) {
    std::sort(relevant.begin(), relevant.end(), [](const Ranked& a, const Ranked& b) {
      if (a.inst->affordance != b.inst->affordance) return a.inst->affordance > b.inst->affordance;
      if (a.relevance != b.relevance) return a.relevance > b.relevance;
      if (a.inst->view_rank != b.inst->view_rank) return a.inst->view_rank < b.inst->view_rank;
      return a.inst->instance_id < b.inst->instance_id;
    });
  }

  std::vector<RankedEntry> entries;
  entries.reserve(fused.size());
  std::unordered_set<std::string> placed;
  for (const auto& r : relevant) {
    const auto& vid = r.inst->view_id;
    if (!placed.insert(vid).second) continue;
    entries.push_back({vid, *m.node(vid).image_ref, asr ? r.inst->affordance : r.relevance,
                       Stage::Rerank});
  }
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    if (i < prefix && placed.count(out.entries[i].view_id)) continue;
    entries.push_back(out.entries[i]);
  }
  out.entries = std::move(entries);
  return out;
}

RetrievalResult retrieve(const EmbodiedMemory& m, const std::string& instruction,
                         const RetrievalConfig& cfg, Provider& provider,
                         const std::optional<PhraseOverride>& phrases) {
  cfg.validate();
  std::vector<std::string> fallbacks;
  DecomposedInstruction parts;
  if (phrases) {
    parts = {phrases->target, phrases->receptacle};
  } else {
    try {
      parts = provider.decompose_instruction(instruction);
    } catch (const DecompositionError&) {
      parts = {instruction, instruction};
      fallbacks.push_back("decomposition_failed");
    }
  }

  auto run = [&](Role role, const std::string& phrase) {
    const Query q = make_query(provider, instruction, role, phrase);
    const auto views = traverse(m, q, cfg.k_b);
    const auto fused = fuse(m, views, q, cfg.alpha);
    auto list = rerank(m, fused, q, cfg, provider);
    list.fallbacks.insert(list.fallbacks.begin(), fallbacks.begin(), fallbacks.end());
    return list;
  };
  return {run(Role::TargetObject, parts.target), run(Role::Receptacle, parts.receptacle)};
}

nlohmann::json to_json(const RankedList& list, const RetrievalConfig& cfg) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& e = list.entries[i];
    entries.push_back({{"rank", i + 1},
                       {"view_id", e.view_id},
                       {"image_ref", e.image_ref},
                       {"score", e.score},
                       {"stage", to_string(e.stage)}});
  }
  return {{"instruction", list.instruction},
          {"role", to_string(list.role)},
          {"phrase", list.phrase},
          {"entries", std::move(entries)},
          {"config_echo", cfg.to_json()},
          {"fallbacks", list.fallbacks}};
}

}  // namespace affmem
