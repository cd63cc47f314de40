#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "affmem/memory.hpp"
#include "affmem/providers.hpp"

namespace affmem {

enum class Role { TargetObject, Receptacle };
enum class Stage { Fusion, Rerank };

/// What the reranker hands to the relevance scorer: affordance-filtered
/// instance descriptions, or whole-view captions (the captions-only ablation).
enum class RerankSource { Instances, Captions };

const char* to_string(Role r);
const char* to_string(Stage s);
const char* to_string(RerankSource s);
RerankSource rerank_source_from_string(const std::string& s);

/// Pick for the target object, place for the receptacle.
Action required_action(Role r);

struct RetrievalConfig {
  double alpha = 0.5;  // weight of the regional (text) term in fusion
  int k_b = 5;         // beam width per region level
  int k_r = 20;        // fused views entering the reranker
  int k_f = 5;         // relevant instances kept for affordance-score reranking
  bool enable_rerank = true;
  bool enable_asr = true;
  RerankSource rerank_source = RerankSource::Instances;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Query {
  std::string instruction;
  Role role = Role::TargetObject;
  std::string phrase;
  Embedding l_t;  // text space
  Embedding l_m;  // multimodal space
};

/// Embeds `phrase` with both text encoders (normalized).
Query make_query(Provider& provider, std::string instruction, Role role, std::string phrase);

struct ScoredView {
  std::string view_id;
  double score = 0.0;
  double text_similarity = 0.0;
  double visual_similarity = 0.0;
};

struct RankedEntry {
  std::string view_id;
  std::string image_ref;
  double score = 0.0;
  Stage stage = Stage::Fusion;

  bool operator==(const RankedEntry&) const = default;
};

struct RankedList {
  std::string instruction;
  Role role = Role::TargetObject;
  std::string phrase;
  std::vector<RankedEntry> entries;
  std::vector<std::string> fallbacks;
};

/// Beam descent from the top level: at every region level the frontier is
/// scored by cos(l_t, node text) and the k_b best (ties by id) survive;
/// their children form the next frontier. Returns the view ids reached,
/// ascending.
std::vector<std::string> traverse(const EmbodiedMemory& m, const Query& q, int k_b);

/// alpha * cos(l_t, view text) + (1 - alpha) * cos(l_m, view visual), sorted
/// descending with ties by id. Throws EmptyCandidateSet on empty input.
std::vector<ScoredView> fuse(const EmbodiedMemory& m, std::span<const std::string> views,
                             const Query& q, double alpha);

struct FilteredInstance {
  std::string instance_id;
  std::string view_id;
  std::string description;
  double affordance = 0.0;    // best score for the required action
  std::size_t view_rank = 0;  // position of the view in the fused list
};

/// Instances under `top` views that afford `action`, in fused view order.
std::vector<FilteredInstance> prefilter_instances(const EmbodiedMemory& m,
                                                  std::span<const ScoredView> top,
                                                  const Action& action);

/// Affordance-aware reranking of the first k_r fused views. Views holding
/// selected instances move to the front in selection order; the rest of the
/// prefix keeps fusion order and everything past k_r is untouched.
RankedList rerank(const EmbodiedMemory& m, std::span<const ScoredView> fused, const Query& q,
                  const RetrievalConfig& cfg, Provider& provider);

/// Fused order as a ranked list, all entries tagged Fusion.
RankedList fusion_only(const EmbodiedMemory& m, std::span<const ScoredView> fused, const Query& q);

struct RetrievalResult {
  RankedList target;
  RankedList receptacle;
};

struct PhraseOverride {
  std::string target;
  std::string receptacle;
};

/// Full pipeline for both roles. If the instruction cannot be decomposed both
/// roles use the whole instruction and "decomposition_failed" is recorded in
/// each list's fallbacks.
RetrievalResult retrieve(const EmbodiedMemory& m, const std::string& instruction,
                         const RetrievalConfig& cfg, Provider& provider,
                         const std::optional<PhraseOverride>& phrases = std::nullopt);

/// {instruction, role, phrase, entries: [{rank, view_id, image_ref, score, stage}],
///  config_echo, fallbacks}
nlohmann::json to_json(const RankedList& list, const RetrievalConfig& cfg);

}  // namespace affmem
