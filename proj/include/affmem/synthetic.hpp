#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "affmem/eval.hpp"
#include "affmem/persistence.hpp"

namespace affmem {

/// Knobs for one synthetic environment. Sample kinds:
///   unambiguous       both roles planted once
///   lexical_decoy     the stressed object also sits in other rooms; only the
///                     room in the referring expression separates them
///   visual_decoy      same-room copies share the VLM description; only the
///                     image-space caption matches the queried appearance
///   affordance_tie    two identical target views whose pick scores differ
///   affordance_decoy  near-duplicates ("<object> holder", "<object> lamp")
///                     outrank the positive in fusion but lack the role's action
/// Lexical, visual and affordance decoys alternate the stressed role
/// (target on even, receptacle on odd occurrences).
struct CorpusParams {
  std::string env_id = "env000";
  int n_rooms = 2;
  int views_per_room = 3;
  int objects_per_room = 4;  // background objects; every free view gets at least one
  int n_unambiguous = 1;
  int n_lexical_decoy = 0;
  int n_visual_decoy = 0;
  int n_affordance_tie = 0;
  int n_affordance_decoy = 0;
  int decoys_per_sample = 10;
  bool adversarial_ids = true;  // decoys and low-f twins sort before positives
  double room_spacing = 12.0;   // meters between room centres
  double jitter = 0.75;         // max per-axis offset of a view from its room centre
  int width = 640;
  int height = 480;

  int n_samples() const;
  void validate() const;
};

struct SyntheticCorpus {
  ViewManifest views;
  std::vector<BenchmarkSample> samples;
};

/// Deterministic per (seed, params). Throws ConfigError when rooms or
/// vocabulary cannot host the requested samples.
SyntheticCorpus gen_synthetic_corpus(std::uint64_t seed, const CorpusParams& params);

/// `n_envs` environments built from `per_env` (env_id replaced by
/// "env000", "env001", ...), each with its own derived seed.
SyntheticCorpus gen_multi_env_corpus(std::uint64_t seed, int n_envs, const CorpusParams& per_env);

/// The mixed benchmark: 10 environments of 8 rooms x 16 views, each with
/// two samples of every kind (100 samples).
CorpusParams mixed_benchmark_params();

/// Environment of `n_views` background views plus one unambiguous sample,
/// spread over rooms of 16 views.
CorpusParams large_env_params(int n_views);

}  // namespace affmem
