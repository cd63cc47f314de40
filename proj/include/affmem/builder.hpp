#pragma once

#include <map>
#include <string>
#include <vector>

#include "affmem/memory.hpp"
#include "affmem/providers.hpp"

namespace affmem {

enum class Linkage { Average };

/// Agglomerative clustering parameters for one region level.
struct ClusteringParams {
  double beta = 0.5;           // weight of the spatial term
  double d_scale = 5.0;        // meters; spatial distance saturates here
  double cut_threshold = 0.45; // stop merging above this combined distance
  Linkage linkage = Linkage::Average;
  int min_cluster_size = 1;

  void validate() const;
};

struct BuildConfig {
  int n_levels = 6;  // affordance, instance, view, zone, area, building
  /// Per-level parameters, keyed by the level being produced (4 .. n_levels-1).
  std::map<int, ClusteringParams> clustering = default_clustering();
  ProviderConfig providers;

  /// Parameters for producing `level`; falls back to the highest configured level.
  const ClusteringParams& params_for(int level) const;
  void validate() const;

  static std::map<int, ClusteringParams> default_clustering();
};

/// Deterministic node id: "<env>/L<level>/<ordinal>-<content hash>".
/// Lexicographic order equals (level, ordinal) order within an environment.
std::string make_node_id(const std::string& env_id, int level, std::size_t ordinal,
                         std::string_view content);

/// A view node with its instance (level 2) and affordance (level 1) subtree.
/// Ids are placeholders until `assign_ids`; children reference the local
/// indices below.
struct ViewSubtree {
  MemoryNode view;
  std::vector<MemoryNode> instances;
  std::vector<std::vector<MemoryNode>> affordances;  // per instance
};

/// Runs segmentation, affordance proposal, captioning and both embedders for
/// one view. Embeddings are L2-normalized here. Provider errors propagate.
ViewSubtree build_view_node(Provider& provider, const ViewRecord& view);

/// beta * min(|pa - pb| / d_scale, 1) + (1 - beta) * (1 - cos(ta, tb)) / 2.
double combined_distance(const MemoryNode& a, const MemoryNode& b, const ClusteringParams& p);

/// Pairwise combined distances of `nodes` (symmetric, zero diagonal).
Eigen::MatrixXd combined_distance_matrix(const std::vector<const MemoryNode*>& nodes,
                                         const ClusteringParams& p);

using Partition = std::vector<std::vector<std::size_t>>;  // indices into the input

/// Average-linkage agglomerative clustering over a precomputed distance
/// matrix. `order_keys[i]` is the id of item i; clusters are represented by
/// their smallest key, ties between equally close pairs go to the
/// lexicographically smallest (rep_a, rep_b), and output clusters are sorted
/// by representative with members ascending by key.
Partition agglomerate(const Eigen::MatrixXd& distances, const std::vector<std::string>& order_keys,
                      double cut_threshold, int min_cluster_size = 1);

/// Clusters same-level nodes; returns groups of node pointers.
std::vector<std::vector<const MemoryNode*>> cluster_level(
    const std::vector<const MemoryNode*>& nodes, const ClusteringParams& p);

/// Region node one level above `cluster`: summarized description, its text
/// embedding, and the centroid of the children's positions. The id and
/// parent are left for the caller.
MemoryNode summarize_cluster(Provider& provider, const std::vector<const MemoryNode*>& cluster,
                             int level);

/// Bottom-up construction of the full tree. Views are sorted by image_ref
/// before any id is assigned, so the input order does not matter. All or
/// nothing: a failing view aborts with BuildError listing every failed view.
EmbodiedMemory build_memory(std::vector<ViewRecord> views, const BuildConfig& cfg,
                            Provider& provider);

struct BuildSummary {
  std::string env_id;
  std::size_t n_views = 0;
  std::size_t n_instances = 0;
  std::size_t n_affordances = 0;
  std::map<int, std::size_t> nodes_per_level;
};

BuildSummary summarize_build(const EmbodiedMemory& m);

}  // namespace affmem
