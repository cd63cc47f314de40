#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "affmem/types.hpp"

namespace affmem {

/// One node of the hierarchy: affordance (1), instance (2), view (3) or
/// region (>= 4).
struct MemoryNode {
  std::string id;
  int level = 0;
  NodeKind kind = NodeKind::Region;
  std::string description;
  std::optional<Embedding> text_embedding;
  std::optional<Embedding> visual_embedding;  // views only
  Position3D position = Position3D::Zero();
  std::optional<std::string> parent;
  std::vector<std::string> children;
  std::optional<std::string> image_ref;        // views only
  std::vector<AffordanceTriplet> affordances;  // instances only (mirror of level-1 children)
  std::optional<AffordanceTriplet> affordance; // level-1 nodes only

  bool operator==(const MemoryNode& o) const {
    return id == o.id && level == o.level && kind == o.kind && description == o.description &&
           text_embedding == o.text_embedding && visual_embedding == o.visual_embedding &&
           position == o.position && parent == o.parent && children == o.children &&
           image_ref == o.image_ref && affordances == o.affordances && affordance == o.affordance;
  }
};

/// Immutable level-1..N tree. Nodes are keyed and iterated in id order.
class EmbodiedMemory {
 public:
  EmbodiedMemory() = default;

  /// Throws StructureError on duplicate ids or levels outside [1, n_levels].
  /// Does not run validate_memory.
  EmbodiedMemory(std::string env_id, int n_levels, Eigen::Index d_t, Eigen::Index d_m,
                 std::vector<MemoryNode> nodes);

  const std::string& env_id() const { return env_id_; }
  int n_levels() const { return n_levels_; }
  Eigen::Index d_t() const { return d_t_; }
  Eigen::Index d_m() const { return d_m_; }

  const std::map<std::string, MemoryNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  const MemoryNode* find(const std::string& id) const;
  /// Throws StructureError when `id` is unknown.
  const MemoryNode& node(const std::string& id) const;

  /// Ids of all nodes at `level`, ascending. Empty for unknown levels.
  const std::vector<std::string>& level(int level) const;

  bool operator==(const EmbodiedMemory& o) const {
    return env_id_ == o.env_id_ && n_levels_ == o.n_levels_ && d_t_ == o.d_t_ &&
           d_m_ == o.d_m_ && nodes_ == o.nodes_;
  }

 private:
  std::string env_id_;
  int n_levels_ = 0;
  Eigen::Index d_t_ = 0;
  Eigen::Index d_m_ = 0;
  std::map<std::string, MemoryNode> nodes_;
  std::map<int, std::vector<std::string>> levels_;
};

struct Violation {
  std::string node_id;
  std::string rule;
  std::string detail;
};

using ValidationReport = std::vector<Violation>;

/// Checks every node and tree invariant. An empty report means valid.
ValidationReport validate_memory(const EmbodiedMemory& m);

std::vector<std::string> describe(const ValidationReport& report);

}  // namespace affmem
