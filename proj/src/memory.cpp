#include "affmem/memory.hpp"

#include <algorithm>
#include <set>
#include <utility>

namespace affmem {

const char* to_string(ProviderErrorKind kind) {
  switch (kind) {
    case ProviderErrorKind::EmptyInput: return "EmptyInput";
    case ProviderErrorKind::MissingPrecomputed: return "MissingPrecomputed";
    case ProviderErrorKind::UnsupportedOperation: return "UnsupportedOperation";
    case ProviderErrorKind::ParseFailure: return "ParseFailure";
    case ProviderErrorKind::ScoreRange: return "ScoreRange";
    case ProviderErrorKind::Timeout: return "Timeout";
    case ProviderErrorKind::Transport: return "Transport";
    case ProviderErrorKind::Auth: return "Auth";
    case ProviderErrorKind::RateLimit: return "RateLimit";
  }
  return "Unknown";
}

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Affordance: return "affordance";
    case NodeKind::Instance: return "instance";
    case NodeKind::View: return "view";
    case NodeKind::Region: return "region";
  }
  return "unknown";
}

Action Action::named(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (name.empty()) throw ConfigError("affordance action name must be non-empty");
  return Action(std::move(name));
}

EmbodiedMemory::EmbodiedMemory(std::string env_id, int n_levels, Eigen::Index d_t,
                               Eigen::Index d_m, std::vector<MemoryNode> nodes)
    : env_id_(std::move(env_id)), n_levels_(n_levels), d_t_(d_t), d_m_(d_m) {
  for (auto& n : nodes) {
    if (n.level < 1 || n.level > n_levels_) {
      throw StructureError("node " + n.id + " has level " + std::to_string(n.level) +
                               " outside [1, " + std::to_string(n_levels_) + "]",
                           {n.id});
    }
    std::string id = n.id;
    int level = n.level;
    auto [it, inserted] = nodes_.emplace(id, std::move(n));
    if (!inserted) throw StructureError("duplicate node id " + id, {id});
    levels_[level].push_back(id);
  }
  for (auto& [lvl, ids] : levels_) std::sort(ids.begin(), ids.end());
}

const MemoryNode* EmbodiedMemory::find(const std::string& id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : &it->second;
}

const MemoryNode& EmbodiedMemory::node(const std::string& id) const {
  if (const auto* n = find(id)) return *n;
  throw StructureError("unknown node id " + id, {id});
}

const std::vector<std::string>& EmbodiedMemory::level(int level) const {
  static const std::vector<std::string> kEmpty;
  auto it = levels_.find(level);
  return it == levels_.end() ? kEmpty : it->second;
}

namespace {

class Checker {
 public:
  explicit Checker(const EmbodiedMemory& m) : m_(m) {}

  ValidationReport run() {
    if (m_.n_levels() < 4) add("", "n-levels", "memory must have at least 4 levels");
    if (m_.level(m_.n_levels()).empty()) add("", "root-missing", "no node at the top level");
    for (const auto& [id, n] : m_.nodes()) check_node(n);
    return std::move(report_);
  }

 private:
  void add(const std::string& id, std::string rule, std::string detail) {
    report_.push_back({id, std::move(rule), std::move(detail)});
  }

  void check_node(const MemoryNode& n) {
    const int top = m_.n_levels();
    if (kind_for_level(n.level) != n.kind) {
      add(n.id, "kind-level", std::string("kind ") + to_string(n.kind) + " at level " +
                                  std::to_string(n.level));
    }
    if (!is_finite(n.position)) add(n.id, "position-finite", "non-finite position");

    check_embeddings(n);
    check_links(n, top);

    const bool is_view = n.kind == NodeKind::View;
    if (is_view != n.image_ref.has_value()) {
      add(n.id, "image-ref", is_view ? "view without image_ref" : "image_ref on non-view");
    }
    if (n.kind != NodeKind::Instance && !n.affordances.empty()) {
      add(n.id, "affordances-kind", "affordance list on non-instance node");
    }
    if (n.kind == NodeKind::Instance) check_instance(n);
    if (n.kind == NodeKind::Affordance) {
      if (!n.affordance) add(n.id, "affordance-payload", "level-1 node without triplet");
      if (!n.children.empty()) add(n.id, "leaf-children", "level-1 node with children");
    } else if (n.affordance) {
      add(n.id, "affordance-payload", "triplet payload on non-affordance node");
    }
  }

  void check_embeddings(const MemoryNode& n) {
    if (n.text_embedding && n.text_embedding->dim() != m_.d_t()) {
      add(n.id, "embedding-dim", "text embedding dim " + std::to_string(n.text_embedding->dim()));
    }
    if (n.visual_embedding && n.visual_embedding->dim() != m_.d_m()) {
      add(n.id, "embedding-dim",
          "visual embedding dim " + std::to_string(n.visual_embedding->dim()));
    }
    if (n.level >= 3 && !n.text_embedding) {
      add(n.id, "text-embedding-missing", "level >= 3 node without text embedding");
    }
    const bool is_view = n.kind == NodeKind::View;
    if (is_view && !n.visual_embedding) {
      add(n.id, "visual-embedding-missing", "view without visual embedding");
    }
    if (!is_view && n.visual_embedding) {
      add(n.id, "visual-embedding-kind", "visual embedding on non-view node");
    }
  }

  void check_links(const MemoryNode& n, int top) {
    if (n.level == top) {
      if (n.parent) add(n.id, "root-parent", "top-level node has a parent");
    } else if (!n.parent) {
      add(n.id, "missing-parent", "non-root node without parent");
    } else if (const auto* p = m_.find(*n.parent); p == nullptr) {
      add(n.id, "dangling-parent", "parent " + *n.parent + " does not exist");
    } else {
      if (p->level != n.level + 1) {
        add(n.id, "level-adjacency", "parent " + p->id + " at level " +
                                         std::to_string(p->level) + ", child at level " +
                                         std::to_string(n.level));
      }
      if (std::find(p->children.begin(), p->children.end(), n.id) == p->children.end()) {
        add(n.id, "link-mismatch", "parent " + p->id + " does not list this node as child");
      }
    }
    std::set<std::string> seen;
    for (const auto& c : n.children) {
      if (!seen.insert(c).second) add(n.id, "duplicate-child", "child " + c + " listed twice");
      const auto* child = m_.find(c);
      if (child == nullptr) {
        add(n.id, "dangling-child", "child " + c + " does not exist");
      } else if (child->parent != n.id) {
        add(n.id, "link-mismatch", "child " + c + " points to a different parent");
      }
    }
  }

  void check_instance(const MemoryNode& n) {
    std::set<std::string> actions;
    for (const auto& t : n.affordances) {
      if (!(t.score >= 0.0 && t.score <= 1.0)) {
        add(n.id, "affordance-score-range",
            t.action.name() + " score " + std::to_string(t.score) + " outside [0,1]");
      }
      if (t.instance_id != n.id) {
        add(n.id, "affordance-instance", "triplet refers to " + t.instance_id);
      }
      if (!actions.insert(t.action.name()).second) {
        add(n.id, "affordance-duplicate", "action " + t.action.name() + " repeated");
      }
    }
    // The triplet list mirrors the level-1 children one-to-one.
    std::vector<AffordanceTriplet> mirrored;
    for (const auto& c : n.children) {
      const auto* child = m_.find(c);
      if (child != nullptr && child->affordance) mirrored.push_back(*child->affordance);
    }
    auto by_action = [](const AffordanceTriplet& a, const AffordanceTriplet& b) {
      return a.action < b.action;
    };
    auto lhs = n.affordances;
    std::sort(lhs.begin(), lhs.end(), by_action);
    std::sort(mirrored.begin(), mirrored.end(), by_action);
    if (lhs != mirrored) {
      add(n.id, "affordance-mirror", "instance triplets disagree with level-1 children");
    }
  }

  const EmbodiedMemory& m_;
  ValidationReport report_;
};

}  // namespace

ValidationReport validate_memory(const EmbodiedMemory& m) { return Checker(m).run(); }

std::vector<std::string> describe(const ValidationReport& report) {
  std::vector<std::string> out;
  out.reserve(report.size());
  for (const auto& v : report) out.push_back(v.rule + " @ " + v.node_id + ": " + v.detail);
  return out;
}

}  // namespace affmem
