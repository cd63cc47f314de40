#include "affmem/builder.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "affmem/geometry.hpp"

namespace affmem {

void ClusteringParams::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("clustering beta must lie in [0,1]");
  if (!(d_scale > 0.0)) throw ConfigError("clustering d_scale must be > 0");
  if (!(cut_threshold > 0.0)) throw ConfigError("clustering cut_threshold must be > 0");
  if (min_cluster_size < 1) throw ConfigError("clustering min_cluster_size must be >= 1");
}

std::map<int, ClusteringParams> BuildConfig::default_clustering() {
  ClusteringParams zone;
  zone.cut_threshold = 0.45;
  ClusteringParams area;
  area.cut_threshold = 0.6;
  return {{4, zone}, {5, area}};
}

const ClusteringParams& BuildConfig::params_for(int level) const {
  if (clustering.empty()) throw ConfigError("no clustering parameters configured");
  auto it = clustering.upper_bound(level);
  if (it == clustering.begin()) return it->second;
  return std::prev(it)->second;
}

void BuildConfig::validate() const {
  if (n_levels < 4) throw ConfigError("build.n_levels must be >= 4");
  for (const auto& [level, p] : clustering) {
    if (level < 4) throw ConfigError("clustering parameters apply to levels >= 4");
    p.validate();
  }
  providers.validate();
}

std::string make_node_id(const std::string& env_id, int level, std::size_t ordinal,
                         std::string_view content) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "/L%02d/%08zu-%08llx", level, ordinal,
                static_cast<unsigned long long>(fnv1a64(content) & 0xffffffffULL));
  return env_id + buf;
}

ViewSubtree build_view_node(Provider& provider, const ViewRecord& view) {
  ViewSubtree out;
  const auto masks = provider.segment(view);
  auto proposals = provider.propose_instances(view, masks);
  std::sort(proposals.begin(), proposals.end(),
            [](const auto& a, const auto& b) { return a.mask_id < b.mask_id; });

  MemoryNode& v = out.view;
  v.level = 3;
  v.kind = NodeKind::View;
  v.description = provider.describe_view(view);
  v.text_embedding = Embedding::normalized(provider.embed_text(v.description).values());
  v.visual_embedding =
      Embedding::normalized(provider.embed_image_multimodal(view.image_ref).values());
  v.position = view.pose;
  v.image_ref = view.image_ref;

  for (const auto& p : proposals) {
    MemoryNode inst;
    inst.level = 2;
    inst.kind = NodeKind::Instance;
    inst.description = p.description;
    inst.position = view.pose;
    std::vector<MemoryNode> leaves;
    for (const auto& a : p.affordances) {
      MemoryNode leaf;
      leaf.level = 1;
      leaf.kind = NodeKind::Affordance;
      leaf.description = a.action.name() + " " + p.description;
      leaf.position = view.pose;
      leaf.affordance = AffordanceTriplet{"", a.action, a.score};
      inst.affordances.push_back({"", a.action, a.score});
      leaves.push_back(std::move(leaf));
    }
    out.instances.push_back(std::move(inst));
    out.affordances.push_back(std::move(leaves));
  }
  return out;
}

namespace {

double semantic_term(const Embedding& a, const Embedding& b) {
  if (a == b) return 0.0;
  return std::max(0.0, (1.0 - cosine_similarity(a, b)) / 2.0);
}

double spatial_term(const Position3D& a, const Position3D& b, double d_scale) {
  return std::min(euclidean_distance(a, b) / d_scale, 1.0);
}

}  // namespace

double combined_distance(const MemoryNode& a, const MemoryNode& b, const ClusteringParams& p) {
  if (!a.text_embedding || !b.text_embedding) {
    throw StructureError("combined_distance needs text embeddings on both nodes", {a.id, b.id});
  }
  if (!is_finite(a.position) || !is_finite(b.position)) {
    throw StructureError("combined_distance needs finite positions", {a.id, b.id});
  }
  return p.beta * spatial_term(a.position, b.position, p.d_scale) +
         (1.0 - p.beta) * semantic_term(*a.text_embedding, *b.text_embedding);
}

Eigen::MatrixXd combined_distance_matrix(const std::vector<const MemoryNode*>& nodes,
                                         const ClusteringParams& p) {
  const auto n = static_cast<Eigen::Index>(nodes.size());
  if (n == 0) return {};
  for (const auto* node : nodes) {
    if (!node->text_embedding) {
      throw StructureError("clustering needs text embeddings", {node->id});
    }
  }
  const Eigen::Index dim = nodes.front()->text_embedding->dim();
  Eigen::MatrixXd unit(dim, n);
  Eigen::Matrix3Xd pos(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = nodes[static_cast<std::size_t>(i)]->text_embedding->values();
    if (e.size() != dim) throw DimensionError("clustering: mixed embedding dimensions");
    const double norm = e.norm();
    if (!(norm > 0.0)) throw DegenerateVectorError("clustering: zero-norm embedding");
    unit.col(i) = e / norm;
    pos.col(i) = nodes[static_cast<std::size_t>(i)]->position;
  }
  const Eigen::MatrixXd gram = unit.transpose() * unit;

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& a = *nodes[static_cast<std::size_t>(i)];
      const auto& b = *nodes[static_cast<std::size_t>(j)];
      double sem = 0.0;
      if (!(gram(i, j) > 1.0 - 1e-9 && *a.text_embedding == *b.text_embedding)) {
        sem = std::max(0.0, (1.0 - std::clamp(gram(i, j), -1.0, 1.0)) / 2.0);
      }
      const double v = p.beta * spatial_term(pos.col(i), pos.col(j), p.d_scale) +
                       (1.0 - p.beta) * sem;
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

Partition agglomerate(const Eigen::MatrixXd& distances, const std::vector<std::string>& order_keys,
                      double cut_threshold, int min_cluster_size) {
  const auto n = static_cast<std::size_t>(distances.rows());
  if (n == 0) throw ConfigError("EmptyInput: nothing to cluster");
  if (order_keys.size() != n || distances.cols() != distances.rows()) {
    throw DimensionError("agglomerate: distance matrix and keys disagree in size");
  }

  Eigen::MatrixXd d = distances;
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<std::size_t> rep(n);  // index of the smallest key in each cluster
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    members[i] = {i};
    rep[i] = i;
  }
  auto rep_pair_less = [&](std::size_t a1, std::size_t b1, std::size_t a2, std::size_t b2) {
    const auto& x1 = std::min(order_keys[rep[a1]], order_keys[rep[b1]]);
    const auto& y1 = std::max(order_keys[rep[a1]], order_keys[rep[b1]]);
    const auto& x2 = std::min(order_keys[rep[a2]], order_keys[rep[b2]]);
    const auto& y2 = std::max(order_keys[rep[a2]], order_keys[rep[b2]]);
    return std::tie(x1, y1) < std::tie(x2, y2);
  };
  auto merge = [&](std::size_t a, std::size_t b) {
    const double na = double(members[a].size());
    const double nb = double(members[b].size());
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const double v = (na * d(Eigen::Index(a), Eigen::Index(k)) +
                        nb * d(Eigen::Index(b), Eigen::Index(k))) / (na + nb);
      d(Eigen::Index(a), Eigen::Index(k)) = v;
      d(Eigen::Index(k), Eigen::Index(a)) = v;
    }
    members[a].insert(members[a].end(), members[b].begin(), members[b].end());
    if (order_keys[rep[b]] < order_keys[rep[a]]) rep[a] = rep[b];
    active[b] = false;
    members[b].clear();
  };

  std::size_t n_active = n;
  while (n_active > 1) {
    std::size_t best_a = n, best_b = n;
    double best = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!active[a]) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (!active[b]) continue;
        const double v = d(Eigen::Index(a), Eigen::Index(b));
        if (best_a == n || v < best || (v == best && rep_pair_less(a, b, best_a, best_b))) {
          best = v;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best > cut_threshold) break;
    merge(best_a, best_b);
    --n_active;
  }

  // Fold undersized clusters into their nearest neighbour, smallest first.
  while (min_cluster_size > 1 && n_active > 1) {
    std::size_t small = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (!active[a] || members[a].size() >= std::size_t(min_cluster_size)) continue;
      if (small == n || members[a].size() < members[small].size() ||
          (members[a].size() == members[small].size() &&
           order_keys[rep[a]] < order_keys[rep[small]])) {
        small = a;
      }
    }
    if (small == n) break;
    std::size_t target = n;
    for (std::size_t b = 0; b < n; ++b) {
      if (!active[b] || b == small) continue;
      const double v = d(Eigen::Index(small), Eigen::Index(b));
      if (target == n || v < d(Eigen::Index(small), Eigen::Index(target)) ||
          (v == d(Eigen::Index(small), Eigen::Index(target)) &&
           order_keys[rep[b]] < order_keys[rep[target]])) {
        target = b;
      }
    }
    merge(target, small);
    --n_active;
  }

  Partition out;
  for (std::size_t a = 0; a < n; ++a) {
    if (!active[a]) continue;
    auto m = members[a];
    std::sort(m.begin(), m.end(),
              [&](std::size_t x, std::size_t y) { return order_keys[x] < order_keys[y]; });
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(), [&](const auto& x, const auto& y) {
    return order_keys[x.front()] < order_keys[y.front()];
  });
  return out;
}

std::vector<std::vector<const MemoryNode*>> cluster_level(
    const std::vector<const MemoryNode*>& nodes, const ClusteringParams& p) {
  if (nodes.empty()) throw BuildError("EmptyInput", "cluster_level needs at least one node");
  p.validate();
  const int level = nodes.front()->level;
  std::vector<std::string> keys;
  keys.reserve(nodes.size());
  for (const auto* n : nodes) {
    if (n->level != level) throw StructureError("cluster_level: mixed levels", {n->id});
    keys.push_back(n->id);
  }
  const auto partition =
      agglomerate(combined_distance_matrix(nodes, p), keys, p.cut_threshold, p.min_cluster_size);
  std::vector<std::vector<const MemoryNode*>> out;
  out.reserve(partition.size());
  for (const auto& cluster : partition) {
    auto& group = out.emplace_back();
    for (auto i : cluster) group.push_back(nodes[i]);
  }
  return out;
}

MemoryNode summarize_cluster(Provider& provider, const std::vector<const MemoryNode*>& cluster,
                             int level) {
  if (cluster.empty()) throw BuildError("EmptyInput", "summarize_cluster needs children");
  auto sorted = cluster;
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });

  MemoryNode node;
  node.level = level + 1;
  node.kind = kind_for_level(node.level);
  std::vector<std::string> descriptions;
  Position3D centroid = Position3D::Zero();
  for (const auto* c : sorted) {
    if (c->level != level) throw StructureError("summarize_cluster: child at wrong level", {c->id});
    descriptions.push_back(c->description);
    centroid += c->position;
    node.children.push_back(c->id);
  }
  node.position = centroid / double(sorted.size());
  node.description = provider.summarize(descriptions);
  node.text_embedding = Embedding::normalized(provider.embed_text(node.description).values());
  return node;
}

namespace {

void check_views(const std::vector<ViewRecord>& views) {
  if (views.empty()) throw BuildError("EmptyInput", "no views to build from");
  std::set<std::string> refs;
  std::vector<std::string> bad;
  for (const auto& v : views) {
    if (v.env_id != views.front().env_id) {
      throw BuildError("MixedEnvironments",
                       "views from '" + views.front().env_id + "' and '" + v.env_id + "'");
    }
    if (v.image_ref.empty() || !refs.insert(v.image_ref).second || v.width <= 0 ||
        v.height <= 0 || !is_finite(v.pose)) {
      bad.push_back(v.image_ref);
    }
  }
  if (!bad.empty()) {
    throw BuildError("InvalidView", "duplicate, empty or malformed view records", bad);
  }
}

std::vector<ViewSubtree> build_all_views(Provider& provider, const std::vector<ViewRecord>& views,
                                         int parallelism) {
  std::vector<ViewSubtree> out(views.size());
  std::vector<std::string> errors(views.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < views.size(); i = next++) {
      try {
        out[i] = build_view_node(provider, views[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const auto n_threads =
      std::min<std::size_t>(std::max(1, parallelism), std::max<std::size_t>(1, views.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<std::string> failed;
  std::string detail;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (errors[i].empty()) continue;
    failed.push_back(views[i].image_ref);
    if (detail.empty()) detail = views[i].image_ref + ": " + errors[i];
  }
  if (!failed.empty()) {
    throw BuildError("ViewFailed",
                     std::to_string(failed.size()) + " view(s) failed, first: " + detail, failed);
  }
  return out;
}

}  // namespace

EmbodiedMemory build_memory(std::vector<ViewRecord> views, const BuildConfig& cfg,
                            Provider& provider) {
  check_views(views);
  cfg.validate();
  std::sort(views.begin(), views.end(),
            [](const auto& a, const auto& b) { return a.image_ref < b.image_ref; });
  const std::string env = views.front().env_id;

  auto subtrees = build_all_views(provider, views, cfg.providers.max_parallel_requests);

  std::map<std::string, MemoryNode> nodes;
  std::vector<std::string> current;
  std::size_t n_instances = 0, n_affordances = 0;
  for (std::size_t vi = 0; vi < subtrees.size(); ++vi) {
    auto& st = subtrees[vi];
    st.view.id = make_node_id(env, 3, vi, views[vi].image_ref + "\n" + st.view.description);
    for (std::size_t ii = 0; ii < st.instances.size(); ++ii) {
      auto& inst = st.instances[ii];
      inst.id = make_node_id(env, 2, n_instances++, st.view.id + "\n" + inst.description);
      inst.parent = st.view.id;
      st.view.children.push_back(inst.id);
      for (auto& t : inst.affordances) t.instance_id = inst.id;
      for (auto& leaf : st.affordances[ii]) {
        leaf.id = make_node_id(env, 1, n_affordances++, inst.id + "\n" + leaf.description);
        leaf.parent = inst.id;
        leaf.affordance->instance_id = inst.id;
        inst.children.push_back(leaf.id);
        nodes.emplace(leaf.id, std::move(leaf));
      }
      nodes.emplace(inst.id, std::move(inst));
    }
    current.push_back(st.view.id);
    nodes.emplace(st.view.id, std::move(st.view));
  }

  auto add_region = [&](MemoryNode node, int level, std::size_t ordinal) {
    std::string content = node.description;
    for (const auto& c : node.children) content += "\n" + c;
    node.id = make_node_id(env, level, ordinal, content);
    for (const auto& c : node.children) nodes.at(c).parent = node.id;
    const std::string id = node.id;
    nodes.emplace(id, std::move(node));
    return id;
  };
  auto pointers = [&](const std::vector<std::string>& ids) {
    std::vector<const MemoryNode*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&nodes.at(id));
    return out;
  };

  for (int level = 4; level < cfg.n_levels; ++level) {
    const auto clusters = cluster_level(pointers(current), cfg.params_for(level));
    std::vector<std::string> next;
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      next.push_back(add_region(summarize_cluster(provider, clusters[k], level - 1), level, k));
    }
    current = std::move(next);
  }
  add_region(summarize_cluster(provider, pointers(current), cfg.n_levels - 1), cfg.n_levels, 0);

  std::vector<MemoryNode> flat;
  flat.reserve(nodes.size());
  for (auto& [id, n] : nodes) flat.push_back(std::move(n));
  EmbodiedMemory m(env, cfg.n_levels, cfg.providers.d_t, cfg.providers.d_m, std::move(flat));
  // Dimensions come from the providers, not the config, for non-mock backends.
  if (const auto& views3 = m.level(3); !views3.empty()) {
    const auto& v = m.node(views3.front());
    if (v.text_embedding->dim() != m.d_t() || v.visual_embedding->dim() != m.d_m()) {
      std::vector<MemoryNode> again;
      for (const auto& [id, n] : m.nodes()) again.push_back(n);
      m = EmbodiedMemory(env, cfg.n_levels, v.text_embedding->dim(), v.visual_embedding->dim(),
                         std::move(again));
    }
  }
  if (auto report = validate_memory(m); !report.empty()) {
    throw StructureError("built memory failed validation", describe(report));
  }
  return m;
}

BuildSummary summarize_build(const EmbodiedMemory& m) {
  BuildSummary s;
  s.env_id = m.env_id();
  for (int level = 1; level <= m.n_levels(); ++level) {
    s.nodes_per_level[level] = m.level(level).size();
  }
  s.n_views = m.level(3).size();
  s.n_instances = m.level(2).size();
  s.n_affordances = m.level(1).size();
  return s;
}

}  // namespace affmem
