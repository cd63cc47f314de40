// Acceptance suite: one PASS/FAIL line per criterion, Mock backend only.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "affmem/eval.hpp"
#include "affmem/synthetic.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace affmem;
using namespace affmem::testing;

namespace {

// Pinned tolerances and budgets.
constexpr double kFusionTol = 1e-12;
constexpr double kTieAsrOnMin = 1.0;    // preferred view first with ASR
constexpr double kTieAsrOffMax = 0.6;   // ... and at most this often without
constexpr int kTieSamplesMin = 40;
constexpr double kTieGapMin = 0.3;
constexpr double kLatencyBudgetMs = 100.0;
constexpr Eigen::Index kDim = 128;
constexpr std::uint64_t kMixedSeed = 7;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

MemoryMap build_all(const SyntheticCorpus& c, Eigen::Index dim = kDim) {
  MemoryMap out;
  BuildConfig cfg;
  cfg.providers = mock_config(dim);
  MockProvider provider(cfg.providers, c.views.synthetic);
  for (const auto& [env, views] : split_by_env(c.views.views)) {
    out.emplace(env, build_memory(views, cfg, provider));
  }
  return out;
}

std::vector<std::string> ids(const RankedList& l) {
  std::vector<std::string> out;
  for (const auto& e : l.entries) out.push_back(e.view_id);
  return out;
}

std::vector<std::string> ids(const std::vector<ScoredView>& l) {
  std::vector<std::string> out;
  for (const auto& e : l) out.push_back(e.view_id);
  return out;
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index dim) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(dim);
  for (auto& x : v) x = g(rng);
  return v;
}

MemoryNode view_node(const std::string& id, const Eigen::VectorXd& text,
                     const Eigen::VectorXd& visual) {
  MemoryNode v;
  v.id = id;
  v.level = 3;
  v.kind = NodeKind::View;
  v.description = id;
  v.text_embedding = Embedding::normalized(text);
  v.visual_embedding = Embedding::normalized(visual);
  v.image_ref = id;
  return v;
}

std::string view_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "v%03d", i);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  std::size_t lists = 0;
  for (int s = 0; s < 50; ++s) {
    CorpusParams p;
    p.env_id = "oracle";
    p.n_rooms = 2 + s % 3;
    p.views_per_room = 6 + s % 6;
    // One stress kind per corpus in rotation; the smallest rooms cannot hold all four.
    p.n_unambiguous = 1;
    p.n_lexical_decoy = s % 4 == 0;
    p.n_visual_decoy = s % 4 == 1;
    p.n_affordance_tie = s % 4 == 2;
    p.n_affordance_decoy = s % 4 == 3;
    p.decoys_per_sample = 2;
    const auto corpus = gen_synthetic_corpus(std::uint64_t(1000 + s), p);
    expect(corpus.views.views.size() <= 60, "corpus exceeds 60 views");
    const auto m = build_all(corpus, 64).at("oracle");
    MockProvider provider(mock_config(64));

    std::size_t width = 0;
    for (int level = 4; level <= m.n_levels(); ++level) {
      width = std::max(width, m.level(level).size());
    }
    const double alpha = double(s % 11) / 10.0;
    for (const auto& sample : corpus.samples) {
      const auto parts = provider.decompose_instruction(sample.instruction);
      for (const auto& [role, phrase] : {std::pair{Role::TargetObject, parts.target},
                                         std::pair{Role::Receptacle, parts.receptacle}}) {
        const auto q = make_query(provider, sample.instruction, role, phrase);
        RetrievalConfig cfg;
        cfg.alpha = alpha;
        cfg.k_b = int(width);
        cfg.enable_rerank = false;
        const auto fused = fuse(m, traverse(m, q, cfg.k_b), q, cfg.alpha);
        const auto got = ids(rerank(m, fused, q, cfg, provider));

        // Flat scoring of every view, straight from the formula.
        std::vector<std::pair<double, std::string>> flat;
        for (const auto& id : m.level(3)) {
          const auto& n = m.node(id);
          const double s1 = q.l_t.values().dot(n.text_embedding->values());
          const double s2 = q.l_m.values().dot(n.visual_embedding->values());
          flat.emplace_back(alpha * s1 + (1.0 - alpha) * s2, id);
        }
        std::sort(flat.begin(), flat.end(), [](const auto& a, const auto& b) {
          return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::vector<std::string> want;
        for (const auto& f : flat) want.push_back(f.second);
        expect(got == want, "ranking differs from flat scoring (corpus " + std::to_string(s) + ")");
        ++lists;
      }
    }
  }
  return {true, std::to_string(lists) + " ranked lists identical"};
}

Outcome fusion_formula() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t pairs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index dim = 16;
    std::vector<MemoryNode> nodes;
    std::vector<Eigen::VectorXd> raw_t, raw_v;
    for (int i = 0; i < 10; ++i) {
      raw_t.push_back(random_vector(rng, dim));
      raw_v.push_back(random_vector(rng, dim));
      nodes.push_back(view_node(view_id(i), raw_t.back(), raw_v.back()));
    }
    const EmbodiedMemory m("fusion", 4, dim, dim, nodes);
    const Eigen::VectorXd qt = random_vector(rng, dim), qm = random_vector(rng, dim);
    Query q;
    q.l_t = Embedding::normalized(qt);
    q.l_m = Embedding::normalized(qm);
    const double alpha = trial == 0 ? 0.0 : trial == 1 ? 1.0 : u(rng);

    const auto fused = fuse(m, m.level(3), q, alpha);
    for (const auto& s : fused) {
      const auto i = std::size_t(std::stoi(s.view_id.substr(1)));
      const double s1 = qt.dot(raw_t[i]) / (qt.norm() * raw_t[i].norm());
      const double s2 = qm.dot(raw_v[i]) / (qm.norm() * raw_v[i].norm());
      worst = std::max(worst, std::abs(s.score - (alpha * s1 + (1.0 - alpha) * s2)));
      ++pairs;
    }

    // Each extreme ignores the other space entirely.
    for (const double extreme : {0.0, 1.0}) {
      const auto before = ids(fuse(m, m.level(3), q, extreme));
      auto perturbed = nodes;
      for (auto& n : perturbed) {
        if (extreme == 1.0) {
          n.visual_embedding = Embedding::normalized(random_vector(rng, dim));
        } else {
          n.text_embedding = Embedding::normalized(random_vector(rng, dim));
        }
      }
      const EmbodiedMemory pm("fusion", 4, dim, dim, perturbed);
      expect(ids(fuse(pm, pm.level(3), q, extreme)) == before,
             "alpha=" + std::to_string(extreme) + " ordering depends on the other space");
    }
  }
  expect(worst <= kFusionTol, "max deviation " + std::to_string(worst));
  std::ostringstream d;
  d << pairs << " pairs, max |err| " << worst;
  return {true, d.str()};
}

Outcome rerank_contract() {
  std::mt19937_64 rng(5);
  const std::vector<std::string> vocab = {"green cup", "red mug",   "blue plate",
                                          "wooden table", "green bowl", "red table"};
  MockProvider provider(mock_config(8));
  std::size_t checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n_views = 1 + int(rng() % 30);
    std::vector<MemoryNode> nodes, pick_only;
    for (int i = 0; i < n_views; ++i) {
      auto v = view_node(view_id(i), random_vector(rng, 8), random_vector(rng, 8));
      const int n_inst = int(rng() % 4);
      for (int k = 0; k < n_inst; ++k) {
        MemoryNode inst;
        inst.id = v.id + "/i" + std::to_string(k);
        inst.level = 2;
        inst.kind = NodeKind::Instance;
        inst.description = vocab[rng() % vocab.size()];
        inst.parent = v.id;
        const Action a = rng() % 2 ? Action::pick() : Action::place();
        inst.affordances.push_back({inst.id, a, double(rng() % 1000) / 1000.0});
        v.children.push_back(inst.id);
        nodes.push_back(inst);
        inst.affordances[0].action = Action::pick();
        pick_only.push_back(inst);
      }
      nodes.push_back(v);
      pick_only.push_back(v);
    }
    const EmbodiedMemory m("rerank", 4, 8, 8, nodes);
    const EmbodiedMemory mp("rerank", 4, 8, 8, pick_only);

    RetrievalConfig cfg;
    cfg.k_r = 1 + int(rng() % 35);
    cfg.k_f = 1 + int(rng() % 8);
    cfg.enable_asr = rng() % 2;
    cfg.rerank_source = rng() % 4 ? RerankSource::Instances : RerankSource::Captions;
    Query q;
    q.phrase = vocab[rng() % vocab.size()];
    q.role = rng() % 2 ? Role::TargetObject : Role::Receptacle;
    q.l_t = Embedding::normalized(random_vector(rng, 8));
    q.l_m = Embedding::normalized(random_vector(rng, 8));

    const auto fused = fuse(m, m.level(3), q, 0.5);
    const auto out = ids(rerank(m, fused, q, cfg, provider));
    const auto in = ids(fused);
    expect(std::is_permutation(out.begin(), out.end(), in.begin(), in.end()),
           "output is not a permutation (trial " + std::to_string(trial) + ")");
    for (std::size_t i = std::size_t(cfg.k_r); i < in.size(); ++i) {
      expect(out[i] == in[i], "position beyond k_r moved (trial " + std::to_string(trial) + ")");
    }

    // Nothing affords placing: the prefilter is empty and fusion order stands.
    cfg.rerank_source = RerankSource::Instances;
    q.role = Role::Receptacle;
    const auto fused_p = fuse(mp, mp.level(3), q, 0.5);
    const auto empty = rerank(mp, fused_p, q, cfg, provider);
    expect(ids(empty) == ids(fused_p), "empty prefilter changed the order");
    expect(empty.fallbacks == std::vector<std::string>{"empty_prefilter"}, "missing fallback tag");
    ++checked;
  }
  return {true, std::to_string(checked) + " fixtures"};
}

Outcome asr_ties() {
  CorpusParams p;
  p.n_rooms = 4;
  p.views_per_room = 8;
  p.n_unambiguous = 0;
  p.n_affordance_tie = 4;
  const auto corpus = gen_multi_env_corpus(11, 10, p);
  const auto memories = build_all(corpus);
  MockProvider provider(mock_config(kDim));

  int n = 0, first_on = 0, first_off = 0;
  for (const auto& s : corpus.samples) {
    if (s.kind != "affordance_tie") continue;
    ++n;
    // Fixture checks: identical descriptions, f gap at least kTieGapMin.
    std::vector<const SyntheticView*> twins;
    for (const auto& r : s.positives_target) twins.push_back(&corpus.views.synthetic.at(r));
    expect(twins.size() == 2, "tie sample without two positives");
    double f_pref = -1, f_other = -1;
    for (const auto& r : s.positives_target) {
      double f = -1;
      for (const auto& pl : corpus.views.synthetic.at(r).plantings) {
        if (pl.action.is_pick()) f = std::max(f, pl.score);
      }
      (r == s.preferred_target ? f_pref : f_other) = f;
    }
    expect(f_pref - f_other >= kTieGapMin, "tie gap below " + std::to_string(kTieGapMin));
    expect(twins[0]->caption == twins[1]->caption, "tie views differ in caption");

    for (const bool asr : {true, false}) {
      RetrievalConfig cfg;
      cfg.enable_asr = asr;
      const auto r = retrieve(memories.at(s.env_id), s.instruction, cfg, provider, s.phrases);
      const bool first = !r.target.entries.empty() &&
                         r.target.entries.front().image_ref == s.preferred_target;
      (asr ? first_on : first_off) += first;
    }
  }
  expect(n >= kTieSamplesMin, "only " + std::to_string(n) + " tie samples");
  const double on = double(first_on) / n, off = double(first_off) / n;
  std::ostringstream d;
  d << n << " samples, preferred first: ASR on " << 100 * on << "%, off " << 100 * off << "%";
  return {on >= kTieAsrOnMin && off <= kTieAsrOffMax, d.str()};
}

struct Mixed {
  SyntheticCorpus corpus;
  MemoryMap memories;
};

const Mixed& mixed() {
  static const Mixed m = [] {
    Mixed x;
    x.corpus = gen_multi_env_corpus(kMixedSeed, 10, mixed_benchmark_params());
    x.memories = build_all(x.corpus);
    return x;
  }();
  return m;
}

std::vector<EvalReport>& all_reports() {
  static std::vector<EvalReport> r;
  return r;
}

Outcome ablation_order() {
  const auto& mx = mixed();
  expect(mx.corpus.samples.size() == 100, "mixed benchmark needs 100 samples");
  MockProvider provider(mock_config(kDim));
  std::map<std::string, double> r10;
  for (const auto& v : ablation_variants(RetrievalConfig{})) {
    auto rep = run_benchmark(mx.corpus.samples, mx.memories, v.config, provider, v.label);
    r10[v.label] = rep.metrics.at("overall_recall@10");
    all_reports().push_back(std::move(rep));
  }
  std::ostringstream d;
  bool ok = true;
  for (const auto& [label, value] : r10) {
    d << label << "=" << value << " ";
    if (label != "e") ok = ok && r10.at("e") > value;
  }
  return {ok, "Overall R@10: " + d.str()};
}

Outcome alpha_shape() {
  const auto& mx = mixed();
  MockProvider provider(mock_config(kDim));
  const auto points = sweep_alpha(mx.corpus.samples, mx.memories, RetrievalConfig{}, provider,
                                  parse_sweep("0:1:0.2"));
  std::ostringstream d;
  double inner = -1.0;
  for (const auto& pt : points) {
    const double v = pt.report.metrics.at("overall_recall@10");
    d << pt.alpha << ":" << v << " ";
    if (pt.alpha > 0.0 && pt.alpha < 1.0) inner = std::max(inner, v);
    all_reports().push_back(pt.report);
  }
  const double lo = points.front().report.metrics.at("overall_recall@10");
  const double hi = points.back().report.metrics.at("overall_recall@10");
  return {lo < inner && hi < inner, "R@10 by alpha: " + d.str()};
}

Outcome metric_correctness() {
  std::ifstream in(std::string(AFFMEM_TEST_DATA) + "/golden_metrics.jsonl");
  expect(in.good(), "golden file missing");
  std::vector<SampleRow> rows;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    SampleRow r;
    r.sample_id = j["sample_id"];
    r.target_rank = j["target_rank"];
    r.receptacle_rank = j["receptacle_rank"];
    rows.push_back(r);
  }
  const std::map<std::string, double> expected = {
      {"target_recall@5", 60.0},     {"target_recall@10", 70.0},     {"target_recall@20", 90.0},
      {"receptacle_recall@5", 50.0}, {"receptacle_recall@10", 60.0}, {"receptacle_recall@20", 80.0},
      {"overall_recall@5", 55.0},    {"overall_recall@10", 65.0},    {"overall_recall@20", 85.0},
      {"sr@1", 10.0},                {"sr@5", 20.0},                 {"sr@10", 40.0},
      {"sr@20", 70.0}};
  expect(aggregate_metrics(rows) == expected, "golden metrics differ");

  // SR@K can never exceed either role's recall.
  std::size_t checked = 0;
  for (const auto& rep : all_reports()) {
    for (int k : {5, 10, 20}) {
      const auto K = std::to_string(k);
      const double sr = rep.metrics.at("sr@" + K);
      expect(sr <= std::min(rep.metrics.at("target_recall@" + K),
                            rep.metrics.at("receptacle_recall@" + K)),
             "SR@" + K + " above role recall in " + rep.label);
      ++checked;
    }
  }
  expect(checked > 0, "no benchmark reports to check");
  return {true, "golden file exact; SR bound held on " + std::to_string(all_reports().size()) +
                    " reports"};
}

Outcome determinism() {
  CorpusParams p;
  p.n_rooms = 3;
  p.views_per_room = 6;
  p.n_affordance_tie = 1;
  p.n_lexical_decoy = 1;
  p.decoys_per_sample = 2;
  const auto corpus = gen_synthetic_corpus(21, p);
  const auto m = build_all(corpus).at("env000");
  const auto path = (std::filesystem::temp_directory_path() / "affmem_accept.jsonl").string();
  save_memory(m, path);
  const auto loaded = load_memory(path);
  std::remove(path.c_str());

  MockProvider provider(mock_config(kDim));
  RetrievalConfig cfg;
  auto answer = [&](const EmbodiedMemory& mem) {
    std::string out;
    for (const auto& s : corpus.samples) {
      const auto r = retrieve(mem, s.instruction, cfg, provider);
      out += to_json(r.target, cfg).dump() + "\n" + to_json(r.receptacle, cfg).dump() + "\n";
    }
    return out;
  };
  const auto first = answer(loaded);
  expect(first == answer(loaded), "repeated queries differ");
  expect(first == answer(m), "loaded memory answers differently");

  // Shuffled manifest lines build the same bytes.
  std::ostringstream manifest;
  write_view_manifest(manifest, corpus.views);
  std::vector<std::string> lines;
  std::istringstream split(manifest.str());
  for (std::string l; std::getline(split, l);) lines.push_back(l);
  std::mt19937_64 rng(3);
  const auto reference = serialize(m);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(lines.begin(), lines.end(), rng);
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";
    std::istringstream in(joined);
    const auto shuffled = read_view_manifest(in);
    BuildConfig bcfg;
    bcfg.providers = mock_config(kDim);
    MockProvider prov(bcfg.providers, shuffled.synthetic);
    expect(serialize(build_memory(shuffled.views, bcfg, prov)) == reference,
           "permuted manifest changed the memory file");
  }
  return {true, "query JSON and memory bytes identical"};
}

Outcome clustering_sanity() {
  const auto scene = two_room_scene();
  const auto m = scene.build(kDim);
  const auto zones = m.level(4);
  expect(zones.size() == 2, std::to_string(zones.size()) + " zones");
  std::set<std::set<std::string>> by_zone;
  for (const auto& z : zones) {
    std::set<std::string> refs;
    for (const auto& c : m.node(z).children) refs.insert(*m.node(c).image_ref);
    by_zone.insert(refs);
  }
  expect(by_zone == std::set<std::set<std::string>>{{"a0", "a1", "a2"}, {"b0", "b1", "b2"}},
         "zones do not follow rooms");

  // Exhaustive-partition oracle on the view-level distances.
  std::vector<const MemoryNode*> views;
  for (const auto& id : m.level(3)) views.push_back(&m.node(id));
  const ClusteringParams params = BuildConfig{}.params_for(4);
  const auto d = combined_distance_matrix(views, params);
  std::size_t enumerated = 0;
  const auto survivors = separated_partitions(d, params.cut_threshold, &enumerated);
  expect(enumerated == 203, "partition enumeration incomplete");
  expect(survivors.size() == 1, std::to_string(survivors.size()) + " separated partitions");
  Groups rooms;
  std::set<std::size_t> a, b;
  for (std::size_t i = 0; i < views.size(); ++i) {
    ((*views[i]->image_ref)[0] == 'a' ? a : b).insert(i);
  }
  rooms = {a, b};
  expect(survivors.front() == rooms, "oracle partition differs from rooms");

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::string> keys;
  for (int i = 0; i < 8; ++i) keys.push_back("k" + std::to_string(i));
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(8, 8);
    for (Eigen::Index i = 0; i < 8; ++i) {
      for (Eigen::Index j = i + 1; j < 8; ++j) r(i, j) = r(j, i) = u(rng);
    }
    Groups prev;
    for (double cut : {0.1, 0.25, 0.4, 0.55, 0.7, 0.85}) {
      const auto now = as_groups(agglomerate(r, keys, cut));
      expect(prev.empty() || refines(prev, now), "threshold monotonicity violated");
      prev = now;
    }
  }
  return {true, "2 zones = rooms = unique oracle partition; 100 monotone fixtures"};
}

Outcome latency() {
  const auto corpus = gen_synthetic_corpus(5, large_env_params(600));
  const auto m = build_all(corpus).begin()->second;
  expect(m.level(3).size() == 600, "memory does not hold 600 views");
  MockProvider provider(mock_config(kDim));
  RetrievalConfig cfg;
  const auto& s = corpus.samples.front();
  std::vector<double> ms;
  for (int i = 0; i < 21; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = retrieve(m, s.instruction, cfg, provider);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count());
    expect(!r.target.entries.empty(), "empty result");
  }
  std::sort(ms.begin(), ms.end());
  std::ostringstream d;
  d << "median " << ms[ms.size() / 2] << " ms per instruction over 600 views (soft budget "
    << kLatencyBudgetMs << " ms)";
  return {ms[ms.size() / 2] < kLatencyBudgetMs, d.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    bool soft;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence", 30, false, oracle_equivalence},
      {2, "fusion formula", 5, false, fusion_formula},
      {3, "rerank permutation contract", 10, false, rerank_contract},
      {4, "affordance scores resolve ties", 30, false, asr_ties},
      {5, "ablation ordering", 120, false, ablation_order},
      {6, "alpha sweep shape", 120, false, alpha_shape},
      {7, "metric correctness", 5, false, metric_correctness},
      {8, "determinism and persistence", 30, false, determinism},
      {9, "clustering sanity", 30, false, clustering_sanity},
      {10, "latency envelope", 60, true, latency},
  };

  int hard_failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += " [over " + std::to_string(int(c.budget_s)) + " s budget]";
    }
    std::printf("%s [%d] %s: %s (%.2f s)%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.soft ? " [soft]" : "");
    std::fflush(stdout);
    if (!o.pass && !c.soft) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
