#include "affmem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace affmem {

using nlohmann::json;

void validate_sample(const BenchmarkSample& s) {
  if (s.positives_target.empty() || s.positives_receptacle.empty()) {
    throw ConfigError("sample " + s.sample_id + " needs non-empty positive sets for both roles");
  }
}

std::vector<BenchmarkSample> read_benchmark(std::istream& in) {
  std::vector<BenchmarkSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      BenchmarkSample s;
      s.sample_id = j.at("sample_id").get<std::string>();
      s.env_id = j.at("env_id").get<std::string>();
      s.instruction = j.at("instruction").get<std::string>();
      for (const auto& p : j.at("positives_target")) s.positives_target.insert(p.get<std::string>());
      for (const auto& p : j.at("positives_receptacle")) {
        s.positives_receptacle.insert(p.get<std::string>());
      }
      s.preferred_target = j.value("preferred_target", std::string());
      s.kind = j.value("kind", std::string());
      if (j.contains("target_phrase") && j.contains("receptacle_phrase")) {
        s.phrases = PhraseOverride{j["target_phrase"].get<std::string>(),
                                   j["receptacle_phrase"].get<std::string>()};
      }
      validate_sample(s);
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError("benchmark line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<BenchmarkSample> load_benchmark(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open benchmark manifest " + path);
  return read_benchmark(in);
}

void write_benchmark(std::ostream& out, const std::vector<BenchmarkSample>& samples) {
  for (const auto& s : samples) {
    json j = {{"sample_id", s.sample_id},
              {"env_id", s.env_id},
              {"instruction", s.instruction},
              {"positives_target", s.positives_target},
              {"positives_receptacle", s.positives_receptacle}};
    if (!s.preferred_target.empty()) j["preferred_target"] = s.preferred_target;
    if (!s.kind.empty()) j["kind"] = s.kind;
    if (s.phrases) {
      j["target_phrase"] = s.phrases->target;
      j["receptacle_phrase"] = s.phrases->receptacle;
    }
    out << j.dump() << '\n';
  }
}

int recall_at_k(const RankedList& ranked, const std::set<std::string>& positives, int k) {
  if (positives.empty()) throw ConfigError("recall_at_k: empty positive set");
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  const auto n = std::min<std::size_t>(ranked.entries.size(), std::size_t(k));
  for (std::size_t i = 0; i < n; ++i) {
    if (positives.count(ranked.entries[i].image_ref)) return 1;
  }
  return 0;
}

int sr_at_k(const RankedList& target, const RankedList& receptacle, const BenchmarkSample& s,
            int k) {
  return recall_at_k(target, s.positives_target, k) &&
                 recall_at_k(receptacle, s.positives_receptacle, k)
             ? 1
             : 0;
}

int first_hit_rank(const RankedList& ranked, const std::set<std::string>& positives) {
  for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
    if (positives.count(ranked.entries[i].image_ref)) return int(i) + 1;
  }
  return 0;
}

double percent(std::size_t hits, std::size_t total) {
  if (total == 0) return 0.0;
  return std::round(1000.0 * double(hits) / double(total)) / 10.0;
}

namespace {

bool within(int rank, int k) { return rank > 0 && rank <= k; }

}  // namespace

std::map<std::string, double> aggregate_metrics(const std::vector<SampleRow>& rows) {
  std::map<std::string, double> m;
  const std::size_t n = rows.size();
  for (int k : kRecallKs) {
    std::size_t t = 0, r = 0;
    for (const auto& row : rows) {
      t += within(row.target_rank, k);
      r += within(row.receptacle_rank, k);
    }
    const auto ks = std::to_string(k);
    m["target_recall@" + ks] = percent(t, n);
    m["receptacle_recall@" + ks] = percent(r, n);
    m["overall_recall@" + ks] = percent(t + r, 2 * n);
  }
  for (int k : kSuccessKs) {
    std::size_t both = 0;
    for (const auto& row : rows) both += within(row.target_rank, k) && within(row.receptacle_rank, k);
    m["sr@" + std::to_string(k)] = percent(both, n);
  }
  return m;
}

json EvalReport::to_json() const {
  json samples = json::array();
  for (const auto& r : rows) {
    samples.push_back({{"sample_id", r.sample_id},
                       {"env_id", r.env_id},
                       {"kind", r.kind},
                       {"target_rank", r.target_rank},
                       {"receptacle_rank", r.receptacle_rank},
                       {"preferred_rank", r.preferred_rank},
                       {"fallbacks", r.fallbacks}});
  }
  return {{"label", label},
          {"n_samples", rows.size()},
          {"metrics", metrics},
          {"samples", std::move(samples)},
          {"config_echo", config_echo}};
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "sample_id,env_id,kind,target_rank,receptacle_rank,preferred_rank";
  for (int k : kRecallKs) out << ",target_hit@" << k << ",receptacle_hit@" << k;
  for (int k : kSuccessKs) out << ",success@" << k;
  out << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.env_id << ',' << r.kind << ',' << r.target_rank << ','
        << r.receptacle_rank << ',' << r.preferred_rank;
    for (int k : kRecallKs) {
      out << ',' << within(r.target_rank, k) << ',' << within(r.receptacle_rank, k);
    }
    for (int k : kSuccessKs) {
      out << ',' << (within(r.target_rank, k) && within(r.receptacle_rank, k));
    }
    out << '\n';
  }
}

EvalReport run_benchmark(const std::vector<BenchmarkSample>& samples, const MemoryMap& memories,
                         const RetrievalConfig& cfg, Provider& provider, const std::string& label) {
  cfg.validate();
  std::set<std::string> missing;
  for (const auto& s : samples) {
    validate_sample(s);
    if (!memories.count(s.env_id)) missing.insert(s.env_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& e : missing) list += (list.empty() ? "" : ", ") + e;
    throw ConfigError("no memory for environment(s): " + list);
  }

  std::vector<const BenchmarkSample*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](auto* a, auto* b) { return a->sample_id < b->sample_id; });

  EvalReport report;
  report.label = label;
  report.config_echo = cfg.to_json();
  for (const auto* s : order) {
    const auto& m = memories.at(s->env_id);
    const auto res = retrieve(m, s->instruction, cfg, provider, s->phrases);
    SampleRow row;
    row.sample_id = s->sample_id;
    row.env_id = s->env_id;
    row.kind = s->kind;
    row.target_rank = first_hit_rank(res.target, s->positives_target);
    row.receptacle_rank = first_hit_rank(res.receptacle, s->positives_receptacle);
    if (!s->preferred_target.empty()) {
      row.preferred_rank = first_hit_rank(res.target, {s->preferred_target});
    }
    row.fallbacks = res.target.fallbacks;
    for (const auto& f : res.receptacle.fallbacks) {
      if (std::find(row.fallbacks.begin(), row.fallbacks.end(), f) == row.fallbacks.end()) {
        row.fallbacks.push_back(f);
      }
    }
    report.rows.push_back(std::move(row));
  }
  report.metrics = aggregate_metrics(report.rows);
  return report;
}

std::vector<AblationVariant> ablation_variants(const RetrievalConfig& base) {
  std::vector<AblationVariant> out;
  auto a = base;
  a.alpha = 0.0;
  out.push_back({"a", "without regional semantics (alpha = 0)", a});
  auto b = base;
  b.alpha = 1.0;
  out.push_back({"b", "without visual semantics (alpha = 1)", b});
  auto c = base;
  c.enable_rerank = false;
  out.push_back({"c", "without affordance-aware reranking", c});
  auto d = base;
  d.rerank_source = RerankSource::Captions;
  out.push_back({"d", "reranking over view captions only", d});
  out.push_back({"e", "full method", base});
  return out;
}

std::vector<double> parse_sweep(const std::string& spec) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad sweep value '" + item + "' in '" + spec + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("sweep must be start:stop:step, got '" + spec + "'");
  const double start = parts[0], stop = parts[1], step = parts[2];
  if (!(step > 0.0) || stop < start) throw ConfigError("sweep needs step > 0 and stop >= start");
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (long i = 0; i < n; ++i) {
    out.push_back(std::round((start + double(i) * step) * 1e9) / 1e9);
  }
  return out;
}

std::vector<SweepPoint> sweep_alpha(const std::vector<BenchmarkSample>& samples,
                                    const MemoryMap& memories, const RetrievalConfig& base,
                                    Provider& provider, const std::vector<double>& alphas) {
  std::vector<SweepPoint> out;
  for (double a : alphas) {
    auto cfg = base;
    cfg.alpha = a;
    std::ostringstream label;
    label << "alpha=" << a;
    out.push_back({a, run_benchmark(samples, memories, cfg, provider, label.str())});
  }
  return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points) {
  out << "alpha,metric,value\n";
  for (const auto& p : points) {
    for (const auto& [name, value] : p.report.metrics) {
      out << p.alpha << ',' << name << ',' << value << '\n';
    }
  }
}

}  // namespace affmem
