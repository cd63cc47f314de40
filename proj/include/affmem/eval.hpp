#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "affmem/retrieval.hpp"

namespace affmem {

/// One benchmark instruction with its ground-truth views. Any view in a
/// positive set counts as a hit.
struct BenchmarkSample {
  std::string sample_id;
  std::string env_id;
  std::string instruction;
  std::set<std::string> positives_target;
  std::set<std::string> positives_receptacle;
  std::string preferred_target;  // optional; most suitable target view
  std::string kind;              // generator scenario label, informational
  std::optional<PhraseOverride> phrases;
};

/// Benchmark manifest: JSONL, one sample per line with keys sample_id,
/// env_id, instruction, positives_target, positives_receptacle and optional
/// preferred_target, kind, target_phrase + receptacle_phrase.
std::vector<BenchmarkSample> read_benchmark(std::istream& in);
std::vector<BenchmarkSample> load_benchmark(const std::string& path);
void write_benchmark(std::ostream& out, const std::vector<BenchmarkSample>& samples);

/// Throws ConfigError if both positive sets are not non-empty.
void validate_sample(const BenchmarkSample& s);

/// 1 iff one of the first min(k, size) entries is a positive.
int recall_at_k(const RankedList& ranked, const std::set<std::string>& positives, int k);

/// 1 iff both roles hit within the top k.
int sr_at_k(const RankedList& target, const RankedList& receptacle, const BenchmarkSample& s, int k);

/// 1-based rank of the first positive, 0 if absent.
int first_hit_rank(const RankedList& ranked, const std::set<std::string>& positives);

inline const std::vector<int> kRecallKs = {5, 10, 20};
inline const std::vector<int> kSuccessKs = {1, 5, 10, 20};

struct SampleRow {
  std::string sample_id;
  std::string env_id;
  std::string kind;
  int target_rank = 0;      // first positive, 0 = not retrieved
  int receptacle_rank = 0;
  int preferred_rank = 0;   // rank of preferred_target, 0 if absent or unset
  std::vector<std::string> fallbacks;
};

struct EvalReport {
  std::string label;
  /// Percentages with one decimal: target_recall@K, receptacle_recall@K,
  /// overall_recall@K (pooled over sample x role), sr@K.
  std::map<std::string, double> metrics;
  std::vector<SampleRow> rows;
  nlohmann::json config_echo;

  nlohmann::json to_json() const;
  /// Flat per-sample CSV with a header line.
  void write_csv(std::ostream& out) const;
};

/// Aggregates per-sample rows into the metric table.
std::map<std::string, double> aggregate_metrics(const std::vector<SampleRow>& rows);

/// Rounds to one decimal place.
double percent(std::size_t hits, std::size_t total);

using MemoryMap = std::map<std::string, EmbodiedMemory>;  // env_id -> memory

/// Runs retrieval for every sample (in sample_id order) and aggregates.
/// Throws ConfigError listing env_ids that lack a memory.
EvalReport run_benchmark(const std::vector<BenchmarkSample>& samples, const MemoryMap& memories,
                         const RetrievalConfig& cfg, Provider& provider,
                         const std::string& label = "");

struct AblationVariant {
  std::string label;        // "a" .. "e"
  std::string description;
  RetrievalConfig config;
};

/// (a) regional term removed (alpha = 0), (b) visual term removed (alpha = 1),
/// (c) no reranking, (d) reranking over view captions only, (e) full method.
std::vector<AblationVariant> ablation_variants(const RetrievalConfig& base);

/// Parses "start:stop:step" (inclusive stop); values are rounded to 1e-9.
std::vector<double> parse_sweep(const std::string& spec);

struct SweepPoint {
  double alpha = 0.0;
  EvalReport report;
};

std::vector<SweepPoint> sweep_alpha(const std::vector<BenchmarkSample>& samples,
                                    const MemoryMap& memories, const RetrievalConfig& base,
                                    Provider& provider, const std::vector<double>& alphas);

/// Rows "alpha,metric,value" for every metric of every sweep point.
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& points);

}  // namespace affmem
