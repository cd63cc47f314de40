#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "affmem/types.hpp"

namespace affmem {

enum class Backend { Mock, File, Http };

const char* to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct ProviderConfig {
  Backend backend = Backend::Mock;
  std::string endpoint_url;                  // Http only
  std::string api_key_env_var = "OPENAI_API_KEY";
  std::map<std::string, std::string> model_names;
  double timeout_s = 30.0;
  int max_retries = 3;
  int max_parallel_requests = 4;

  // Mock backend.
  Eigen::Index d_t = 512;
  Eigen::Index d_m = 512;
  std::size_t max_summary_chars = 8192;

  // File backend: JSONL of precomputed model outputs.
  std::string precomputed_path;

  // Http backend: directory holding the prompt templates, and the robot
  // embodiment text substituted into {embodiment}.
  std::string prompt_dir = AFFMEM_PROMPT_DIR;
  std::string embodiment =
      "Mobile manipulator with a single 7-DoF arm (reach 0.85 m) and a parallel-jaw gripper "
      "(max opening 8 cm). It can grasp rigid objects lighter than 1.5 kg and place them on "
      "flat, uncluttered surfaces between 0.2 m and 1.1 m high.";

  /// Throws ConfigError when timeout, retries or parallelism are out of range.
  void validate() const;
};

struct SegmentMask {
  int mask_id = 0;
  int x = 0, y = 0, w = 0, h = 0;
  long area_px = 0;

  bool operator==(const SegmentMask&) const = default;
};

struct ProposedAffordance {
  Action action;
  double score = 0.0;
  bool operator==(const ProposedAffordance&) const = default;
};

struct InstanceProposal {
  int mask_id = 0;
  std::string description;
  std::vector<ProposedAffordance> affordances;
  bool operator==(const InstanceProposal&) const = default;
};

struct InstanceCandidate {
  std::string instance_id;
  std::string description;
};

struct InstanceScore {
  std::string instance_id;
  double relevance = 0.0;
};

struct DecomposedInstruction {
  std::string target;
  std::string receptacle;
};

/// Ground truth carried by synthetic views; the Mock backend answers every
/// per-view request from it.
struct Planting {
  std::string description;
  Action action;
  double score = 0.0;
};

struct SyntheticView {
  ViewRecord record;
  std::string caption;  // hash source for the image-space embedding
  std::string room;
  std::vector<Planting> plantings;
};

using SyntheticCatalog = std::map<std::string, SyntheticView>;  // keyed by image_ref

/// Every model the pipeline calls. Public entry points validate inputs and
/// outputs (non-empty text, finite embeddings, scores in [0,1], unique mask
/// ids) so that all backends share the same boundary contract.
class Provider {
 public:
  virtual ~Provider() = default;

  Embedding embed_text(std::string_view text);
  Embedding embed_query_multimodal(std::string_view text);
  Embedding embed_image_multimodal(const std::string& image_ref);
  std::vector<SegmentMask> segment(const ViewRecord& view);
  std::vector<InstanceProposal> propose_instances(const ViewRecord& view,
                                                  std::span<const SegmentMask> masks);
  std::string describe_view(const ViewRecord& view);
  std::string summarize(std::span<const std::string> descriptions);
  std::vector<InstanceScore> score_instances(std::string_view phrase,
                                             std::span<const InstanceCandidate> candidates);
  /// Throws DecompositionError when no target/receptacle split exists.
  DecomposedInstruction decompose_instruction(std::string_view instruction);

 protected:
  virtual Embedding do_embed_text(std::string_view text) = 0;
  virtual Embedding do_embed_query_multimodal(std::string_view text) = 0;
  virtual Embedding do_embed_image_multimodal(const std::string& image_ref) = 0;
  virtual std::vector<SegmentMask> do_segment(const ViewRecord& view) = 0;
  virtual std::vector<InstanceProposal> do_propose_instances(
      const ViewRecord& view, std::span<const SegmentMask> masks) = 0;
  virtual std::string do_describe_view(const ViewRecord& view) = 0;
  virtual std::string do_summarize(std::span<const std::string> descriptions) = 0;
  virtual std::vector<InstanceScore> do_score_instances(
      std::string_view phrase, std::span<const InstanceCandidate> candidates) = 0;
  virtual DecomposedInstruction do_decompose_instruction(std::string_view instruction) = 0;
};

/// Lowercased alphanumeric tokens, in order of appearance.
std::vector<std::string> tokenize(std::string_view text);

/// FNV-1a 64-bit; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ULL);

/// Rule-based split of a pick-and-place instruction into (target, receptacle).
DecomposedInstruction rule_based_decompose(std::string_view instruction);

/// Offline backend: feature-hashing embedders, planted ground truth for
/// per-view requests, Jaccard relevance and rule-based decomposition.
class MockProvider final : public Provider {
 public:
  explicit MockProvider(ProviderConfig cfg, SyntheticCatalog catalog = {});

  /// Signed feature hashing of `tokenize(text)` into `dim` buckets, L2-normalized.
  static Embedding hash_embed(std::string_view text, Eigen::Index dim, std::uint64_t salt);

  static constexpr std::uint64_t kTextSalt = 0x74657874ULL;        // "text"
  static constexpr std::uint64_t kMultimodalSalt = 0x6d6d6f64ULL;  // "mmod"

 protected:
  Embedding do_embed_text(std::string_view text) override;
  Embedding do_embed_query_multimodal(std::string_view text) override;
  Embedding do_embed_image_multimodal(const std::string& image_ref) override;
  std::vector<SegmentMask> do_segment(const ViewRecord& view) override;
  std::vector<InstanceProposal> do_propose_instances(const ViewRecord& view,
                                                     std::span<const SegmentMask> masks) override;
  std::string do_describe_view(const ViewRecord& view) override;
  std::string do_summarize(std::span<const std::string> descriptions) override;
  std::vector<InstanceScore> do_score_instances(
      std::string_view phrase, std::span<const InstanceCandidate> candidates) override;
  DecomposedInstruction do_decompose_instruction(std::string_view instruction) override;

 private:
  const SyntheticView& lookup(const std::string& image_ref) const;
  static std::vector<std::string> distinct_descriptions(const SyntheticView& v);

  ProviderConfig cfg_;
  SyntheticCatalog catalog_;
};

/// Replays model outputs captured earlier, one JSON record per line:
///   {"key": ..., "role": "text"|"query_mm"|"image_mm", "dim": d, "values": [...]}
///   {"key": image_ref, "role": "segment", "masks": [{"mask_id", "bbox": [x,y,w,h], "area_px"}]}
///   {"key": image_ref, "role": "proposals", "proposals": [{"mask_id", "description",
///                                                         "affordances": [{"action","score"}]}]}
///   {"key": image_ref, "role": "description", "text": ...}
///   {"key": <descriptions joined by '\n'>, "role": "summary", "text": ...}
///   {"key": phrase, "role": "relevance", "scores": {description: value}}
///   {"key": instruction, "role": "decomposition", "target": ..., "receptacle": ...}
/// Records with other roles are skipped with a warning on stderr.
class FileProvider final : public Provider {
 public:
  explicit FileProvider(const std::string& path);
  /// Parses records from an in-memory JSONL document.
  static FileProvider from_string(const std::string& jsonl);

  std::size_t skipped_records() const { return skipped_; }

 protected:
  Embedding do_embed_text(std::string_view text) override;
  Embedding do_embed_query_multimodal(std::string_view text) override;
  Embedding do_embed_image_multimodal(const std::string& image_ref) override;
  std::vector<SegmentMask> do_segment(const ViewRecord& view) override;
  std::vector<InstanceProposal> do_propose_instances(const ViewRecord& view,
                                                     std::span<const SegmentMask> masks) override;
  std::string do_describe_view(const ViewRecord& view) override;
  std::string do_summarize(std::span<const std::string> descriptions) override;
  std::vector<InstanceScore> do_score_instances(
      std::string_view phrase, std::span<const InstanceCandidate> candidates) override;
  DecomposedInstruction do_decompose_instruction(std::string_view instruction) override;

 private:
  FileProvider() = default;
  void parse(std::istream& in);
  const std::string& payload(const std::string& role, const std::string& key) const;
  Embedding vector_for(const std::string& role, const std::string& key) const;

  std::map<std::pair<std::string, std::string>, std::string> records_;  // (role, key) -> json
  std::size_t skipped_ = 0;
};

struct HttpResponse {
  /// HTTP status, or 0 for a transport failure and -1 for a timeout.
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const HttpHeaders& headers, double timeout_s) = 0;
};

/// cpp-httplib transport against `endpoint_url` (scheme://host[:port]).
std::unique_ptr<HttpTransport> make_httplib_transport(const std::string& endpoint_url);

/// OpenAI-compatible backend: /v1/embeddings and /v1/chat/completions with
/// JSON-mode responses. Model roles looked up in `model_names`:
/// text_embedding, multimodal_text, multimodal_image, segmenter, vlm, llm.
class HttpProvider final : public Provider {
 public:
  using Sleeper = std::function<void(double seconds)>;

  HttpProvider(ProviderConfig cfg, std::unique_ptr<HttpTransport> transport,
               Sleeper sleeper = {});
  ~HttpProvider() override;

  /// Requests issued over the provider's lifetime, retries included.
  std::size_t requests_sent() const;

  static constexpr double kBackoffBase = 0.25;

 protected:
  Embedding do_embed_text(std::string_view text) override;
  Embedding do_embed_query_multimodal(std::string_view text) override;
  Embedding do_embed_image_multimodal(const std::string& image_ref) override;
  std::vector<SegmentMask> do_segment(const ViewRecord& view) override;
  std::vector<InstanceProposal> do_propose_instances(const ViewRecord& view,
                                                     std::span<const SegmentMask> masks) override;
  std::string do_describe_view(const ViewRecord& view) override;
  std::string do_summarize(std::span<const std::string> descriptions) override;
  std::vector<InstanceScore> do_score_instances(
      std::string_view phrase, std::span<const InstanceCandidate> candidates) override;
  DecomposedInstruction do_decompose_instruction(std::string_view instruction) override;

 private:
  struct State;
  std::string model(const std::string& role) const;
  std::string request(const std::string& path, const std::string& body);
  Embedding embed(const std::string& model_role, const std::string& input);
  std::string chat(const std::string& model_role, const std::string& prompt,
                   const std::vector<std::string>& image_refs);
  std::string render(const std::string& template_name,
                     const std::map<std::string, std::string>& values) const;

  ProviderConfig cfg_;
  std::unique_ptr<State> state_;
};

/// Backend selected by `cfg.backend`. The Mock backend answers per-view
/// requests from `catalog`.
std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg, SyntheticCatalog catalog = {});

/// Substitutes `{name}` placeholders; unknown placeholders are left as-is.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

}  // namespace affmem
