#include <algorithm>
#include <set>

#include "affmem/providers.hpp"

namespace affmem {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_any(std::string_view s, std::string_view seps) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || seps.find(s[i]) != std::string_view::npos) {
      auto piece = trim(s.substr(start, i - start));
      if (!piece.empty()) out.push_back(std::move(piece));
      start = i + 1;
    }
  }
  return out;
}

void push_unique(std::vector<std::string>& v, std::set<std::string>& seen, std::string s) {
  if (seen.insert(s).second) v.push_back(std::move(s));
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

MockProvider::MockProvider(ProviderConfig cfg, SyntheticCatalog catalog)
    : cfg_(std::move(cfg)), catalog_(std::move(catalog)) {}

Embedding MockProvider::hash_embed(std::string_view text, Eigen::Index dim, std::uint64_t salt) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  const auto tokens = tokenize(text);
  if (tokens.empty()) {
    throw ProviderError(ProviderErrorKind::EmptyInput, "no alphanumeric tokens in text");
  }
  const std::uint64_t seed = fnv1a64(std::to_string(salt));
  for (const auto& tok : tokens) {
    const std::uint64_t h = fnv1a64(tok, seed);
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
    v[bucket] += (h >> 63) ? -1.0 : 1.0;
  }
  if (!(v.norm() > 0.0)) {
    // Every token cancelled out in shared buckets; fall back to the first token's bucket.
    const std::uint64_t h = fnv1a64(tokens.front(), seed);
    v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim))] = 1.0;
  }
  return Embedding::normalized(v);
}

const SyntheticView& MockProvider::lookup(const std::string& image_ref) const {
  auto it = catalog_.find(image_ref);
  if (it == catalog_.end()) {
    throw ProviderError(ProviderErrorKind::MissingPrecomputed,
                        "mock backend has no synthetic view '" + image_ref + "'");
  }
  return it->second;
}

std::vector<std::string> MockProvider::distinct_descriptions(const SyntheticView& v) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : v.plantings) push_unique(out, seen, p.description);
  return out;
}

Embedding MockProvider::do_embed_text(std::string_view text) {
  return hash_embed(text, cfg_.d_t, kTextSalt);
}

Embedding MockProvider::do_embed_query_multimodal(std::string_view text) {
  return hash_embed(text, cfg_.d_m, kMultimodalSalt);
}

Embedding MockProvider::do_embed_image_multimodal(const std::string& image_ref) {
  const auto& v = lookup(image_ref);
  const std::string source = v.caption.empty() ? do_describe_view(v.record) : v.caption;
  return hash_embed(source, cfg_.d_m, kMultimodalSalt);
}

std::vector<SegmentMask> MockProvider::do_segment(const ViewRecord& view) {
  const auto& v = lookup(view.image_ref);
  const auto objects = distinct_descriptions(v);
  std::vector<SegmentMask> masks;
  const int n = static_cast<int>(objects.size());
  for (int i = 0; i < n; ++i) {
    SegmentMask m;
    m.mask_id = i;
    m.x = view.width * i / n;
    m.w = view.width * (i + 1) / n - m.x;
    m.y = 0;
    m.h = view.height;
    m.area_px = static_cast<long>(m.w) * m.h;
    masks.push_back(m);
  }
  return masks;
}

std::vector<InstanceProposal> MockProvider::do_propose_instances(
    const ViewRecord& view, std::span<const SegmentMask> masks) {
  const auto& v = lookup(view.image_ref);
  const auto objects = distinct_descriptions(v);
  std::vector<InstanceProposal> out;
  for (const auto& m : masks) {
    if (m.mask_id < 0 || m.mask_id >= static_cast<int>(objects.size())) continue;
    InstanceProposal p;
    p.mask_id = m.mask_id;
    p.description = objects[static_cast<std::size_t>(m.mask_id)];
    for (const auto& pl : v.plantings) {
      if (pl.description == p.description) p.affordances.push_back({pl.action, pl.score});
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string MockProvider::do_describe_view(const ViewRecord& view) {
  const auto& v = lookup(view.image_ref);
  const auto objects = distinct_descriptions(v);
  if (objects.empty()) {
    if (!v.room.empty()) return v.room;
    return v.caption.empty() ? std::string("view") : v.caption;
  }
  const std::string body = join(objects, ", ");
  return v.room.empty() ? body : v.room + ": " + body;
}

std::string MockProvider::do_summarize(std::span<const std::string> descriptions) {
  std::vector<std::string> tags, items;
  std::set<std::string> seen_tags, seen_items, seen_desc;
  for (const auto& d : descriptions) seen_desc.insert(d);
  if (seen_desc.size() == 1) {
    const auto& only = descriptions.front();
    return only.size() <= cfg_.max_summary_chars ? only : only.substr(0, cfg_.max_summary_chars);
  }

  for (const auto& d : descriptions) {
    std::string_view body = d;
    if (const auto colon = d.find(": "); colon != std::string::npos) {
      for (auto& t : split_any(std::string_view(d).substr(0, colon), ",")) {
        push_unique(tags, seen_tags, std::move(t));
      }
      body = std::string_view(d).substr(colon + 2);
    }
    for (auto& it : split_any(body, ",;")) push_unique(items, seen_items, std::move(it));
  }

  const std::string head = tags.empty() ? std::string() : join(tags, ", ") + ": ";
  std::string out = head;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string piece = (i ? "; " : "") + items[i];
    if (out.size() + piece.size() > cfg_.max_summary_chars) break;
    out += piece;
  }
  if (out.size() > cfg_.max_summary_chars) out.resize(cfg_.max_summary_chars);
  if (trim(out).empty() || out == head) {
    // Even the first item does not fit: hard cut.
    out = (head + (items.empty() ? std::string() : items.front())).substr(0, cfg_.max_summary_chars);
  }
  return out;
}

std::vector<InstanceScore> MockProvider::do_score_instances(
    std::string_view phrase, std::span<const InstanceCandidate> candidates) {
  const auto q = tokenize(phrase);
  const std::set<std::string> qs(q.begin(), q.end());
  std::vector<InstanceScore> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    const auto t = tokenize(c.description);
    const std::set<std::string> ts(t.begin(), t.end());
    std::size_t inter = 0;
    for (const auto& tok : ts) inter += qs.count(tok);
    const std::size_t uni = qs.size() + ts.size() - inter;
    out.push_back({c.instance_id, uni == 0 ? 0.0 : double(inter) / double(uni)});
  }
  return out;
}

DecomposedInstruction MockProvider::do_decompose_instruction(std::string_view instruction) {
  return rule_based_decompose(instruction);
}

}  // namespace affmem
