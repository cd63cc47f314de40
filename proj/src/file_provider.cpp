#include <fstream>
#include <set>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "affmem/providers.hpp"

namespace affmem {

using nlohmann::json;

namespace {

const std::set<std::string>& known_roles() {
  static const std::set<std::string> r = {"text",      "query_mm",    "image_mm",
                                          "segment",   "proposals",   "description",
                                          "summary",   "relevance",   "decomposition"};
  return r;
}

json parse_payload(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

}  // namespace

FileProvider::FileProvider(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open precomputed provider file " + path);
  parse(in);
}

FileProvider FileProvider::from_string(const std::string& jsonl) {
  FileProvider p;
  std::istringstream in(jsonl);
  p.parse(in);
  return p;
}

void FileProvider::parse(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("precomputed file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("key") || !rec.contains("role") ||
        !rec["key"].is_string() || !rec["role"].is_string()) {
      throw FormatError("precomputed file line " + std::to_string(lineno) +
                        ": expected an object with string key and role");
    }
    const auto role = rec["role"].get<std::string>();
    if (!known_roles().count(role)) {
      std::cerr << "warning: precomputed file line " << lineno << ": ignoring unknown role '"
                << role << "'\n";
      ++skipped_;
      continue;
    }
    records_[{role, rec["key"].get<std::string>()}] = line;
  }
}

const std::string& FileProvider::payload(const std::string& role, const std::string& key) const {
  auto it = records_.find({role, key});
  if (it == records_.end()) {
    throw ProviderError(ProviderErrorKind::MissingPrecomputed,
                        "no precomputed '" + role + "' record for '" + key + "'");
  }
  return it->second;
}

Embedding FileProvider::vector_for(const std::string& role, const std::string& key) const {
  const auto& raw = payload(role, key);
  const auto rec = parse_payload(raw);
  try {
    const auto values = rec.at("values").get<std::vector<double>>();
    if (rec.contains("dim") && rec["dim"].get<std::size_t>() != values.size()) {
      throw ProviderError(ProviderErrorKind::ParseFailure,
                          "record dim does not match the number of values", raw);
    }
    return Embedding::from_std(values);
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  } catch (const DegenerateVectorError& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  } catch (const DimensionError& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

Embedding FileProvider::do_embed_text(std::string_view text) {
  return vector_for("text", std::string(text));
}

Embedding FileProvider::do_embed_query_multimodal(std::string_view text) {
  return vector_for("query_mm", std::string(text));
}

Embedding FileProvider::do_embed_image_multimodal(const std::string& image_ref) {
  return vector_for("image_mm", image_ref);
}

std::vector<SegmentMask> FileProvider::do_segment(const ViewRecord& view) {
  const auto& raw = payload("segment", view.image_ref);
  const auto rec = parse_payload(raw);
  try {
    std::vector<SegmentMask> out;
    for (const auto& m : rec.at("masks")) {
      SegmentMask s;
      s.mask_id = m.at("mask_id").get<int>();
      const auto bbox = m.at("bbox").get<std::vector<int>>();
      if (bbox.size() != 4) throw ProviderError(ProviderErrorKind::ParseFailure, "bbox needs 4 values", raw);
      s.x = bbox[0];
      s.y = bbox[1];
      s.w = bbox[2];
      s.h = bbox[3];
      s.area_px = m.value("area_px", static_cast<long>(s.w) * s.h);
      out.push_back(s);
    }
    return out;
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::vector<InstanceProposal> FileProvider::do_propose_instances(const ViewRecord& view,
                                                                 std::span<const SegmentMask>) {
  const auto& raw = payload("proposals", view.image_ref);
  const auto rec = parse_payload(raw);
  try {
    std::vector<InstanceProposal> out;
    for (const auto& p : rec.at("proposals")) {
      InstanceProposal ip;
      ip.mask_id = p.at("mask_id").get<int>();
      ip.description = p.at("description").get<std::string>();
      for (const auto& a : p.value("affordances", json::array())) {
        ip.affordances.push_back(
            {Action::named(a.at("action").get<std::string>()), a.at("score").get<double>()});
      }
      out.push_back(std::move(ip));
    }
    return out;
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::string FileProvider::do_describe_view(const ViewRecord& view) {
  const auto& raw = payload("description", view.image_ref);
  try {
    return parse_payload(raw).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::string FileProvider::do_summarize(std::span<const std::string> descriptions) {
  std::string key;
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    if (i) key += '\n';
    key += descriptions[i];
  }
  const auto& raw = payload("summary", key);
  try {
    return parse_payload(raw).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

std::vector<InstanceScore> FileProvider::do_score_instances(
    std::string_view phrase, std::span<const InstanceCandidate> candidates) {
  const auto& raw = payload("relevance", std::string(phrase));
  const auto rec = parse_payload(raw);
  std::vector<InstanceScore> out;
  try {
    const auto& scores = rec.at("scores");
    for (const auto& c : candidates) {
      if (!scores.contains(c.description)) {
        throw ProviderError(ProviderErrorKind::MissingPrecomputed,
                            "no relevance for '" + c.description + "'", raw);
      }
      out.push_back({c.instance_id, scores.at(c.description).get<double>()});
    }
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
  return out;
}

DecomposedInstruction FileProvider::do_decompose_instruction(std::string_view instruction) {
  const auto& raw = payload("decomposition", std::string(instruction));
  try {
    const auto rec = parse_payload(raw);
    return {rec.at("target").get<std::string>(), rec.at("receptacle").get<std::string>()};
  } catch (const json::exception& e) {
    throw ProviderError(ProviderErrorKind::ParseFailure, e.what(), raw);
  }
}

}  // namespace affmem
