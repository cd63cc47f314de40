#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "affmem/memory.hpp"
#include "affmem/providers.hpp"

namespace affmem {

inline constexpr int kMemorySchemaVersion = 1;

/// Memory file, UTF-8 JSONL. Line 1 is the header
///   {"schema_version", "env_id", "n_levels", "d_t", "d_m", "n_nodes"}
/// followed by one node object per line in id order. Keys are sorted and
/// doubles use shortest round-trip formatting, so equal memories serialize
/// to identical bytes.
void write_memory(std::ostream& out, const EmbodiedMemory& m);
void save_memory(const EmbodiedMemory& m, const std::string& path);

/// Throws FormatError on malformed, truncated or wrong-version input and
/// StructureError (carrying the validation report) when invariants fail.
EmbodiedMemory read_memory(std::istream& in);
EmbodiedMemory load_memory(const std::string& path);

/// View manifest, one record per line:
///   {"image_ref", "pose": {"x","y","z"}, "width", "height", "env_id"}
/// Synthetic views add {"caption", "room", "plantings": [{"description","action","score"}]}.
struct ViewManifest {
  std::vector<ViewRecord> views;
  SyntheticCatalog synthetic;  // only records carrying synthetic fields
};

ViewManifest read_view_manifest(std::istream& in);
ViewManifest load_view_manifest(const std::string& path);
void write_view_manifest(std::ostream& out, const ViewManifest& manifest);

/// Groups views by env_id (ascending).
std::map<std::string, std::vector<ViewRecord>> split_by_env(const std::vector<ViewRecord>& views);

}  // namespace affmem
