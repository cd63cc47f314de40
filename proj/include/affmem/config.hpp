#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "affmem/builder.hpp"
#include "affmem/retrieval.hpp"

namespace affmem {

struct PathsConfig {
  std::string memory_dir = "memory";
  std::string manifest;
  std::string benchmark;
  std::string report_out = "reports";

  bool operator==(const PathsConfig&) const = default;
};

/// Everything a command needs. `build.providers` is ignored; `providers` is
/// the single source and is copied in by `build_config()`.
struct AppConfig {
  BuildConfig build;
  RetrievalConfig retrieval;
  ProviderConfig providers;
  PathsConfig paths;

  BuildConfig build_config() const;
  void validate() const;
};

/// Flat view keyed by dotted names: build.n_levels, clustering.<level>.beta,
/// retrieval.alpha, providers.model.<role>, paths.report_out, ...
std::map<std::string, std::string> to_key_values(const AppConfig& cfg);

/// Sets one dotted key. Throws ConfigError for unknown keys or bad values.
void set_value(AppConfig& cfg, const std::string& key, const std::string& value);

/// INI-style file: "[section]" headers, "key = value" lines, '#' or ';'
/// comments. A key's dotted name is "<section>.<key>".
AppConfig read_config(std::istream& in);
AppConfig load_config(const std::string& path);
void write_config(std::ostream& out, const AppConfig& cfg);

/// Shortest text that parses back to the same double.
std::string format_double(double x);

}  // namespace affmem
