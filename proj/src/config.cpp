#include "affmem/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

namespace affmem {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

const char* to_string(Linkage) { return "average"; }

Linkage linkage_from_string(const std::string& key, const std::string& v) {
  if (v == "average") return Linkage::Average;
  throw ConfigError(key + ": unsupported linkage '" + v + "' (only average)");
}

std::string section_of(const std::string& key) {
  const auto first = key.find('.');
  if (key.compare(0, first, "clustering") == 0) return key.substr(0, key.find('.', first + 1));
  return key.substr(0, first);
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

BuildConfig AppConfig::build_config() const {
  BuildConfig b = build;
  b.providers = providers;
  return b;
}

void AppConfig::validate() const {
  build_config().validate();
  retrieval.validate();
}

std::map<std::string, std::string> to_key_values(const AppConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["build.n_levels"] = std::to_string(cfg.build.n_levels);
  for (const auto& [level, p] : cfg.build.clustering) {
    const std::string s = "clustering." + std::to_string(level) + ".";
    kv[s + "beta"] = format_double(p.beta);
    kv[s + "d_scale"] = format_double(p.d_scale);
    kv[s + "cut_threshold"] = format_double(p.cut_threshold);
    kv[s + "linkage"] = to_string(p.linkage);
    kv[s + "min_cluster_size"] = std::to_string(p.min_cluster_size);
  }
  const auto& r = cfg.retrieval;
  kv["retrieval.alpha"] = format_double(r.alpha);
  kv["retrieval.k_b"] = std::to_string(r.k_b);
  kv["retrieval.k_r"] = std::to_string(r.k_r);
  kv["retrieval.k_f"] = std::to_string(r.k_f);
  kv["retrieval.enable_rerank"] = r.enable_rerank ? "true" : "false";
  kv["retrieval.enable_asr"] = r.enable_asr ? "true" : "false";
  kv["retrieval.rerank_source"] = to_string(r.rerank_source);
  const auto& p = cfg.providers;
  kv["providers.backend"] = to_string(p.backend);
  kv["providers.endpoint_url"] = p.endpoint_url;
  kv["providers.api_key_env_var"] = p.api_key_env_var;
  for (const auto& [role, name] : p.model_names) kv["providers.model." + role] = name;
  kv["providers.timeout_s"] = format_double(p.timeout_s);
  kv["providers.max_retries"] = std::to_string(p.max_retries);
  kv["providers.max_parallel_requests"] = std::to_string(p.max_parallel_requests);
  kv["providers.d_t"] = std::to_string(p.d_t);
  kv["providers.d_m"] = std::to_string(p.d_m);
  kv["providers.max_summary_chars"] = std::to_string(p.max_summary_chars);
  kv["providers.precomputed_path"] = p.precomputed_path;
  kv["providers.prompt_dir"] = p.prompt_dir;
  kv["providers.embodiment"] = p.embodiment;
  kv["paths.memory_dir"] = cfg.paths.memory_dir;
  kv["paths.manifest"] = cfg.paths.manifest;
  kv["paths.benchmark"] = cfg.paths.benchmark;
  kv["paths.report_out"] = cfg.paths.report_out;
  return kv;
}

void set_value(AppConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto as_int = [&] { return int(parse_int(key, v)); };

  if (key == "build.n_levels") {
    cfg.build.n_levels = as_int();
    return;
  }
  if (key.rfind("clustering.", 0) == 0) {
    const auto dot = key.find('.', 11);
    if (dot == std::string::npos) throw ConfigError("unknown config key '" + key + "'");
    const int level = int(parse_int(key, key.substr(11, dot - 11)));
    const std::string field = key.substr(dot + 1);
    auto& p = cfg.build.clustering[level];
    if (field == "beta") p.beta = parse_double(key, v);
    else if (field == "d_scale") p.d_scale = parse_double(key, v);
    else if (field == "cut_threshold") p.cut_threshold = parse_double(key, v);
    else if (field == "linkage") p.linkage = linkage_from_string(key, v);
    else if (field == "min_cluster_size") p.min_cluster_size = as_int();
    else throw ConfigError("unknown config key '" + key + "'");
    return;
  }

  auto& r = cfg.retrieval;
  if (key == "retrieval.alpha") r.alpha = parse_double(key, v);
  else if (key == "retrieval.k_b") r.k_b = as_int();
  else if (key == "retrieval.k_r") r.k_r = as_int();
  else if (key == "retrieval.k_f") r.k_f = as_int();
  else if (key == "retrieval.enable_rerank") r.enable_rerank = parse_bool(key, v);
  else if (key == "retrieval.enable_asr") r.enable_asr = parse_bool(key, v);
  else if (key == "retrieval.rerank_source") r.rerank_source = rerank_source_from_string(v);
  else if (key.rfind("providers.model.", 0) == 0) cfg.providers.model_names[key.substr(16)] = v;
  else if (key == "providers.backend") cfg.providers.backend = backend_from_string(v);
  else if (key == "providers.endpoint_url") cfg.providers.endpoint_url = v;
  else if (key == "providers.api_key_env_var") cfg.providers.api_key_env_var = v;
  else if (key == "providers.timeout_s") cfg.providers.timeout_s = parse_double(key, v);
  else if (key == "providers.max_retries") cfg.providers.max_retries = as_int();
  else if (key == "providers.max_parallel_requests") cfg.providers.max_parallel_requests = as_int();
  else if (key == "providers.d_t") cfg.providers.d_t = parse_int(key, v);
  else if (key == "providers.d_m") cfg.providers.d_m = parse_int(key, v);
  else if (key == "providers.max_summary_chars") {
    const auto n = parse_int(key, v);
    if (n < 1) throw ConfigError(key + " must be >= 1");
    cfg.providers.max_summary_chars = std::size_t(n);
  }
  else if (key == "providers.precomputed_path") cfg.providers.precomputed_path = v;
  else if (key == "providers.prompt_dir") cfg.providers.prompt_dir = v;
  else if (key == "providers.embodiment") cfg.providers.embodiment = v;
  else if (key == "paths.memory_dir") cfg.paths.memory_dir = v;
  else if (key == "paths.manifest") cfg.paths.manifest = v;
  else if (key == "paths.benchmark") cfg.paths.benchmark = v;
  else if (key == "paths.report_out") cfg.paths.report_out = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

AppConfig read_config(std::istream& in) {
  AppConfig cfg;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
    }
    set_value(cfg, section + "." + trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return read_config(in);
}

void write_config(std::ostream& out, const AppConfig& cfg) {
  std::string current;
  for (const auto& [key, value] : to_key_values(cfg)) {
    const auto section = section_of(key);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(section.size() + 1) << " = " << value << '\n';
  }
}

}  // namespace affmem
