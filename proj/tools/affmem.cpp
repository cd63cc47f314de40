// affmem: build, query and evaluate affordance-aware embodied memories.
//
// stdout carries JSON only; progress and diagnostics go to stderr.
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime or data error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "affmem/config.hpp"
#include "affmem/eval.hpp"
#include "affmem/persistence.hpp"
#include "affmem/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace affmem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

const std::vector<std::string> kModelRoles = {"text_embedding", "multimodal_text",
                                              "multimodal_image", "segmenter", "vlm", "llm"};

void log(const std::string& msg) { std::cerr << "[affmem] " << msg << '\n'; }

struct Common {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

// --config plus one flag per dotted config key.
void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI-style config file");
  auto keys = to_key_values(AppConfig{});
  for (const auto& role : kModelRoles) keys["providers.model." + role];
  for (const auto& [key, value] : keys) {
    auto* opt = cmd->add_option_function<std::string>(
        "--" + key, [&c, k = key](const std::string& v) { c.overrides[k] = v; },
        "override " + key);
    opt->group("Config overrides");
  }
}

AppConfig resolve(const Common& c) {
  AppConfig cfg = c.config_path.empty() ? AppConfig{} : load_config(c.config_path);
  for (const auto& [k, v] : c.overrides) set_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

std::string memory_path(const AppConfig& cfg, const std::string& env) {
  return (fs::path(cfg.paths.memory_dir) / (env + ".jsonl")).string();
}

json summary_json(const BuildSummary& s) {
  json per_level = json::object();
  for (const auto& [level, n] : s.nodes_per_level) per_level[std::to_string(level)] = n;
  return {{"env_id", s.env_id},
          {"n_views", s.n_views},
          {"n_instances", s.n_instances},
          {"n_affordances", s.n_affordances},
          {"nodes_per_level", per_level}};
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory " + dir + ": " + ec.message());
}

int cmd_build(const AppConfig& cfg) {
  if (cfg.paths.manifest.empty()) throw ConfigError("build needs --manifest");
  const auto manifest = load_view_manifest(cfg.paths.manifest);
  if (manifest.views.empty()) throw BuildError("EmptyInput", "view manifest has no records");
  auto provider = make_provider(cfg.providers, manifest.synthetic);
  ensure_dir(cfg.paths.memory_dir);
  for (auto& [env, views] : split_by_env(manifest.views)) {
    log("building " + env + " from " + std::to_string(views.size()) + " views");
    const auto m = build_memory(std::move(views), cfg.build_config(), *provider);
    save_memory(m, memory_path(cfg, env));
    std::cout << summary_json(summarize_build(m)).dump() << '\n';
  }
  return kExitOk;
}

int cmd_query(const AppConfig& cfg, const std::string& memory_file,
              const std::string& instruction, int top_k, bool select) {
  if (top_k < 1) throw ConfigError("--top-k must be >= 1");
  if (instruction.empty()) throw ConfigError("query needs --instruction");
  const auto m = load_memory(memory_file);
  auto provider = make_provider(cfg.providers);
  auto res = retrieve(m, instruction, cfg.retrieval, *provider);
  for (auto* list : {&res.target, &res.receptacle}) {
    if (list->entries.size() > std::size_t(top_k)) list->entries.resize(std::size_t(top_k));
    std::cout << to_json(*list, cfg.retrieval).dump() << '\n';
  }
  if (!select) return kExitOk;

  json chosen = json::object();
  for (const auto* list : {&res.target, &res.receptacle}) {
    std::cerr << "select " << to_string(list->role) << " [1-" << list->entries.size() << "]: ";
    std::string line;
    if (!std::getline(std::cin, line)) throw ConfigError("no selection on stdin");
    int k = 0;
    try {
      k = std::stoi(line);
    } catch (const std::exception&) {
      throw ConfigError("selection must be an integer, got '" + line + "'");
    }
    if (k < 1 || std::size_t(k) > list->entries.size()) {
      throw ConfigError("selection " + std::to_string(k) + " out of range");
    }
    const auto& e = list->entries[std::size_t(k - 1)];
    chosen[to_string(list->role)] = {{"rank", k}, {"view_id", e.view_id}, {"image_ref", e.image_ref}};
  }
  std::cout << json{{"selected", chosen}}.dump() << '\n';
  return kExitOk;
}

MemoryMap load_memories(const AppConfig& cfg, const std::vector<BenchmarkSample>& samples) {
  std::set<std::string> envs;
  for (const auto& s : samples) envs.insert(s.env_id);
  MemoryMap out;
  std::vector<std::string> missing;
  for (const auto& env : envs) {
    const auto path = memory_path(cfg, env);
    if (!fs::exists(path)) {
      missing.push_back(env);
      continue;
    }
    out.emplace(env, load_memory(path));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& e : missing) list += (list.empty() ? "" : ", ") + e;
    throw ConfigError("no memory file in " + cfg.paths.memory_dir + " for: " + list);
  }
  return out;
}

void write_report(const AppConfig& cfg, const EvalReport& r, const std::string& stem) {
  ensure_dir(cfg.paths.report_out);
  const auto base = fs::path(cfg.paths.report_out) / stem;
  std::ofstream js(base.string() + ".json");
  js << r.to_json().dump(2) << '\n';
  std::ofstream csv(base.string() + ".csv");
  r.write_csv(csv);
  if (!js || !csv) throw ConfigError("cannot write report " + base.string());
}

int cmd_eval(const AppConfig& cfg, bool ablate) {
  if (cfg.paths.benchmark.empty()) throw ConfigError("eval needs --benchmark");
  const auto samples = load_benchmark(cfg.paths.benchmark);
  const auto memories = load_memories(cfg, samples);
  auto provider = make_provider(cfg.providers);
  std::vector<AblationVariant> variants;
  if (ablate) {
    variants = ablation_variants(cfg.retrieval);
  } else {
    variants.push_back({"report", "configured method", cfg.retrieval});
  }
  for (const auto& v : variants) {
    log("evaluating " + v.label + " (" + v.description + ") on " +
        std::to_string(samples.size()) + " samples");
    const auto report = run_benchmark(samples, memories, v.config, *provider, v.label);
    write_report(cfg, report, ablate ? "ablation_" + v.label : "report");
    std::cout << json{{"label", report.label},
                      {"description", v.description},
                      {"n_samples", report.rows.size()},
                      {"metrics", report.metrics},
                      {"config_echo", report.config_echo}}
                     .dump()
              << '\n';
  }
  return kExitOk;
}

int cmd_sweep(const AppConfig& cfg, const std::string& spec) {
  if (cfg.paths.benchmark.empty()) throw ConfigError("sweep needs --benchmark");
  const auto alphas = parse_sweep(spec);
  const auto samples = load_benchmark(cfg.paths.benchmark);
  const auto memories = load_memories(cfg, samples);
  auto provider = make_provider(cfg.providers);
  const auto points = sweep_alpha(samples, memories, cfg.retrieval, *provider, alphas);
  ensure_dir(cfg.paths.report_out);
  std::ofstream csv(fs::path(cfg.paths.report_out) / "alpha_sweep.csv");
  write_sweep_csv(csv, points);
  if (!csv) throw ConfigError("cannot write alpha_sweep.csv");
  for (const auto& p : points) {
    std::cout << json{{"alpha", p.alpha}, {"metrics", p.report.metrics}}.dump() << '\n';
  }
  return kExitOk;
}

struct GenOptions {
  std::uint64_t seed = 7;
  std::string preset = "small";
  std::string out_dir = ".";
  int n_envs = 1;
  CorpusParams params;
};

int cmd_gen(GenOptions g) {
  CorpusParams p = g.params;
  int n_envs = g.n_envs;
  if (g.preset == "mixed") {
    p = mixed_benchmark_params();
    n_envs = 10;
  } else if (g.preset == "large") {
    p = large_env_params(600);
  } else if (g.preset != "small") {
    throw ConfigError("unknown preset '" + g.preset + "' (small, mixed, large)");
  }
  const auto corpus =
      n_envs == 1 ? gen_synthetic_corpus(g.seed, p) : gen_multi_env_corpus(g.seed, n_envs, p);
  ensure_dir(g.out_dir);
  const auto views_path = (fs::path(g.out_dir) / "views.jsonl").string();
  const auto bench_path = (fs::path(g.out_dir) / "benchmark.jsonl").string();
  std::ofstream vs(views_path), bs(bench_path);
  write_view_manifest(vs, corpus.views);
  write_benchmark(bs, corpus.samples);
  if (!vs || !bs) throw ConfigError("cannot write fixtures to " + g.out_dir);
  std::cout << json{{"views", views_path},
                    {"benchmark", bench_path},
                    {"n_views", corpus.views.views.size()},
                    {"n_samples", corpus.samples.size()},
                    {"seed", g.seed}}
                   .dump()
            << '\n';
  return kExitOk;
}

int cmd_validate(const std::string& memory_file) {
  std::ifstream in(memory_file, std::ios::binary);
  if (!in) throw ConfigError("cannot open memory file " + memory_file);
  try {
    const auto m = read_memory(in);
    std::cout << json{{"valid", true}, {"env_id", m.env_id()}, {"n_nodes", m.size()}}.dump()
              << '\n';
    return kExitOk;
  } catch (const StructureError& e) {
    std::cout << json{{"valid", false}, {"violations", e.details()}}.dump() << '\n';
    return kExitRuntime;
  }
}

json error_json(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affordance-aware hierarchical memory: build, query, evaluate"};
  app.require_subcommand(1);

  Common common;
  std::string manifest, memory_file, instruction, benchmark, sweep_spec = "0:1:0.2";
  int top_k = 10;
  bool select = false, ablate = false;
  GenOptions gen;

  auto* build = app.add_subcommand("build", "build memories from a view manifest");
  add_common(build, common);
  build->add_option("--manifest", manifest, "view manifest (JSONL)");

  auto* query = app.add_subcommand("query", "retrieve views for an instruction");
  add_common(query, common);
  query->add_option("--memory", memory_file, "memory file")->required();
  query->add_option("--instruction", instruction, "pick-and-place instruction")->required();
  query->add_option("--top-k", top_k, "entries per ranked list");
  query->add_flag("--select", select, "read a 1-based choice per role from stdin");

  auto* eval = app.add_subcommand("eval", "run a benchmark manifest");
  add_common(eval, common);
  eval->add_option("--benchmark", benchmark, "benchmark manifest (JSONL)");
  eval->add_flag("--ablate", ablate, "run ablation rows a..e");

  auto* sweep = app.add_subcommand("sweep", "recall over a range of alpha");
  add_common(sweep, common);
  sweep->add_option("--benchmark", benchmark, "benchmark manifest (JSONL)");
  sweep->add_option("--sweep-alpha", sweep_spec, "start:stop:step");

  auto* gen_cmd = app.add_subcommand("gen-fixtures", "write a synthetic corpus");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--preset", gen.preset, "small, mixed or large");
  gen_cmd->add_option("--out-dir", gen.out_dir);
  gen_cmd->add_option("--n-envs", gen.n_envs);
  gen_cmd->add_option("--n-rooms", gen.params.n_rooms);
  gen_cmd->add_option("--views-per-room", gen.params.views_per_room);
  gen_cmd->add_option("--objects-per-room", gen.params.objects_per_room);
  gen_cmd->add_option("--n-unambiguous", gen.params.n_unambiguous);
  gen_cmd->add_option("--n-lexical-decoy", gen.params.n_lexical_decoy);
  gen_cmd->add_option("--n-visual-decoy", gen.params.n_visual_decoy);
  gen_cmd->add_option("--n-affordance-tie", gen.params.n_affordance_tie);
  gen_cmd->add_option("--n-affordance-decoy", gen.params.n_affordance_decoy);
  gen_cmd->add_option("--decoys-per-sample", gen.params.decoys_per_sample);

  auto* validate = app.add_subcommand("validate", "check a memory file against tree invariants");
  validate->add_option("--memory", memory_file, "memory file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*validate) return cmd_validate(memory_file);
    AppConfig cfg = resolve(common);
    if (!manifest.empty()) cfg.paths.manifest = manifest;
    if (!benchmark.empty()) cfg.paths.benchmark = benchmark;
    if (*build) return cmd_build(cfg);
    if (*query) return cmd_query(cfg, memory_file, instruction, top_k, select);
    if (*eval) return cmd_eval(cfg, ablate);
    if (*sweep) return cmd_sweep(cfg, sweep_spec);
  } catch (const ConfigError& e) {
    std::cout << error_json("ConfigError", e.what()).dump() << '\n';
    log(e.what());
    return kExitConfig;
  } catch (const BuildError& e) {
    auto j = error_json(e.code(), e.what());
    j["failed_views"] = e.failed_views();
    std::cout << j.dump() << '\n';
    log(e.what());
    return kExitRuntime;
  } catch (const StructureError& e) {
    auto j = error_json("StructureError", e.what());
    j["details"] = e.details();
    std::cout << j.dump() << '\n';
    log(e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cout << error_json("RuntimeError", e.what()).dump() << '\n';
    log(e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
