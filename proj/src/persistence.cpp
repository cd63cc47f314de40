#include "affmem/persistence.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace affmem {

using nlohmann::json;

namespace {

json to_json(const Embedding& e) { return e.to_std(); }

json to_json(const Position3D& p) { return json::array({p.x(), p.y(), p.z()}); }

json to_json(const AffordanceTriplet& t) {
  return {{"instance_id", t.instance_id}, {"action", t.action.name()}, {"score", t.score}};
}

AffordanceTriplet triplet_from_json(const json& j) {
  return {j.at("instance_id").get<std::string>(), Action::named(j.at("action").get<std::string>()),
          j.at("score").get<double>()};
}

json node_to_json(const MemoryNode& n) {
  json j;
  j["id"] = n.id;
  j["level"] = n.level;
  j["kind"] = to_string(n.kind);
  j["description"] = n.description;
  j["position"] = to_json(n.position);
  j["parent"] = n.parent ? json(*n.parent) : json(nullptr);
  j["children"] = n.children;
  if (n.text_embedding) j["text_embedding"] = to_json(*n.text_embedding);
  if (n.visual_embedding) j["visual_embedding"] = to_json(*n.visual_embedding);
  if (n.image_ref) j["image_ref"] = *n.image_ref;
  if (n.kind == NodeKind::Instance) {
    j["affordances"] = json::array();
    for (const auto& t : n.affordances) j["affordances"].push_back(to_json(t));
  }
  if (n.affordance) j["affordance"] = to_json(*n.affordance);
  return j;
}

NodeKind kind_from_string(const std::string& s) {
  if (s == "affordance") return NodeKind::Affordance;
  if (s == "instance") return NodeKind::Instance;
  if (s == "view") return NodeKind::View;
  if (s == "region") return NodeKind::Region;
  throw FormatError("unknown node kind '" + s + "'");
}

MemoryNode node_from_json(const json& j) {
  MemoryNode n;
  n.id = j.at("id").get<std::string>();
  n.level = j.at("level").get<int>();
  n.kind = kind_from_string(j.at("kind").get<std::string>());
  n.description = j.at("description").get<std::string>();
  const auto pos = j.at("position").get<std::vector<double>>();
  if (pos.size() != 3) throw FormatError("node " + n.id + ": position needs 3 values");
  n.position = Position3D(pos[0], pos[1], pos[2]);
  if (!j.at("parent").is_null()) n.parent = j.at("parent").get<std::string>();
  n.children = j.at("children").get<std::vector<std::string>>();
  if (j.contains("text_embedding")) {
    n.text_embedding = Embedding::from_std(j["text_embedding"].get<std::vector<double>>());
  }
  if (j.contains("visual_embedding")) {
    n.visual_embedding = Embedding::from_std(j["visual_embedding"].get<std::vector<double>>());
  }
  if (j.contains("image_ref")) n.image_ref = j["image_ref"].get<std::string>();
  if (j.contains("affordances")) {
    for (const auto& t : j["affordances"]) n.affordances.push_back(triplet_from_json(t));
  }
  if (j.contains("affordance")) n.affordance = triplet_from_json(j["affordance"]);
  return n;
}

}  // namespace

void write_memory(std::ostream& out, const EmbodiedMemory& m) {
  const json header = {{"schema_version", kMemorySchemaVersion},
                       {"env_id", m.env_id()},
                       {"n_levels", m.n_levels()},
                       {"d_t", m.d_t()},
                       {"d_m", m.d_m()},
                       {"n_nodes", m.size()}};
  out << header.dump() << '\n';
  for (const auto& [id, n] : m.nodes()) out << node_to_json(n).dump() << '\n';
}

void save_memory(const EmbodiedMemory& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write memory file " + path);
  write_memory(out, m);
  if (!out) throw ConfigError("failed writing memory file " + path);
}

EmbodiedMemory read_memory(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("memory file is empty");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("memory header: ") + e.what());
  }
  std::string env;
  int n_levels = 0;
  Eigen::Index d_t = 0, d_m = 0;
  std::size_t n_nodes = 0;
  try {
    const int version = header.at("schema_version").get<int>();
    if (version != kMemorySchemaVersion) {
      throw FormatError("unsupported memory schema_version " + std::to_string(version) +
                        " (expected " + std::to_string(kMemorySchemaVersion) + ")");
    }
    env = header.at("env_id").get<std::string>();
    n_levels = header.at("n_levels").get<int>();
    d_t = header.at("d_t").get<Eigen::Index>();
    d_m = header.at("d_m").get<Eigen::Index>();
    n_nodes = header.at("n_nodes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("memory header: ") + e.what());
  }

  std::vector<MemoryNode> nodes;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nodes.push_back(node_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("memory line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DegenerateVectorError& e) {
      throw FormatError("memory line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DimensionError& e) {
      throw FormatError("memory line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (nodes.size() != n_nodes) {
    throw FormatError("memory file truncated: header announces " + std::to_string(n_nodes) +
                      " nodes, found " + std::to_string(nodes.size()));
  }
  EmbodiedMemory m(env, n_levels, d_t, d_m, std::move(nodes));
  if (auto report = validate_memory(m); !report.empty()) {
    throw StructureError("memory file violates tree invariants", describe(report));
  }
  return m;
}

EmbodiedMemory load_memory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open memory file " + path);
  return read_memory(in);
}

ViewManifest read_view_manifest(std::istream& in) {
  ViewManifest out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ViewRecord v;
      v.image_ref = j.at("image_ref").get<std::string>();
      const auto& pose = j.at("pose");
      v.pose = Position3D(pose.at("x").get<double>(), pose.at("y").get<double>(),
                          pose.at("z").get<double>());
      v.width = j.at("width").get<int>();
      v.height = j.at("height").get<int>();
      v.env_id = j.at("env_id").get<std::string>();
      if (j.contains("caption") || j.contains("plantings") || j.contains("room")) {
        SyntheticView s;
        s.record = v;
        s.caption = j.value("caption", std::string());
        s.room = j.value("room", std::string());
        for (const auto& p : j.value("plantings", json::array())) {
          s.plantings.push_back({p.at("description").get<std::string>(),
                                 Action::named(p.at("action").get<std::string>()),
                                 p.at("score").get<double>()});
        }
        out.synthetic[v.image_ref] = std::move(s);
      }
      out.views.push_back(std::move(v));
    } catch (const json::exception& e) {
      throw FormatError("view manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

ViewManifest load_view_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open view manifest " + path);
  return read_view_manifest(in);
}

void write_view_manifest(std::ostream& out, const ViewManifest& manifest) {
  for (const auto& v : manifest.views) {
    json j = {{"image_ref", v.image_ref},
              {"pose", {{"x", v.pose.x()}, {"y", v.pose.y()}, {"z", v.pose.z()}}},
              {"width", v.width},
              {"height", v.height},
              {"env_id", v.env_id}};
    if (auto it = manifest.synthetic.find(v.image_ref); it != manifest.synthetic.end()) {
      j["caption"] = it->second.caption;
      j["room"] = it->second.room;
      j["plantings"] = json::array();
      for (const auto& p : it->second.plantings) {
        j["plantings"].push_back(
            {{"description", p.description}, {"action", p.action.name()}, {"score", p.score}});
      }
    }
    out << j.dump() << '\n';
  }
}

std::map<std::string, std::vector<ViewRecord>> split_by_env(const std::vector<ViewRecord>& views) {
  std::map<std::string, std::vector<ViewRecord>> out;
  for (const auto& v : views) out[v.env_id].push_back(v);
  return out;
}

}  // namespace affmem
