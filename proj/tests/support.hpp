// Shared fixtures for the unit tests.
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "affmem/builder.hpp"
#include "affmem/persistence.hpp"
#include "affmem/providers.hpp"

namespace affmem::testing {

inline ProviderConfig mock_config(Eigen::Index dim = 128) {
  ProviderConfig cfg;
  cfg.d_t = dim;
  cfg.d_m = dim;
  cfg.max_parallel_requests = 2;
  return cfg;
}

/// Hand-planted environment for the Mock backend.
struct Scene {
  std::string env = "env";
  SyntheticCatalog catalog;
  std::vector<ViewRecord> views;

  Scene& view(const std::string& ref, const std::string& room, Position3D pos,
              std::vector<Planting> plantings, std::string caption = "") {
    ViewRecord r{ref, pos, 64, 48, env};
    views.push_back(r);
    catalog[ref] = SyntheticView{r, std::move(caption), room, std::move(plantings)};
    return *this;
  }

  BuildConfig build_config(Eigen::Index dim = 128) const {
    BuildConfig cfg;
    cfg.providers = mock_config(dim);
    return cfg;
  }

  EmbodiedMemory build(Eigen::Index dim = 128) const {
    const auto cfg = build_config(dim);
    MockProvider provider(cfg.providers, catalog);
    return build_memory(views, cfg, provider);
  }

  MockProvider provider(Eigen::Index dim = 128) const { return MockProvider(mock_config(dim), catalog); }
};

inline Planting pick(const std::string& what, double f) { return {what, Action::pick(), f}; }
inline Planting place(const std::string& what, double f) { return {what, Action::place(), f}; }

/// Two rooms of three views each, 20 m apart.
inline Scene two_room_scene() {
  Scene s;
  s.view("a0", "kitchen", {0.0, 0.0, 1.2}, {pick("green cup", 0.9), place("kitchen counter", 0.8)})
      .view("a1", "kitchen", {1.0, 0.5, 1.2}, {pick("red mug", 0.7)})
      .view("a2", "kitchen", {0.5, 1.0, 1.2}, {place("wooden table", 0.9)})
      .view("b0", "bedroom", {20.0, 0.0, 1.2}, {pick("photo frame", 0.8), place("side table", 0.9)})
      .view("b1", "bedroom", {21.0, 0.5, 1.2}, {pick("blue pillow", 0.6)})
      .view("b2", "bedroom", {20.5, 1.0, 1.2}, {place("double bed", 0.7)});
  return s;
}

inline std::string serialize(const EmbodiedMemory& m) {
  std::ostringstream out;
  write_memory(out, m);
  return out.str();
}

}  // namespace affmem::testing
