#include "affmem/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace affmem {

namespace {

// Token-disjoint vocabularies. No word here appears in another list, in the
// instruction templates, or in a room name.
const std::vector<std::string> kRooms = {"kitchen", "bedroom", "bathroom", "lounge",
                                         "office",  "pantry",  "hallway",  "library",
                                         "studio",  "nursery", "garage",   "attic"};

const std::vector<std::string> kSampleAdjectives = {
    "striped", "ceramic", "wooden",  "metal",   "plastic", "woven",     "velvet",  "leather",
    "bamboo",  "marble",  "copper",  "brass",   "wicker",  "linen",     "porcelain", "rubber",
    "silver",  "golden",  "checkered", "dotted", "floral", "quilted",   "rustic",  "vintage",
    "modern",  "tiny",    "huge",    "round",   "square",  "oval",      "tall",    "stubby",
    "heavy",   "slender", "folding", "padded",  "painted", "carved",    "polished", "enamel"};

const std::vector<std::string> kAppearances = {"glossy",  "matte",  "shiny",   "faded",
                                               "scratched", "chipped", "spotless", "cracked",
                                               "dented",  "translucent"};

const std::vector<std::string> kColors = {"red",   "blue",  "green", "yellow", "orange", "purple",
                                          "pink",  "black", "white", "brown",  "gray",   "teal"};

const std::vector<std::string> kPickNouns = {
    "mug",  "cup",    "kettle", "bowl",   "bottle", "jar",    "book",  "vase",    "plate", "spoon",
    "teapot", "pitcher", "tumbler", "ladle", "whisk", "towel", "pillow", "blanket", "basket", "box",
    "tray", "toy",    "doll",   "ball",   "hat",    "shoe",   "clock", "radio",   "camera", "phone"};

const std::vector<std::string> kPlaceNouns = {
    "table",   "desk",    "chair",    "sofa",     "bed",      "stool",   "nightstand", "sideboard",
    "ottoman", "windowsill", "mantel", "bookcase", "armchair", "bureau", "console",    "credenza",
    "hutch",   "island",  "pedestal", "platform", "ledge",    "workbench", "vanity",   "footstool",
    "couch",   "cart",    "trolley",  "crate",    "chest",    "locker"};

// Near-duplicate names: a receptacle's decoy is a pickable accessory, a
// target's decoy is something to put things on.
const std::vector<std::string> kPickableSuffixes = {"lamp", "organizer", "figurine", "ornament",
                                                    "model", "sticker"};
const std::vector<std::string> kPlaceableSuffixes = {"holder", "stand", "rack", "hook", "caddy",
                                                     "mat"};

const std::vector<std::string> kBackgroundAdjectives = {"dusty", "worn", "spare", "plain",
                                                        "old",   "new",  "small", "large"};
const std::vector<std::string> kBackgroundPickables = {
    "stapler", "sponge", "candle", "remote", "wallet", "charger", "notebook", "scissors",
    "marker",  "tape",   "battery", "coaster", "napkin", "comb",  "brush",    "key",
    "coin",    "envelope", "ruler", "pencil"};
const std::vector<std::string> kBackgroundPlaceables = {"shelf",    "counter", "cabinet", "dresser",
                                                        "bench",    "cupboard", "drawer", "rug",
                                                        "tabletop", "sill"};

const std::vector<std::string> kTemplates = {"Take {T} and place it on {R}.", "Move {T} to {R}.",
                                             "Please bring {T} to {R}.", "Put {T} onto {R}."};

// Standard distributions are implementation-defined; these are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) {
    const double u = double(eng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::size_t index(std::size_t n) { return std::size_t(eng_() % n); }
  template <class T>
  const T& choice(const std::vector<T>& v) {
    return v[index(v.size())];
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 eng_;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

// Draws without replacement from a shuffled copy of a vocabulary.
class Pool {
 public:
  Pool(const std::vector<std::string>& words, Rng& rng, std::string what)
      : words_(words), what_(std::move(what)) {
    rng.shuffle(words_);
  }
  std::string take() {
    if (next_ >= words_.size()) {
      throw ConfigError("synthetic vocabulary exhausted: not enough " + what_ +
                        " for the requested samples");
    }
    return words_[next_++];
  }

 private:
  std::vector<std::string> words_;
  std::string what_;
  std::size_t next_ = 0;
};

enum class Kind { Unambiguous, LexicalDecoy, VisualDecoy, AffordanceTie, AffordanceDecoy };

const char* kind_label(Kind k) {
  switch (k) {
    case Kind::Unambiguous: return "unambiguous";
    case Kind::LexicalDecoy: return "lexical_decoy";
    case Kind::VisualDecoy: return "visual_decoy";
    case Kind::AffordanceTie: return "affordance_tie";
    case Kind::AffordanceDecoy: return "affordance_decoy";
  }
  return "?";
}

struct DraftView {
  int room = 0;
  std::string caption;
  std::vector<Planting> plantings;
  bool adversarial = false;  // must sort before the sample's positives
  std::string image_ref;
};

struct RoleDraft {
  std::string phrase;
  std::vector<std::size_t> positives;  // indices into the draft view list
  std::size_t preferred = SIZE_MAX;
};

class Generator {
 public:
  Generator(std::uint64_t seed, const CorpusParams& p)
      : p_(p),
        rng_(seed),
        adjectives_(kSampleAdjectives, rng_, "object adjectives"),
        picks_(kPickNouns, rng_, "pickable object names"),
        places_(kPlaceNouns, rng_, "receptacle names") {
    rooms_ = kRooms;
    rng_.shuffle(rooms_);
    rooms_.resize(std::size_t(p.n_rooms));
    free_.assign(std::size_t(p.n_rooms), p.views_per_room);
  }

  SyntheticCorpus run();

 private:
  struct SampleDraft {
    Kind kind;
    bool stress_target = true;
    RoleDraft target, receptacle;
  };

  double pick_score() { return round6(rng_.uniform(0.6, 0.95)); }

  int room_with_space(int need, const std::vector<int>& exclude = {}) {
    int best = -1;
    for (int r = 0; r < p_.n_rooms; ++r) {
      if (std::find(exclude.begin(), exclude.end(), r) != exclude.end()) continue;
      if (free_[std::size_t(r)] < need) continue;
      if (best < 0 || free_[std::size_t(r)] > free_[std::size_t(best)]) best = r;
    }
    if (best < 0) {
      throw ConfigError("synthetic environment " + p_.env_id + " has no room with " +
                        std::to_string(need) + " free views; raise views_per_room or n_rooms");
    }
    return best;
  }

  std::size_t add_view(int room, std::string caption, std::vector<Planting> plantings,
                       bool adversarial = false) {
    --free_[std::size_t(room)];
    views_.push_back({room, std::move(caption), std::move(plantings), adversarial, {}});
    return views_.size() - 1;
  }

  Planting background_object(bool pickable) {
    const auto& adj = rng_.choice(kBackgroundAdjectives);
    if (pickable) {
      return {adj + " " + rng_.choice(kBackgroundPickables), Action::pick(),
              round6(rng_.uniform(0.3, 0.8))};
    }
    return {adj + " " + rng_.choice(kBackgroundPlaceables), Action::place(),
            round6(rng_.uniform(0.6, 0.95))};
  }

  static std::string caption_of(const std::vector<Planting>& ps) {
    std::string out;
    for (const auto& pl : ps) out += (out.empty() ? "" : ", ") + pl.description;
    return out;
  }

  std::string room_name(int r) const { return rooms_[std::size_t(r)]; }

  // One role, planted according to `kind` (the non-stressed role is always unambiguous).
  RoleDraft plant(Kind kind, bool target_role) {
    const Action action = target_role ? Action::pick() : Action::place();
    const Action opposite = target_role ? Action::place() : Action::pick();
    const std::string noun = target_role ? picks_.take() : places_.take();
    const int D = p_.decoys_per_sample;
    RoleDraft role;

    switch (kind) {
      case Kind::Unambiguous: {
        const std::string obj = adjectives_.take() + " " + noun;
        const int room = room_with_space(1);
        auto extra = background_object(rng_.index(2) == 0);
        std::vector<Planting> ps = {{obj, action, pick_score()}, extra};
        role.positives.push_back(add_view(room, caption_of(ps), ps));
        if (rng_.index(2) == 0) {
          role.phrase = "the " + obj + " in the " + room_name(room);
        } else {
          role.phrase = "the " + obj + " with a " + extra.description;
        }
        break;
      }
      case Kind::LexicalDecoy: {
        const std::string obj = adjectives_.take() + " " + noun;
        const int home = room_with_space(1);
        role.positives.push_back(add_view(home, obj, {{obj, action, pick_score()}}));
        std::vector<int> used = {home};
        const int n_decoy_rooms = std::min(2, p_.n_rooms - 1);
        for (int k = 0; k < n_decoy_rooms; ++k) {
          const int share = D / n_decoy_rooms + (k < D % n_decoy_rooms ? 1 : 0);
          const int r = room_with_space(share, used);
          used.push_back(r);
          for (int i = 0; i < share; ++i) add_view(r, obj, {{obj, action, pick_score()}}, true);
        }
        role.phrase = "the " + obj + " in the " + room_name(home);
        break;
      }
      case Kind::VisualDecoy: {
        const int room = room_with_space(1 + D);
        const std::string app = rng_.choice(kAppearances);
        const std::string color = rng_.choice(kColors);
        role.positives.push_back(
            add_view(room, app + " " + color + " " + noun, {{noun, action, pick_score()}}));
        for (int i = 0; i < D; ++i) {
          std::string a2, c2;
          do a2 = rng_.choice(kAppearances); while (a2 == app);
          do c2 = rng_.choice(kColors); while (c2 == color);
          add_view(room, a2 + " " + c2 + " " + noun, {{noun, action, pick_score()}}, true);
        }
        role.phrase = "the " + app + " " + color + " " + noun + " in the " + room_name(room);
        break;
      }
      case Kind::AffordanceTie: {
        const std::string obj = adjectives_.take() + " " + noun;
        const int room = room_with_space(2);
        const double hi = round6(rng_.uniform(0.85, 0.95));
        const double lo = round6(hi - rng_.uniform(0.35, 0.6));
        const auto lo_view = add_view(room, obj, {{obj, action, lo}}, true);
        const auto hi_view = add_view(room, obj, {{obj, action, hi}});
        role.positives = {hi_view, lo_view};
        role.preferred = hi_view;
        role.phrase = "the " + obj + " in the " + room_name(room);
        break;
      }
      case Kind::AffordanceDecoy: {
        const std::string obj = adjectives_.take() + " " + noun;
        const int room = room_with_space(1 + D);
        std::vector<Planting> ps = {{obj, action, pick_score()}, background_object(true),
                                    background_object(false)};
        role.positives.push_back(add_view(room, caption_of(ps), ps));
        for (int i = 0; i < D; ++i) {
          const std::string decoy =
              obj + " " + rng_.choice(target_role ? kPlaceableSuffixes : kPickableSuffixes);
          add_view(room, decoy, {{decoy, opposite, pick_score()}}, true);
        }
        role.phrase = "the " + obj + " in the " + room_name(room);
        break;
      }
    }
    return role;
  }

  CorpusParams p_;
  Rng rng_;
  Pool adjectives_, picks_, places_;
  std::vector<std::string> rooms_;
  std::vector<int> free_;
  std::vector<DraftView> views_;
};

SyntheticCorpus Generator::run() {
  std::vector<SampleDraft> drafts;
  auto add = [&](Kind k, int n) {
    for (int i = 0; i < n; ++i) {
      const bool stress_target = k == Kind::AffordanceTie || k == Kind::Unambiguous || i % 2 == 0;
      drafts.push_back({k, stress_target, {}, {}});
    }
  };
  add(Kind::Unambiguous, p_.n_unambiguous);
  add(Kind::LexicalDecoy, p_.n_lexical_decoy);
  add(Kind::VisualDecoy, p_.n_visual_decoy);
  add(Kind::AffordanceTie, p_.n_affordance_tie);
  add(Kind::AffordanceDecoy, p_.n_affordance_decoy);

  // Largest blocks first so that room capacity is used greedily.
  auto block = [&](Kind k) {
    switch (k) {
      case Kind::VisualDecoy:
      case Kind::AffordanceDecoy: return 0;
      case Kind::LexicalDecoy: return 1;
      case Kind::AffordanceTie: return 2;
      default: return 3;
    }
  };
  std::vector<std::size_t> order(drafts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return block(drafts[a].kind) < block(drafts[b].kind);
  });
  for (auto i : order) {
    auto& d = drafts[i];
    if (d.stress_target) {
      d.target = plant(d.kind, true);
    } else {
      d.receptacle = plant(d.kind, false);
    }
  }
  for (auto i : order) {
    auto& d = drafts[i];
    if (d.stress_target) {
      d.receptacle = plant(Kind::Unambiguous, false);
    } else {
      d.target = plant(Kind::Unambiguous, true);
    }
  }

  // Background views fill every remaining slot.
  for (int r = 0; r < p_.n_rooms; ++r) {
    const int n_free = free_[std::size_t(r)];
    if (n_free == 0) continue;
    std::vector<std::vector<Planting>> objects(static_cast<std::size_t>(n_free));
    const int total = std::max(p_.objects_per_room, n_free);
    for (int k = 0; k < total; ++k) {
      auto& ps = objects[std::size_t(k % n_free)];
      Planting obj;
      do obj = background_object(rng_.index(3) != 0);
      while (std::any_of(ps.begin(), ps.end(),
                         [&](const Planting& q) { return q.description == obj.description; }));
      ps.push_back(std::move(obj));
    }
    for (auto& ps : objects) add_view(r, caption_of(ps), ps);
  }

  // image_ref ordinals: adversarial views first unless disabled, each group shuffled.
  std::vector<std::size_t> first, rest;
  for (std::size_t i = 0; i < views_.size(); ++i) {
    (p_.adversarial_ids && views_[i].adversarial ? first : rest).push_back(i);
  }
  rng_.shuffle(first);
  rng_.shuffle(rest);
  first.insert(first.end(), rest.begin(), rest.end());
  for (std::size_t ord = 0; ord < first.size(); ++ord) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "-v%04zu", ord);
    views_[first[ord]].image_ref = p_.env_id + buf;
  }

  const int cols = int(std::ceil(std::sqrt(double(p_.n_rooms))));
  SyntheticCorpus out;
  for (const auto& i : first) {
    const auto& v = views_[i];
    ViewRecord rec;
    rec.image_ref = v.image_ref;
    rec.env_id = p_.env_id;
    rec.width = p_.width;
    rec.height = p_.height;
    const double cx = p_.room_spacing * double(v.room % cols);
    const double cy = p_.room_spacing * double(v.room / cols);
    rec.pose = Position3D(round6(cx + rng_.uniform(-p_.jitter, p_.jitter)),
                          round6(cy + rng_.uniform(-p_.jitter, p_.jitter)),
                          round6(1.2 + rng_.uniform(-0.05, 0.05)));
    out.views.synthetic[rec.image_ref] = {rec, v.caption, room_name(v.room), v.plantings};
    out.views.views.push_back(std::move(rec));
  }
  std::sort(out.views.views.begin(), out.views.views.end(),
            [](const ViewRecord& a, const ViewRecord& b) { return a.image_ref < b.image_ref; });

  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const auto& d = drafts[i];
    BenchmarkSample s;
    char buf[32];
    std::snprintf(buf, sizeof buf, "-s%03zu", i);
    s.sample_id = p_.env_id + buf;
    s.env_id = p_.env_id;
    s.kind = kind_label(d.kind);
    std::string text = rng_.choice(kTemplates);
    text.replace(text.find("{T}"), 3, d.target.phrase);
    text.replace(text.find("{R}"), 3, d.receptacle.phrase);
    s.instruction = std::move(text);
    for (auto v : d.target.positives) s.positives_target.insert(views_[v].image_ref);
    for (auto v : d.receptacle.positives) s.positives_receptacle.insert(views_[v].image_ref);
    if (d.target.preferred != SIZE_MAX) s.preferred_target = views_[d.target.preferred].image_ref;
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace

int CorpusParams::n_samples() const {
  return n_unambiguous + n_lexical_decoy + n_visual_decoy + n_affordance_tie + n_affordance_decoy;
}

void CorpusParams::validate() const {
  if (env_id.empty()) throw ConfigError("corpus env_id must not be empty");
  if (n_rooms < 1 || n_rooms > int(kRooms.size())) {
    throw ConfigError("n_rooms must lie in [1, " + std::to_string(kRooms.size()) + "]");
  }
  if (views_per_room < 1) throw ConfigError("views_per_room must be >= 1");
  if (objects_per_room < 1) throw ConfigError("objects_per_room must be >= 1");
  if (n_unambiguous < 0 || n_lexical_decoy < 0 || n_visual_decoy < 0 || n_affordance_tie < 0 ||
      n_affordance_decoy < 0) {
    throw ConfigError("sample counts must be non-negative");
  }
  if (decoys_per_sample < 1) throw ConfigError("decoys_per_sample must be >= 1");
  if (n_lexical_decoy > 0 && n_rooms < 2) {
    throw ConfigError("lexical decoys need at least two rooms");
  }
  if (!(room_spacing > 0.0) || !(jitter >= 0.0)) {
    throw ConfigError("room_spacing must be > 0 and jitter >= 0");
  }
  if (width < 1 || height < 1) throw ConfigError("image size must be positive");
}

SyntheticCorpus gen_synthetic_corpus(std::uint64_t seed, const CorpusParams& params) {
  params.validate();
  Generator g(seed, params);
  return g.run();
}

SyntheticCorpus gen_multi_env_corpus(std::uint64_t seed, int n_envs, const CorpusParams& per_env) {
  if (n_envs < 1) throw ConfigError("n_envs must be >= 1");
  SyntheticCorpus out;
  for (int e = 0; e < n_envs; ++e) {
    auto p = per_env;
    char buf[32];
    std::snprintf(buf, sizeof buf, "env%03d", e);
    p.env_id = buf;
    auto part = gen_synthetic_corpus(splitmix64(seed + std::uint64_t(e)), p);
    out.views.views.insert(out.views.views.end(), part.views.views.begin(), part.views.views.end());
    out.views.synthetic.merge(part.views.synthetic);
    out.samples.insert(out.samples.end(), part.samples.begin(), part.samples.end());
  }
  return out;
}

CorpusParams mixed_benchmark_params() {
  CorpusParams p;
  p.n_rooms = 8;
  p.views_per_room = 16;
  p.objects_per_room = 24;
  p.n_unambiguous = 2;
  p.n_lexical_decoy = 2;
  p.n_visual_decoy = 2;
  p.n_affordance_tie = 2;
  p.n_affordance_decoy = 2;
  return p;
}

CorpusParams large_env_params(int n_views) {
  if (n_views < 16) throw ConfigError("large environment needs at least 16 views");
  CorpusParams p;
  p.views_per_room = 16;
  p.n_rooms = (n_views + 15) / 16;
  if (p.n_rooms > int(kRooms.size())) {
    p.views_per_room = (n_views + int(kRooms.size()) - 1) / int(kRooms.size());
    p.n_rooms = int(kRooms.size());
  }
  p.objects_per_room = p.views_per_room * 2;
  return p;
}

}  // namespace affmem
