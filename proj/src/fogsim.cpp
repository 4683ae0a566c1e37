#include "defog/fogsim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "defog/random.hpp"

namespace defog {

namespace {

nlohmann::json unit_to_json(const UnitSpec& u) {
  return {{"type", u.type},   {"mobile", u.mobile}, {"count", {u.count_min, u.count_max}},
          {"sight", u.sight}, {"speed", u.speed},   {"roam", u.roam},
          {"raid", u.raid}};
}

UnitSpec unit_from_json(const nlohmann::json& j) {
  UnitSpec u;
  u.type = j.at("type").get<std::string>();
  u.mobile = j.value("mobile", true);
  if (j.contains("count")) {
    const auto& c = j.at("count");
    if (c.is_array()) {
      u.count_min = c.at(0).get<int>();
      u.count_max = c.at(1).get<int>();
    } else {
      u.count_min = u.count_max = c.get<int>();
    }
  }
  u.sight = j.value("sight", 1);
  u.speed = j.value("speed", 0.0);
  u.roam = j.value("roam", 0.2);
  u.raid = j.value("raid", 0.0);
  return u;
}

UnitSpec mobile(std::string type, int lo, int hi, int sight, double speed, double roam,
                double raid) {
  return {std::move(type), true, lo, hi, sight, speed, roam, raid};
}

UnitSpec building(std::string type, int lo, int hi, int sight) {
  return {std::move(type), false, lo, hi, sight, 0.0, 0.0, 0.0};
}

struct Agent {
  UnitRecord rec;
  bool mobile = false;
  double speed = 0;
  double roam = 0;
  double raid = 0;
  double home_x = 0, home_y = 0;
  double foe_x = 0, foe_y = 0;
  double wx = 0, wy = 0;
};

class Simulator {
 public:
  explicit Simulator(const SimConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cell_ = cfg.map_extent / static_cast<double>(cfg.grid_size);
    upper_ = std::nextafter(cfg.map_extent, 0.0);
  }

  Episode run() {
    const int corner = static_cast<int>(rnd::uniform_int(rng_, 0, 3));
    const auto home = base_cell(corner);
    const auto foe = base_cell(3 - corner);
    place_player(Owner::friendly, cfg_.friendly_units, home, foe);
    place_player(Owner::enemy, cfg_.enemy_units, foe, home);

    Episode ep;
    ep.seed = cfg_.seed;
    ep.frames.reserve(cfg_.episode_ticks);
    for (int t = 0; t < cfg_.episode_ticks; ++t) {
      Frame f;
      f.tick = t;
      f.units.reserve(agents_.size());
      for (const auto& a : agents_) f.units.push_back(a.rec);
      ep.frames.push_back(std::move(f));
      step();
    }
    return ep;
  }

 private:
  std::pair<long, long> base_cell(int corner) {
    const long g = static_cast<long>(cfg_.grid_size);
    const long m = std::min<long>(cfg_.base_radius, (g - 1) / 2);
    long r = (corner & 2) ? g - 1 - m : m;
    long c = (corner & 1) ? g - 1 - m : m;
    r = std::clamp(r + rnd::uniform_int(rng_, -1, 1), m, g - 1 - m);
    c = std::clamp(c + rnd::uniform_int(rng_, -1, 1), m, g - 1 - m);
    return {r, c};
  }

  double clamp_pos(double v) const { return std::clamp(v, 0.0, upper_); }

  void pick_waypoint(Agent& a) {
    const double u = rnd::u01(rng_);
    if (u < a.roam) {
      a.wx = rnd::uniform(rng_, 0.0, upper_);
      a.wy = rnd::uniform(rng_, 0.0, upper_);
    } else {
      const bool raid = u < a.roam + a.raid;
      const double cx = raid ? a.foe_x : a.home_x, cy = raid ? a.foe_y : a.home_y;
      a.wx = clamp_pos(cx + rnd::uniform(rng_, -cfg_.home_radius, cfg_.home_radius));
      a.wy = clamp_pos(cy + rnd::uniform(rng_, -cfg_.home_radius, cfg_.home_radius));
    }
  }

  double centre(long cell) const { return (static_cast<double>(cell) + 0.5) * cell_; }

  void place_player(Owner owner, const std::vector<UnitSpec>& specs, std::pair<long, long> base,
                    std::pair<long, long> foe) {
    const long g = static_cast<long>(cfg_.grid_size);
    const double hx = centre(base.second), hy = centre(base.first);

    std::vector<std::pair<long, long>> cells;
    for (long r = base.first - cfg_.base_radius; r <= base.first + cfg_.base_radius; ++r)
      for (long c = base.second - cfg_.base_radius; c <= base.second + cfg_.base_radius; ++c)
        if (r >= 0 && r < g && c >= 0 && c < g) cells.emplace_back(r, c);
    for (std::size_t i = cells.size(); i > 1; --i) {
      std::swap(cells[i - 1], cells[rnd::uniform_int(rng_, 0, static_cast<std::int64_t>(i) - 1)]);
    }

    std::size_t used = 0;
    for (const auto& spec : specs) {
      const int n = static_cast<int>(rnd::uniform_int(rng_, spec.count_min, spec.count_max));
      for (int k = 0; k < n; ++k) {
        Agent a;
        a.rec.type = spec.type;
        a.rec.owner = owner;
        a.mobile = spec.mobile;
        a.speed = spec.speed;
        a.roam = spec.roam;
        a.raid = spec.raid;
        a.home_x = hx;
        a.home_y = hy;
        a.foe_x = centre(foe.second);
        a.foe_y = centre(foe.first);
        if (!spec.mobile) {
          if (used >= cells.size()) {
            throw DataError("impossible building placement: more than " +
                            std::to_string(cells.size()) + " buildings for a base of radius " +
                            std::to_string(cfg_.base_radius) + " cells");
          }
          const auto [r, c] = cells[used++];
          a.rec.x = clamp_pos((static_cast<double>(c) + rnd::uniform(rng_, 0.1, 0.9)) * cell_);
          a.rec.y = clamp_pos((static_cast<double>(r) + rnd::uniform(rng_, 0.1, 0.9)) * cell_);
        } else {
          a.rec.x = clamp_pos(hx + rnd::uniform(rng_, -cfg_.home_radius, cfg_.home_radius));
          a.rec.y = clamp_pos(hy + rnd::uniform(rng_, -cfg_.home_radius, cfg_.home_radius));
          pick_waypoint(a);
        }
        agents_.push_back(std::move(a));
      }
    }
  }

  void step() {
    for (auto& a : agents_) {
      if (!a.mobile) continue;
      if (rnd::bernoulli(rng_, cfg_.waypoint_change_prob)) pick_waypoint(a);
      const double dx = a.wx - a.rec.x, dy = a.wy - a.rec.y;
      const double dist = std::hypot(dx, dy);
      if (dist <= a.speed) {
        if (a.speed > 0) {
          a.rec.x = a.wx;
          a.rec.y = a.wy;
          pick_waypoint(a);
        }
      } else {
        a.rec.x = clamp_pos(a.rec.x + a.speed * dx / dist);
        a.rec.y = clamp_pos(a.rec.y + a.speed * dy / dist);
      }
    }
  }

  const SimConfig& cfg_;
  std::mt19937_64 rng_;
  double cell_ = 0;
  double upper_ = 0;
  std::vector<Agent> agents_;
};

}  // namespace

void SimConfig::validate() const {
  auto fail = [](const std::string& m) { throw DataError("invalid simulation config: " + m); };
  if (!schema) fail("no channel schema");
  if (!(map_extent > 0)) fail("map_extent must be positive");
  if (grid_size == 0) fail("grid_size must be positive");
  if (frame_stride < 1) fail("frame_stride must be >= 1");
  if (episode_ticks < 1) fail("episode_ticks must be >= 1");
  if (base_radius < 0) fail("base_radius must be non-negative");
  if (!(home_radius >= 0)) fail("home_radius must be non-negative");
  if (!(waypoint_change_prob >= 0 && waypoint_change_prob <= 1)) {
    fail("waypoint_change_prob must lie in [0,1]");
  }
  auto check = [&](const UnitSpec& u, Owner owner) {
    const auto group = schema->group_of(u.type);
    if (!group) fail("unknown unit type " + u.type);
    if (owner == Owner::friendly && *group != ChannelGroup::friendly) {
      fail(u.type + " is not a friendly unit type");
    }
    if (owner == Owner::enemy) {
      const auto want = u.mobile ? ChannelGroup::enemy_combat : ChannelGroup::enemy_building;
      if (*group != want) {
        fail(u.type + (u.mobile ? " is mobile but not an enemy combat type"
                                : " is static but not an enemy building type"));
      }
    }
    if (u.count_min < 0 || u.count_max < u.count_min) fail("bad count range for " + u.type);
    if (u.sight < 0) fail("negative sight for " + u.type);
    if (!(u.speed >= 0)) fail("negative speed for " + u.type);
    if (!(u.roam >= 0 && u.raid >= 0 && u.roam + u.raid <= 1)) {
      fail("roam and raid probabilities must be non-negative with sum <= 1 for " + u.type);
    }
  };
  for (const auto& u : friendly_units) check(u, Owner::friendly);
  for (const auto& u : enemy_units) check(u, Owner::enemy);
}

nlohmann::json SimConfig::to_json() const {
  nlohmann::json j;
  j["map_extent"] = map_extent;
  j["grid_size"] = grid_size;
  if (schema) j["schema"] = schema->to_json();
  j["friendly_units"] = nlohmann::json::array();
  for (const auto& u : friendly_units) j["friendly_units"].push_back(unit_to_json(u));
  j["enemy_units"] = nlohmann::json::array();
  for (const auto& u : enemy_units) j["enemy_units"].push_back(unit_to_json(u));
  j["base_radius"] = base_radius;
  j["home_radius"] = home_radius;
  j["waypoint_change_prob"] = waypoint_change_prob;
  j["episode_ticks"] = episode_ticks;
  j["frame_stride"] = frame_stride;
  j["full_vision"] = full_vision;
  j["seed"] = seed;
  j["episodes"] = episodes;
  return j;
}

SimConfig SimConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  SimConfig c;
  try {
    c.map_extent = j.value("map_extent", c.map_extent);
    c.grid_size = j.value("grid_size", c.grid_size);
    if (j.contains("schema")) {
      const auto& s = j.at("schema");
      if (s.is_string()) {
        std::filesystem::path p = s.get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        c.schema = std::make_shared<const ChannelSchema>(ChannelSchema::load(p.string()));
      } else {
        c.schema = std::make_shared<const ChannelSchema>(ChannelSchema::from_json(s));
      }
    } else {
      c.schema = std::make_shared<const ChannelSchema>(ChannelSchema::desk_default());
    }
    for (const auto& u : j.value("friendly_units", nlohmann::json::array()))
      c.friendly_units.push_back(unit_from_json(u));
    for (const auto& u : j.value("enemy_units", nlohmann::json::array()))
      c.enemy_units.push_back(unit_from_json(u));
    c.base_radius = j.value("base_radius", c.base_radius);
    c.home_radius = j.value("home_radius", c.home_radius);
    c.waypoint_change_prob = j.value("waypoint_change_prob", c.waypoint_change_prob);
    c.episode_ticks = j.value("episode_ticks", c.episode_ticks);
    c.frame_stride = j.value("frame_stride", c.frame_stride);
    c.full_vision = j.value("full_vision", c.full_vision);
    c.seed = j.value("seed", c.seed);
    c.episodes = j.value("episodes", c.episodes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

SimConfig SimConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open simulation config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  return from_json(j, std::filesystem::path(path).parent_path().string());
}

SimConfig SimConfig::desk_default() {
  SimConfig c;
  c.schema = std::make_shared<const ChannelSchema>(ChannelSchema::desk_default());
  c.friendly_units = {
      mobile("f_worker", 4, 6, 1, 16, 0.0, 0.0),  mobile("f_infantry", 3, 6, 1, 24, 0.2, 0.2),
      mobile("f_vehicle", 1, 3, 2, 32, 0.2, 0.4), mobile("f_air", 1, 2, 3, 48, 0.2, 0.7),
      building("f_base", 1, 1, 2),                building("f_barracks", 1, 2, 1),
      building("f_factory", 0, 2, 1),             building("f_turret", 1, 3, 2),
  };
  c.enemy_units = {
      mobile("e_worker", 4, 6, 0, 16, 0.0, 0.0),  mobile("e_infantry", 3, 6, 0, 24, 0.2, 0.2),
      mobile("e_vehicle", 1, 3, 0, 32, 0.2, 0.3), mobile("e_air", 1, 2, 0, 48, 0.3, 0.4),
      building("e_base", 1, 1, 0),                building("e_barracks", 1, 2, 0),
      building("e_factory", 0, 2, 0),             building("e_turret", 1, 3, 0),
  };
  return c;
}

std::unordered_map<std::string, int> SimConfig::sight_table() const {
  std::unordered_map<std::string, int> t;
  for (const auto& u : friendly_units) t[u.type] = u.sight;
  return t;
}

Episode simulate(const SimConfig& cfg) {
  cfg.validate();
  return Simulator(cfg).run();
}

std::uint64_t episode_seed(const SimConfig& cfg, std::size_t index) {
  return cfg.seed ^ static_cast<std::uint64_t>(index);
}

}  // namespace defog
