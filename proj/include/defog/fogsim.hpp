#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "defog/schema.hpp"

namespace defog {

struct UnitSpec {
  std::string type;
  bool mobile = true;
  int count_min = 0;
  int count_max = 0;
  // Vision radius in cells (friendly units only).
  int sight = 1;
  // Pixels per tick (mobile units only).
  double speed = 0;
  // Probability that a fresh waypoint is drawn anywhere on the map rather
  // than around the owner's base.
  double roam = 0.2;
  // Probability that a fresh waypoint lies around the opposing base.
  double raid = 0.0;
};

struct SimConfig {
  double map_extent = 4096;
  std::size_t grid_size = 32;
  SchemaPtr schema;
  std::vector<UnitSpec> friendly_units;
  std::vector<UnitSpec> enemy_units;
  // Buildings occupy distinct cells within this Chebyshev radius (cells) of the base cell.
  int base_radius = 3;
  // Patrol radius around the base, pixels.
  double home_radius = 640;
  double waypoint_change_prob = 0.05;
  int episode_ticks = 240;
  int frame_stride = 10;
  // Friendly vision covers the whole map.
  bool full_vision = false;
  std::uint64_t seed = 1;
  // Episode count used by dataset generation.
  std::size_t episodes = 100;

  void validate() const;
  nlohmann::json to_json() const;
  // `schema` resolves a path-valued "schema" entry; an inline object is used directly.
  static SimConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static SimConfig load(const std::string& path);

  // Desk-scale default over ChannelSchema::desk_default().
  static SimConfig desk_default();

  std::unordered_map<std::string, int> sight_table() const;
};

struct Frame {
  int tick = 0;
  std::vector<UnitRecord> units;

  bool operator==(const Frame&) const = default;
};

struct Episode {
  std::uint64_t seed = 0;
  std::vector<Frame> frames;

  bool operator==(const Episode&) const = default;
};

// Deterministic in cfg (including cfg.seed). Emits one frame per tick.
Episode simulate(const SimConfig& cfg);

// Seed of episode `index` for a config: seed xor index.
std::uint64_t episode_seed(const SimConfig& cfg, std::size_t index);

}  // namespace defog
