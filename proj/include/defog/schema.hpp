#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "defog/tensor.hpp"

namespace defog {

enum class ChannelGroup { friendly, enemy_combat, enemy_building };

// Unit-type channel layout. Ground truth is ordered friendly, enemy combat,
// enemy building; the partial observation keeps friendly and enemy combat;
// the accumulated observation keeps both enemy groups.
class ChannelSchema {
 public:
  ChannelSchema(std::vector<std::string> friendly, std::vector<std::string> enemy_combat,
                std::vector<std::string> enemy_building);

  static ChannelSchema from_json(const nlohmann::json& j);
  static ChannelSchema load(const std::string& path);
  nlohmann::json to_json() const;

  // 34 / 16 / 16 channels.
  static ChannelSchema paper_default();
  // 8 / 4 / 4 channels.
  static ChannelSchema desk_default();

  std::size_t friendly_count() const { return friendly_.size(); }
  std::size_t enemy_combat_count() const { return enemy_combat_.size(); }
  std::size_t enemy_building_count() const { return enemy_building_.size(); }
  std::size_t enemy_count() const { return enemy_combat_.size() + enemy_building_.size(); }

  std::size_t truth_channels() const { return friendly_count() + enemy_count(); }
  std::size_t partial_channels() const { return friendly_count() + enemy_combat_count(); }
  std::size_t accumulated_channels() const { return enemy_count(); }
  std::size_t input_channels() const { return partial_channels() + accumulated_channels(); }

  const std::vector<std::string>& friendly() const { return friendly_; }
  const std::vector<std::string>& enemy_combat() const { return enemy_combat_; }
  const std::vector<std::string>& enemy_building() const { return enemy_building_; }

  std::optional<ChannelGroup> group_of(const std::string& type) const;
  // Ground-truth channel of a unit type; throws ShapeError naming unknown types.
  std::size_t truth_channel(const std::string& type) const;

  bool operator==(const ChannelSchema& other) const {
    return friendly_ == other.friendly_ && enemy_combat_ == other.enemy_combat_ &&
           enemy_building_ == other.enemy_building_;
  }

 private:
  std::vector<std::string> friendly_;
  std::vector<std::string> enemy_combat_;
  std::vector<std::string> enemy_building_;
  std::unordered_map<std::string, std::size_t> truth_index_;
};

using SchemaPtr = std::shared_ptr<const ChannelSchema>;

enum class StateKind { ground_truth, partial, accumulated, input, predicted };

const char* kind_name(StateKind kind);
std::size_t channels_for(const ChannelSchema& schema, StateKind kind);

// One channelized count grid [C,H,W]. Immutable after construction.
class GridState {
 public:
  GridState(SchemaPtr schema, StateKind kind, Tensor tensor);

  static GridState zeros(SchemaPtr schema, StateKind kind, std::size_t grid);

  const ChannelSchema& schema() const { return *schema_; }
  const SchemaPtr& schema_ptr() const { return schema_; }
  StateKind kind() const { return kind_; }
  const Tensor& tensor() const { return tensor_; }
  std::size_t channels() const { return tensor_.dim(0); }
  std::size_t height() const { return tensor_.dim(1); }
  std::size_t width() const { return tensor_.dim(2); }

 private:
  SchemaPtr schema_;
  StateKind kind_;
  Tensor tensor_;
};

// Cells under friendly vision, row-major [H,W].
class VisibilityMask {
 public:
  VisibilityMask(std::size_t height, std::size_t width, bool value = false)
      : height_(height), width_(width), cells_(height * width, value ? 1 : 0) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool at(std::size_t row, std::size_t col) const { return cells_[row * width_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool v) { cells_[row * width_ + col] = v ? 1 : 0; }
  // Marks every cell within Chebyshev distance `radius` of (row, col).
  void reveal(std::size_t row, std::size_t col, int radius);
  std::size_t visible_count() const;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<std::uint8_t> cells_;
};

enum class Owner : std::uint8_t { friendly = 0, enemy = 1 };

struct UnitRecord {
  std::string type;
  Owner owner = Owner::friendly;
  double x = 0;  // pixels, column direction
  double y = 0;  // pixels, row direction
  bool alive = true;

  bool operator==(const UnitRecord&) const = default;
};

// Grid cell of a pixel position: row from y, column from x.
std::pair<std::size_t, std::size_t> cell_of(double x, double y, double map_extent,
                                            std::size_t grid);

// Counts live units per (type channel, cell).
GridState downsample(const std::vector<UnitRecord>& units, const SchemaPtr& schema,
                     double map_extent, std::size_t grid);

// Friendly vision: each live friendly unit reveals cells within its sight
// radius (cells) around its own cell. `sight_of` maps a type to its radius.
VisibilityMask visibility_from_units(const std::vector<UnitRecord>& units, double map_extent,
                                     std::size_t grid,
                                     const std::unordered_map<std::string, int>& sight_of,
                                     int default_sight = 1);

GridState apply_fog(const GridState& truth, const VisibilityMask& mask);

// Last-seen enemy state. Visible cells take the current count (zero included),
// hidden cells keep the previous value. `prev` may be null for the first frame.
GridState accumulate(const GridState* prev, const GridState& truth, const VisibilityMask& mask);

GridState concat_input(const GridState& partial, const GridState& accumulated);

// Splits an input state back into its partial and accumulated blocks.
std::pair<GridState, GridState> split_input(const GridState& input);

// Last-known-state estimate in ground-truth layout: friendly channels from the
// partial block, enemy channels from the accumulated block.
Tensor observation_prior(const GridState& input);

// Batched form over raw input tensors [N, C_x, H, W] -> [N, C_y, H, W].
template <typename T>
BasicTensor<T> observation_prior(const BasicTensor<T>& input, const ChannelSchema& schema);

// Current-view estimate: friendly and enemy-combat channels from the partial
// block, enemy buildings empty. [N, C_x, H, W] -> [N, C_y, H, W].
Tensor partial_prior(const Tensor& input, const ChannelSchema& schema);

}  // namespace defog
