#include "defog/schema.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace defog {

ChannelSchema::ChannelSchema(std::vector<std::string> friendly,
                             std::vector<std::string> enemy_combat,
                             std::vector<std::string> enemy_building)
    : friendly_(std::move(friendly)),
      enemy_combat_(std::move(enemy_combat)),
      enemy_building_(std::move(enemy_building)) {
  std::size_t idx = 0;
  for (const auto* group : {&friendly_, &enemy_combat_, &enemy_building_}) {
    for (const auto& name : *group) {
      if (name.empty()) throw DataError("channel schema contains an empty unit-type name");
      if (!truth_index_.emplace(name, idx++).second) {
        throw DataError("unit-type name appears twice in channel schema: " + name);
      }
    }
  }
  if (truth_index_.empty()) throw ShapeError("channel schema has no channels");
}

ChannelSchema ChannelSchema::from_json(const nlohmann::json& j) {
  try {
    return ChannelSchema(j.at("friendly").get<std::vector<std::string>>(),
                         j.at("enemy_combat").get<std::vector<std::string>>(),
                         j.at("enemy_building").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed channel schema: ") + e.what());
  }
}

ChannelSchema ChannelSchema::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open schema file " + path);
  try {
    return from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

nlohmann::json ChannelSchema::to_json() const {
  return {{"friendly", friendly_}, {"enemy_combat", enemy_combat_},
          {"enemy_building", enemy_building_}};
}

namespace {
std::vector<std::string> numbered(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    std::string idx = std::to_string(i);
    if (idx.size() < 2) idx = "0" + idx;
    out.push_back(prefix + idx);
  }
  return out;
}
}  // namespace

ChannelSchema ChannelSchema::paper_default() {
  return ChannelSchema(numbered("friendly_", 34), numbered("enemy_combat_", 16),
                       numbered("enemy_building_", 16));
}

ChannelSchema ChannelSchema::desk_default() {
  return ChannelSchema({"f_worker", "f_infantry", "f_vehicle", "f_air", "f_base", "f_barracks",
                        "f_factory", "f_turret"},
                       {"e_worker", "e_infantry", "e_vehicle", "e_air"},
                       {"e_base", "e_barracks", "e_factory", "e_turret"});
}

std::optional<ChannelGroup> ChannelSchema::group_of(const std::string& type) const {
  auto it = truth_index_.find(type);
  if (it == truth_index_.end()) return std::nullopt;
  if (it->second < friendly_count()) return ChannelGroup::friendly;
  if (it->second < partial_channels()) return ChannelGroup::enemy_combat;
  return ChannelGroup::enemy_building;
}

std::size_t ChannelSchema::truth_channel(const std::string& type) const {
  auto it = truth_index_.find(type);
  if (it == truth_index_.end()) throw ShapeError("unknown unit type: " + type);
  return it->second;
}

const char* kind_name(StateKind kind) {
  switch (kind) {
    case StateKind::ground_truth: return "ground_truth";
    case StateKind::partial: return "partial";
    case StateKind::accumulated: return "accumulated";
    case StateKind::input: return "input";
    case StateKind::predicted: return "predicted";
  }
  return "?";
}

std::size_t channels_for(const ChannelSchema& schema, StateKind kind) {
  switch (kind) {
    case StateKind::ground_truth:
    case StateKind::predicted: return schema.truth_channels();
    case StateKind::partial: return schema.partial_channels();
    case StateKind::accumulated: return schema.accumulated_channels();
    case StateKind::input: return schema.input_channels();
  }
  return 0;
}

GridState::GridState(SchemaPtr schema, StateKind kind, Tensor tensor)
    : schema_(std::move(schema)), kind_(kind), tensor_(std::move(tensor)) {
  if (!schema_) throw ShapeError("grid state without a schema");
  const std::size_t want = channels_for(*schema_, kind_);
  if (tensor_.rank() != 3 || tensor_.dim(0) != want) {
    throw ShapeError(std::string(kind_name(kind_)) + " state needs shape [" +
                     std::to_string(want) + ",H,W], got " + shape_str(tensor_.shape()));
  }
  const bool integral = kind_ != StateKind::predicted;
  for (float v : tensor_.data()) {
    if (!(v >= 0.0f) || !std::isfinite(v)) {
      throw ShapeError(std::string(kind_name(kind_)) + " state holds a negative or non-finite count");
    }
    if (integral && v != std::floor(v)) {
      throw ShapeError(std::string(kind_name(kind_)) + " state holds a fractional count");
    }
  }
}

GridState GridState::zeros(SchemaPtr schema, StateKind kind, std::size_t grid) {
  const std::size_t c = channels_for(*schema, kind);
  return GridState(std::move(schema), kind, Tensor({c, grid, grid}));
}

void VisibilityMask::reveal(std::size_t row, std::size_t col, int radius) {
  const long r0 = std::max(0L, static_cast<long>(row) - radius);
  const long r1 = std::min(static_cast<long>(height_) - 1, static_cast<long>(row) + radius);
  const long c0 = std::max(0L, static_cast<long>(col) - radius);
  const long c1 = std::min(static_cast<long>(width_) - 1, static_cast<long>(col) + radius);
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c) cells_[r * width_ + c] = 1;
}

std::size_t VisibilityMask::visible_count() const {
  std::size_t n = 0;
  for (auto c : cells_) n += c;
  return n;
}

std::pair<std::size_t, std::size_t> cell_of(double x, double y, double map_extent,
                                            std::size_t grid) {
  if (!(x >= 0 && x < map_extent && y >= 0 && y < map_extent)) {
    throw ShapeError("unit position (" + std::to_string(x) + ", " + std::to_string(y) +
                     ") outside map extent " + std::to_string(map_extent));
  }
  const double cell = map_extent / static_cast<double>(grid);
  const auto row = std::min(grid - 1, static_cast<std::size_t>(y / cell));
  const auto col = std::min(grid - 1, static_cast<std::size_t>(x / cell));
  return {row, col};
}

GridState downsample(const std::vector<UnitRecord>& units, const SchemaPtr& schema,
                     double map_extent, std::size_t grid) {
  if (grid == 0 || !(map_extent > 0)) throw ShapeError("grid size and map extent must be positive");
  Tensor t({schema->truth_channels(), grid, grid});
  for (const auto& u : units) {
    const auto group = schema->group_of(u.type);
    if (!group) throw ShapeError("unknown unit type: " + u.type);
    const bool friendly_type = *group == ChannelGroup::friendly;
    if (friendly_type != (u.owner == Owner::friendly)) {
      throw ShapeError("unit type " + u.type + " does not belong to the stated owner");
    }
    const auto [row, col] = cell_of(u.x, u.y, map_extent, grid);
    if (!u.alive) continue;
    t[(schema->truth_channel(u.type) * grid + row) * grid + col] += 1.0f;
  }
  return GridState(schema, StateKind::ground_truth, std::move(t));
}

VisibilityMask visibility_from_units(const std::vector<UnitRecord>& units, double map_extent,
                                     std::size_t grid,
                                     const std::unordered_map<std::string, int>& sight_of,
                                     int default_sight) {
  VisibilityMask mask(grid, grid);
  for (const auto& u : units) {
    if (u.owner != Owner::friendly || !u.alive) continue;
    const auto [row, col] = cell_of(u.x, u.y, map_extent, grid);
    auto it = sight_of.find(u.type);
    mask.reveal(row, col, it == sight_of.end() ? default_sight : it->second);
  }
  return mask;
}

namespace {

void require_mask_fits(const GridState& s, const VisibilityMask& mask) {
  if (mask.height() != s.height() || mask.width() != s.width()) {
    throw ShapeError("visibility mask " + std::to_string(mask.height()) + "x" +
                     std::to_string(mask.width()) + " does not match grid " +
                     std::to_string(s.height()) + "x" + std::to_string(s.width()));
  }
}

void require_kind(const GridState& s, StateKind kind, const char* what) {
  if (s.kind() != kind) {
    throw ShapeError(std::string(what) + " expects a " + kind_name(kind) + " state, got " +
                     kind_name(s.kind()));
  }
}

// Copies channels [src_begin, src_begin + count) of src [N,Cs,P] into
// channels [dst_begin, ...) of dst [N,Cd,P].
template <typename T>
void copy_channels(const BasicTensor<T>& src, std::size_t src_begin, BasicTensor<T>& dst,
                   std::size_t dst_begin, std::size_t count, std::size_t n, std::size_t plane) {
  const std::size_t cs = src.size() / (n * plane), cd = dst.size() / (n * plane);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(src.ptr() + (i * cs + src_begin) * plane, count * plane,
                dst.ptr() + (i * cd + dst_begin) * plane);
}

}  // namespace

GridState apply_fog(const GridState& truth, const VisibilityMask& mask) {
  require_kind(truth, StateKind::ground_truth, "apply_fog");
  require_mask_fits(truth, mask);
  const auto& sc = truth.schema();
  const std::size_t h = truth.height(), w = truth.width(), plane = h * w;
  Tensor out({sc.partial_channels(), h, w});
  const auto& y = truth.tensor();
  std::copy_n(y.ptr(), sc.friendly_count() * plane, out.ptr());
  for (std::size_t c = sc.friendly_count(); c < sc.partial_channels(); ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        if (mask.at(r, col)) out[(c * h + r) * w + col] = y[(c * h + r) * w + col];
  return GridState(truth.schema_ptr(), StateKind::partial, std::move(out));
}

GridState accumulate(const GridState* prev, const GridState& truth, const VisibilityMask& mask) {
  require_kind(truth, StateKind::ground_truth, "accumulate");
  require_mask_fits(truth, mask);
  const auto& sc = truth.schema();
  const std::size_t h = truth.height(), w = truth.width(), plane = h * w;
  Tensor out({sc.accumulated_channels(), h, w});
  if (prev) {
    require_kind(*prev, StateKind::accumulated, "accumulate");
    if (!(prev->schema() == sc) || prev->height() != h || prev->width() != w) {
      throw ShapeError("accumulate: previous state does not match ground-truth layout");
    }
    out = prev->tensor();
  }
  const auto& y = truth.tensor();
  const std::size_t first_enemy = sc.friendly_count();
  for (std::size_t c = 0; c < sc.accumulated_channels(); ++c)
    for (std::size_t cell = 0; cell < plane; ++cell)
      if (mask.at(cell / w, cell % w)) out[c * plane + cell] = y[(first_enemy + c) * plane + cell];
  return GridState(truth.schema_ptr(), StateKind::accumulated, std::move(out));
}

GridState concat_input(const GridState& partial, const GridState& accumulated) {
  require_kind(partial, StateKind::partial, "concat_input");
  require_kind(accumulated, StateKind::accumulated, "concat_input");
  if (!(partial.schema() == accumulated.schema())) {
    throw ShapeError("concat_input: partial and accumulated states use different schemas");
  }
  if (partial.height() != accumulated.height() || partial.width() != accumulated.width()) {
    throw ShapeError("concat_input: grid sizes differ");
  }
  const std::size_t h = partial.height(), w = partial.width();
  const auto& sc = partial.schema();
  Tensor out({sc.input_channels(), h, w});
  std::copy_n(partial.tensor().ptr(), partial.tensor().size(), out.ptr());
  std::copy_n(accumulated.tensor().ptr(), accumulated.tensor().size(),
              out.ptr() + partial.tensor().size());
  return GridState(partial.schema_ptr(), StateKind::input, std::move(out));
}

std::pair<GridState, GridState> split_input(const GridState& input) {
  require_kind(input, StateKind::input, "split_input");
  const auto& sc = input.schema();
  const std::size_t h = input.height(), w = input.width(), plane = h * w;
  Tensor partial({sc.partial_channels(), h, w});
  Tensor acc({sc.accumulated_channels(), h, w});
  std::copy_n(input.tensor().ptr(), partial.size(), partial.ptr());
  std::copy_n(input.tensor().ptr() + sc.partial_channels() * plane, acc.size(), acc.ptr());
  return {GridState(input.schema_ptr(), StateKind::partial, std::move(partial)),
          GridState(input.schema_ptr(), StateKind::accumulated, std::move(acc))};
}

template <typename T>
BasicTensor<T> observation_prior(const BasicTensor<T>& input, const ChannelSchema& sc) {
  if (input.rank() != 4 || input.dim(1) != sc.input_channels()) {
    throw ShapeError("observation_prior expects [N," + std::to_string(sc.input_channels()) +
                     ",H,W], got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), plane = input.dim(2) * input.dim(3);
  BasicTensor<T> out({n, sc.truth_channels(), input.dim(2), input.dim(3)});
  copy_channels(input, 0, out, 0, sc.friendly_count(), n, plane);
  copy_channels(input, sc.partial_channels(), out, sc.friendly_count(), sc.enemy_count(), n, plane);
  return out;
}

template Tensor observation_prior(const Tensor&, const ChannelSchema&);
template TensorD observation_prior(const TensorD&, const ChannelSchema&);

Tensor observation_prior(const GridState& input) {
  require_kind(input, StateKind::input, "observation_prior");
  const auto& t = input.tensor();
  auto batched = observation_prior(t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}), input.schema());
  return batched.reshaped({batched.dim(1), batched.dim(2), batched.dim(3)});
}

Tensor partial_prior(const Tensor& input, const ChannelSchema& sc) {
  if (input.rank() != 4 || input.dim(1) != sc.input_channels()) {
    throw ShapeError("partial_prior expects [N," + std::to_string(sc.input_channels()) +
                     ",H,W], got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), plane = input.dim(2) * input.dim(3);
  Tensor out({n, sc.truth_channels(), input.dim(2), input.dim(3)});
  copy_channels(input, 0, out, 0, sc.partial_channels(), n, plane);
  return out;
}

}  // namespace defog
