#include "doctest.h"

#include <algorithm>
#include <sstream>
#include <tuple>

#include "defog/render.hpp"
#include "support.hpp"

using namespace defog;

namespace {

SchemaPtr tiny_schema() {
  return std::make_shared<const ChannelSchema>(
      ChannelSchema({"f_a", "f_b"}, {"e_a"}, {"e_b"}));
}

GridState state_with(std::vector<std::tuple<std::size_t, std::size_t, std::size_t, float>> cells) {
  auto s = tiny_schema();
  Tensor t({4, 3, 4});
  for (auto [c, r, col, v] : cells) t.storage()[(c * 3 + r) * 4 + col] = v;
  return GridState(s, StateKind::predicted, t);
}

}  // namespace

TEST_CASE("group totals sum the friendly and enemy channels") {
  auto g = group_totals(state_with({{0, 0, 0, 1}, {1, 0, 0, 2}, {2, 1, 1, 1}, {3, 1, 1, 0.5f}}));
  CHECK(g.friendly[0] == 3.0);
  CHECK(g.enemy[0] == 0.0);
  CHECK(g.enemy[5] == 1.5);

  auto s = tiny_schema();
  Tensor acc({2, 3, 4});
  acc.storage()[(1 * 3 + 2) * 4 + 3] = 4;
  auto ga = group_totals(GridState(s, StateKind::accumulated, acc));
  CHECK(ga.enemy[11] == 4.0);
  CHECK(std::all_of(ga.friendly.begin(), ga.friendly.end(), [](double v) { return v == 0; }));
}

TEST_CASE("ascii glyphs") {
  auto y = state_with({{0, 0, 0, 1}, {0, 0, 1, 2}, {2, 1, 0, 1}, {3, 1, 1, 3}, {0, 2, 2, 1}, {2, 2, 2, 1},
                       {2, 2, 3, 0.4f}});
  const auto text = render_ascii({{"y", y}, {"same", y}});
  CHECK(text ==
        "y     same  \n"
        "fF..  fF..  \n"
        "eE..  eE..  \n"
        "..#.  ..#.  \n");
  RenderSpec spec;
  spec.threshold = 0.3;
  CHECK(render_ascii({{"y", y}}, spec).find("..#e") != std::string::npos);
}

TEST_CASE("pgm layout and shades") {
  auto y = state_with({{0, 0, 0, 1}, {2, 0, 1, 1}, {0, 1, 0, 1}, {2, 1, 0, 1}});
  RenderSpec spec;
  spec.mode = RenderMode::pgm;
  spec.scale = 2;
  const auto img = render_pgm({{"a", y}, {"b", y}}, spec);
  std::istringstream hs(img);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  hs >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(maxv == 255);
  CHECK(h == 3 * 2);
  CHECK(w > 2 * 4 * 2);
  const auto px = img.substr(img.size() - w * h);
  auto at = [&](std::size_t r, std::size_t c) { return static_cast<unsigned char>(px[r * w + c]); };
  // First panel starts at column 0.
  const auto f = at(0, 0), e = at(0, 2), both = at(2, 0), empty = at(4, 4);
  CHECK(f >= 140);
  CHECK(f <= 200);
  CHECK(e >= 20);
  CHECK(e <= 100);
  CHECK(both == 0);
  CHECK(empty == 255);
}

TEST_CASE("panels must share a grid") {
  auto s = tiny_schema();
  auto a = GridState::zeros(s, StateKind::ground_truth, 4);
  auto b = GridState::zeros(s, StateKind::ground_truth, 8);
  CHECK_THROWS_AS(render_ascii({{"a", a}, {"b", b}}), ShapeError);
  CHECK_THROWS_AS(render_ascii({}), ShapeError);
}
