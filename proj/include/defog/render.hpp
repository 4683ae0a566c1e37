#pragma once

#include <string>
#include <utility>
#include <vector>

#include "defog/schema.hpp"

namespace defog {

enum class RenderMode { ascii, pgm };

struct RenderSpec {
  RenderMode mode = RenderMode::ascii;
  // Pixels per cell in pgm output.
  std::size_t scale = 4;
  double threshold = 0.5;
};

// Per-cell unit totals of the friendly and the enemy channels of a state.
struct GroupGrid {
  std::size_t height = 0, width = 0;
  std::vector<double> friendly;
  std::vector<double> enemy;
};

GroupGrid group_totals(const GridState& state);

using Panel = std::pair<std::string, GridState>;

// Panels side by side. ascii: '.' empty, 'f'/'F' friendly (F for two or
// more), 'e'/'E' enemy, '#' both. Counts below the threshold are empty.
std::string render_ascii(const std::vector<Panel>& panels, const RenderSpec& spec = {});

// Binary P5 image. Friendly cells fall in a light grey band, enemy cells in
// a dark band (darker for larger counts), cells with both are black.
std::string render_pgm(const std::vector<Panel>& panels, const RenderSpec& spec = {});

}  // namespace defog
