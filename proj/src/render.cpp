#include "defog/render.hpp"

#include <algorithm>
#include <cmath>

#include "defog/errors.hpp"

namespace defog {

GroupGrid group_totals(const GridState& state) {
  const auto& sc = state.schema();
  const std::size_t f = sc.friendly_count();
  std::size_t fr_lo = 0, fr_hi = 0, en_lo = 0, en_hi = 0;
  switch (state.kind()) {
    case StateKind::ground_truth:
    case StateKind::predicted:
      fr_hi = f;
      en_lo = f;
      en_hi = sc.truth_channels();
      break;
    case StateKind::partial:
      fr_hi = f;
      en_lo = f;
      en_hi = sc.partial_channels();
      break;
    case StateKind::accumulated:
      en_hi = sc.accumulated_channels();
      break;
    case StateKind::input:
      fr_hi = f;
      en_lo = f;
      en_hi = sc.input_channels();
      break;
  }
  GroupGrid g;
  g.height = state.height();
  g.width = state.width();
  const std::size_t plane = g.height * g.width;
  g.friendly.assign(plane, 0.0);
  g.enemy.assign(plane, 0.0);
  const auto& t = state.tensor().storage();
  for (std::size_t c = fr_lo; c < fr_hi; ++c)
    for (std::size_t i = 0; i < plane; ++i) g.friendly[i] += t[c * plane + i];
  for (std::size_t c = en_lo; c < en_hi; ++c)
    for (std::size_t i = 0; i < plane; ++i) g.enemy[i] += t[c * plane + i];
  return g;
}

namespace {

std::vector<GroupGrid> totals(const std::vector<Panel>& panels) {
  if (panels.empty()) throw ShapeError("nothing to render");
  std::vector<GroupGrid> out;
  for (const auto& p : panels) {
    out.push_back(group_totals(p.second));
    if (out.back().height != out.front().height || out.back().width != out.front().width) {
      throw ShapeError("render panels have different grid sizes");
    }
  }
  return out;
}

}  // namespace

std::string render_ascii(const std::vector<Panel>& panels, const RenderSpec& spec) {
  const auto grids = totals(panels);
  const std::size_t h = grids.front().height, w = grids.front().width;
  const std::size_t col = std::max<std::size_t>(w, 1) + 2;
  std::string out;
  for (const auto& p : panels) {
    std::string title = p.first.substr(0, col - 1);
    out += title + std::string(col - title.size(), ' ');
  }
  out += "\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (const auto& g : grids) {
      for (std::size_t c = 0; c < w; ++c) {
        const double fv = g.friendly[r * w + c], ev = g.enemy[r * w + c];
        const bool f = fv >= spec.threshold, e = ev >= spec.threshold;
        char ch = '.';
        if (f && e) {
          ch = '#';
        } else if (f) {
          ch = fv >= 1.5 ? 'F' : 'f';
        } else if (e) {
          ch = ev >= 1.5 ? 'E' : 'e';
        }
        out += ch;
      }
      out += "  ";
    }
    out += "\n";
  }
  return out;
}

std::string render_pgm(const std::vector<Panel>& panels, const RenderSpec& spec) {
  const auto grids = totals(panels);
  const std::size_t s = std::max<std::size_t>(spec.scale, 1);
  const std::size_t h = grids.front().height, w = grids.front().width;
  const std::size_t gap = s;
  const std::size_t width = grids.size() * w * s + (grids.size() - 1) * gap;
  const std::size_t height = h * s;
  std::string img(width * height, static_cast<char>(220));
  auto level = [](double v, int lo, int hi) {
    const double k = std::min(1.0, std::log2(1.0 + v) / 3.0);
    return static_cast<unsigned char>(std::lround(hi - k * (hi - lo)));
  };
  for (std::size_t p = 0; p < grids.size(); ++p) {
    const auto& g = grids[p];
    const std::size_t x0 = p * (w * s + gap);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double fv = g.friendly[r * w + c], ev = g.enemy[r * w + c];
        const bool f = fv >= spec.threshold, e = ev >= spec.threshold;
        unsigned char v = 255;
        if (f && e) {
          v = 0;
        } else if (f) {
          v = level(fv, 140, 200);
        } else if (e) {
          v = level(ev, 20, 100);
        }
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            img[(r * s + dy) * width + x0 + c * s + dx] = static_cast<char>(v);
      }
    }
  }
  return "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n" + img;
}

}  // namespace defog
