#include "defog/tensor.hpp"

#include <cmath>

namespace defog {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);

}  // namespace defog
