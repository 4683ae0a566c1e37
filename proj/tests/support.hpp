// Independent oracles and helpers shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "defog/autodiff.hpp"
#include "defog/defognet.hpp"
#include "defog/kernels.hpp"
#include "defog/metrics.hpp"
#include "defog/tensor.hpp"

namespace testing {

using defog::Shape;
using defog::Tensor;
using defog::TensorD;

template <typename T = double>
defog::BasicTensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  defog::BasicTensor<T> t(shape);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
  return t;
}

// Sparse non-negative integer counts, like state tensors.
template <typename T = float>
defog::BasicTensor<T> random_counts(const Shape& shape, std::mt19937_64& rng, double density = 0.05,
                                    int max_count = 3) {
  defog::BasicTensor<T> t(shape);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> c(1, max_count);
  for (auto& v : t.storage()) v = u(rng) < density ? static_cast<T>(c(rng)) : T(0);
  return t;
}

// Direct-summation convolution; w is [Co, Ci, k, k].
inline TensorD naive_conv2d(const TensorD& x, const TensorD& w, const TensorD& b,
                            const defog::kernel::ConvGeometry& g) {
  const long n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long co = w.dim(0), k = w.dim(2);
  const long ho = (h + 2 * g.pad - k) / g.stride + 1, wo = (wd + 2 * g.pad - k) / g.stride + 1;
  TensorD y({static_cast<std::size_t>(n), static_cast<std::size_t>(co),
             static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  for (long a = 0; a < n; ++a)
    for (long o = 0; o < co; ++o)
      for (long i = 0; i < ho; ++i)
        for (long j = 0; j < wo; ++j) {
          double s = b.empty() ? 0.0 : b[o];
          for (long c = 0; c < ci; ++c)
            for (long p = 0; p < k; ++p)
              for (long q = 0; q < k; ++q) {
                const long r = i * g.stride - g.pad + p, cc = j * g.stride - g.pad + q;
                if (r < 0 || r >= h || cc < 0 || cc >= wd) continue;
                s += x.at(a, c, r, cc) * w.at(o, c, p, q);
              }
          y.at(a, o, i, j) = s;
        }
  return y;
}

// Scatter form of the transposed convolution; w is [Ci, Co, k, k].
inline TensorD naive_tconv2d(const TensorD& x, const TensorD& w, const TensorD& b,
                             const defog::kernel::ConvGeometry& g) {
  const long n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const long co = w.dim(1), k = w.dim(2);
  const long ho = (h - 1) * g.stride - 2 * g.pad + k + g.output_pad;
  const long wo = (wd - 1) * g.stride - 2 * g.pad + k + g.output_pad;
  TensorD y({static_cast<std::size_t>(n), static_cast<std::size_t>(co),
             static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  for (long a = 0; a < n; ++a)
    for (long o = 0; o < co; ++o)
      for (long i = 0; i < ho; ++i)
        for (long j = 0; j < wo; ++j) y.at(a, o, i, j) = b.empty() ? 0.0 : b[o];
  for (long a = 0; a < n; ++a)
    for (long c = 0; c < ci; ++c)
      for (long i = 0; i < h; ++i)
        for (long j = 0; j < wd; ++j)
          for (long o = 0; o < co; ++o)
            for (long p = 0; p < k; ++p)
              for (long q = 0; q < k; ++q) {
                const long r = i * g.stride - g.pad + p, cc = j * g.stride - g.pad + q;
                if (r < 0 || r >= ho || cc < 0 || cc >= wo) continue;
                y.at(a, o, r, cc) += x.at(a, c, i, j) * w.at(c, o, p, q);
              }
  return y;
}

// Double loop over output cells and their s x s blocks, on the last two axes.
template <typename T>
defog::BasicTensor<T> naive_sumpool(const defog::BasicTensor<T>& m, std::size_t s) {
  Shape out_shape = m.shape();
  const std::size_t r = out_shape.size();
  const std::size_t h = out_shape[r - 2], w = out_shape[r - 1];
  out_shape[r - 2] = h / s;
  out_shape[r - 1] = w / s;
  defog::BasicTensor<T> out(out_shape);
  const std::size_t planes = m.size() / (h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h / s; ++i)
      for (std::size_t j = 0; j < w / s; ++j) {
        T acc = 0;
        for (std::size_t a = 0; a < s; ++a)
          for (std::size_t b = 0; b < s; ++b) acc += m[p * h * w + (i * s + a) * w + j * s + b];
        out[p * (h / s) * (w / s) + i * (w / s) + j] = acc;
      }
  return out;
}

// Pyramid loss evaluated level by level from scratch in double precision.
template <typename T>
double brute_pyramid_loss(const defog::BasicTensor<T>& pred, const defog::BasicTensor<T>& truth,
                          std::size_t r) {
  std::size_t levels = 0;
  while ((std::size_t{1} << levels) < r) ++levels;
  ++levels;
  double norm = 0;
  for (std::size_t i = 0; i < levels; ++i) norm += std::pow(4.0, -static_cast<double>(i));
  double total = 0;
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t s = std::size_t{1} << i;
    const auto a = naive_sumpool(pred.template cast<double>(), s);
    const auto b = naive_sumpool(truth.template cast<double>(), s);
    double se = 0;
    for (std::size_t k = 0; k < a.size(); ++k) se += (a[k] - b[k]) * (a[k] - b[k]);
    total += std::pow(4.0, -static_cast<double>(i)) / norm * se / static_cast<double>(a.size());
  }
  return total;
}

inline defog::Confusion brute_confusion(const Tensor& pred, const Tensor& truth, double thr) {
  defog::Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= thr, t = truth[i] >= thr;
    if (p && t) ++c.tp;
    if (p && !t) ++c.fp;
    if (!p && t) ++c.fn;
    if (!p && !t) ++c.tn;
  }
  return c;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Denominator floor for finite-difference comparisons. With h = 1e-5 the
// rounding noise of a central difference of an O(1) loss is about 1e-11, so
// gradients that are exactly zero (conv biases ahead of batch norm) still
// compare cleanly while anything above 1e-5 is judged purely relatively.
constexpr double kFdFloor = 1e-5;
constexpr double kFdStep = 1e-5;

// Central finite differences of a scalar function of several tensors,
// compared against reverse-mode gradients at `points` random coordinates of
// every input. Relative error uses max(|analytic|, |numeric|, kFdFloor) as
// the denominator.
using ScalarFn = std::function<defog::ad::Var<double>(defog::ad::Tape<double>&,
                                                      const std::vector<defog::ad::Var<double>>&)>;

struct FdReport {
  double max_rel = 0;
  std::size_t checked = 0;
};

inline FdReport fd_check(const std::vector<TensorD>& inputs, const ScalarFn& f, std::size_t points,
                         std::mt19937_64& rng, double h = kFdStep) {
  std::vector<TensorD> grads;
  {
    defog::ad::Tape<double> tape;
    std::vector<defog::ad::Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      vars.push_back(tape.param("in" + std::to_string(i), inputs[i]));
    auto loss = f(tape, vars);
    tape.backward(loss);
    auto g = tape.param_grads();
    for (std::size_t i = 0; i < inputs.size(); ++i) grads.push_back(g.at("in" + std::to_string(i)));
  }
  auto eval = [&](const std::vector<TensorD>& in) {
    defog::ad::Tape<double> tape;
    std::vector<defog::ad::Var<double>> vars;
    for (std::size_t i = 0; i < in.size(); ++i)
      vars.push_back(tape.param("in" + std::to_string(i), in[i]));
    return f(tape, vars).value()[0];
  };
  FdReport rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, inputs[i].size() - 1);
    for (std::size_t p = 0; p < std::min(points, inputs[i].size()); ++p) {
      const std::size_t k = pick(rng);
      auto plus = inputs, minus = inputs;
      plus[i][k] += h;
      minus[i][k] -= h;
      const double num = (eval(plus) - eval(minus)) / (2 * h);
      rep.max_rel = std::max(rep.max_rel, rel_err(grads[i][k], num, kFdFloor));
      ++rep.checked;
    }
  }
  return rep;
}

// Keeps values away from the kinks of piecewise ops.
inline TensorD away_from_zero(TensorD t, double margin = 0.05) {
  for (auto& v : t.storage())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  return t;
}

// Worst finite-difference error of every autodiff op, by op name.
inline std::vector<std::pair<std::string, double>> op_fd_errors(std::uint64_t seed = 21,
                                                                std::size_t points = 5) {
  namespace ad = defog::ad;
  using Tape = ad::Tape<double>;
  using VarsD = std::vector<ad::Var<double>>;
  using defog::kernel::Mode;
  std::mt19937_64 rng(seed);
  auto target = [&](Tape& t, const Shape& s) {
    std::mt19937_64 r(99);
    return t.constant(random_tensor(s, r));
  };
  std::vector<std::pair<std::string, double>> out;
  auto check = [&](const char* name, std::vector<TensorD> in, const ScalarFn& f) {
    out.emplace_back(name, fd_check(in, f, points, rng).max_rel);
  };

  for (int stride : {1, 2}) {
    check("conv2d",
          {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng),
           random_tensor({4}, rng)},
          [&](Tape& t, const VarsD& v) {
            auto y = ad::conv2d(v[0], v[1], v[2], {stride, 1, 0});
            return ad::mse(y, target(t, y.shape()));
          });
    check("tconv2d",
          {random_tensor({2, 3, 3, 3}, rng), random_tensor({3, 2, 3, 3}, rng),
           random_tensor({2}, rng)},
          [&](Tape& t, const VarsD& v) {
            auto y = ad::tconv2d(v[0], v[1], v[2], {stride, 1, stride - 1});
            return ad::mse(y, target(t, y.shape()));
          });
  }
  check("sumpool", {random_tensor({2, 2, 8, 8}, rng)}, [&](Tape& t, const VarsD& v) {
    auto y = ad::sumpool(v[0], 4);
    return ad::mse(y, target(t, y.shape()));
  });
  for (auto mode : {Mode::train, Mode::eval}) {
    check("batchnorm",
          {random_tensor({3, 2, 3, 3}, rng), random_tensor({2}, rng, 0.5, 1.5),
           random_tensor({2}, rng)},
          [&](Tape& t, const VarsD& v) {
            TensorD rm({2}, 0.1), rv({2}, 1.3);
            auto y = ad::batchnorm(v[0], v[1], v[2], rm, rv, mode, 0.9, 1e-5);
            return ad::mse(y, target(t, y.shape()));
          });
  }
  check("relu", {away_from_zero(random_tensor({2, 3, 4}, rng))},
        [&](Tape& t, const VarsD& v) {
          auto y = ad::relu(v[0]);
          return ad::mse(y, target(t, y.shape()));
        });
  check("leaky_relu", {away_from_zero(random_tensor({2, 3, 4}, rng))},
        [&](Tape& t, const VarsD& v) {
          auto y = ad::leaky_relu(v[0], 0.2);
          return ad::mse(y, target(t, y.shape()));
        });
  check("sigmoid", {random_tensor({2, 5}, rng, -4, 4)}, [&](Tape& t, const VarsD& v) {
    auto y = ad::sigmoid(v[0]);
    return ad::mse(y, target(t, y.shape()));
  });
  check("dropout", {random_tensor({2, 3, 4, 4}, rng)}, [&](Tape& t, const VarsD& v) {
    std::mt19937_64 r(5);  // same mask on every evaluation
    auto y = ad::dropout(v[0], 0.3, Mode::train, r);
    return ad::mse(y, target(t, y.shape()));
  });
  check("dense", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)},
        [&](Tape& t, const VarsD& v) {
          auto y = ad::dense(v[0], v[1], v[2]);
          return ad::mse(y, target(t, y.shape()));
        });
  check("reshape", {random_tensor({2, 3, 2, 2}, rng)}, [&](Tape& t, const VarsD& v) {
    auto y = ad::reshape(v[0], {2, 12});
    return ad::mse(y, target(t, y.shape()));
  });
  check("add", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
        [&](Tape& t, const VarsD& v) {
          auto y = ad::add(v[0], v[1]);
          return ad::mse(y, target(t, y.shape()));
        });
  check("affine", {random_tensor({2, 3}, rng)}, [&](Tape& t, const VarsD& v) {
    auto y = ad::affine(v[0], -1.7, 0.3);
    return ad::mse(y, target(t, y.shape()));
  });
  check("log_clamped", {random_tensor({2, 3}, rng, 0.1, 0.9)},
        [&](Tape& t, const VarsD& v) {
          auto y = ad::log_clamped(v[0], 1e-7, 1.0 - 1e-7);
          return ad::mse(y, target(t, y.shape()));
        });
  check("mean", {random_tensor({2, 3}, rng)}, [&](Tape&, const VarsD& v) {
    return ad::affine(ad::mean(v[0]), 3.0, 0.0);
  });
  check("mse", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
        [&](Tape&, const VarsD& v) { return ad::mse(v[0], v[1]); });
  check("weighted_sum", {random_tensor({4}, rng), random_tensor({4}, rng)},
        [&](Tape& t, const VarsD& v) {
          auto a = ad::mse(v[0], target(t, {4}));
          auto b = ad::mse(v[1], target(t, {4}));
          return ad::weighted_sum<double>({a, b}, {0.7, 0.3});
        });
  return out;
}

// Finite differences through the whole generator on a tiny schema
// (C_x = 4, grid 8) in 64-bit mode; worst relative error over all tensors.
inline double generator_fd_max_rel(defog::kernel::Mode mode) {
  auto tiny = std::make_shared<const defog::ChannelSchema>(
      defog::ChannelSchema({"f_unit"}, {"e_unit"}, {"e_building"}));
  defog::GeneratorSpec gs = defog::GeneratorSpec::for_schema(*tiny, 2, 8);
  gs.stages = 2;
  gs.head_init_scale = 1.0;
  defog::ParamStoreD store = defog::build_generator(gs, *tiny, 7).cast<double>();
  // Non-trivial batch-norm parameters and statistics.
  std::mt19937_64 rng(56);
  for (auto& [name, t] : store.params())
    if (name.find(".bn.") != std::string::npos)
      for (auto& v : t.storage()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  for (auto& [name, t] : store.buffers())
    for (auto& v : t.storage()) v = std::uniform_real_distribution<double>(0.2, 1.2)(rng);
  TensorD x = random_tensor({2, 4, 8, 8}, rng, 0.0, 2.0);
  TensorD target = random_tensor({2, 3, 8, 8}, rng, 0.0, 2.0);

  // Running statistics stay fixed: every evaluation works on a scratch copy.
  auto loss_of = [&](const defog::ParamStoreD& st, std::map<std::string, TensorD>* grads) {
    defog::ad::Tape<double> tape;
    auto params = defog::ad::bind_params(tape, st);
    defog::ParamStoreD scratch = st;
    auto y = defog::generator_forward(tape, params, scratch, gs, *tiny, x, mode);
    auto loss = defog::ad::mse(y, tape.constant(target));
    if (grads) {
      tape.backward(loss);
      *grads = tape.param_grads();
    }
    return loss.value()[0];
  };

  std::map<std::string, TensorD> grads;
  loss_of(store, &grads);
  double worst = 0;
  const double h = kFdStep;
  for (auto& [name, t] : store.params()) {
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    for (int p = 0; p < 5; ++p) {
      const std::size_t k = pick(rng);
      const double orig = t[k];
      t[k] = orig + h;
      const double lp = loss_of(store, nullptr);
      t[k] = orig - h;
      const double lm = loss_of(store, nullptr);
      t[k] = orig;
      const double num = (lp - lm) / (2 * h);
      const double rel = rel_err(grads.at(name)[k], num, kFdFloor);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace testing
