#include "defog/losses.hpp"

#include <algorithm>
#include <cmath>

namespace defog {

namespace {
bool is_power_of_two(std::size_t r) { return r != 0 && (r & (r - 1)) == 0; }
}  // namespace

std::size_t PyramidConfig::levels() const {
  validate();
  std::size_t n = 1;
  for (std::size_t r = resolution; r > 1; r >>= 1) ++n;
  return n;
}

std::vector<double> PyramidConfig::weights() const { return pyramid_weights(resolution); }

void PyramidConfig::validate() const {
  if (!is_power_of_two(resolution)) {
    throw ShapeError("pyramid resolution must be a power of two, got " + std::to_string(resolution));
  }
}

std::vector<double> pyramid_weights(std::size_t resolution) {
  const std::size_t levels = PyramidConfig{resolution}.levels();
  std::vector<double> w(levels);
  double norm = 0;
  for (std::size_t k = 0; k < levels; ++k) norm += std::ldexp(1.0, -2 * static_cast<int>(k));
  for (std::size_t i = 0; i < levels; ++i) w[i] = std::ldexp(1.0, -2 * static_cast<int>(i)) / norm;
  return w;
}

void LossWeights::validate() const {
  if (!(rec >= 0) || !(adv >= 0)) throw ShapeError("loss weights must be non-negative");
}

template <typename T>
ad::Var<T> rec_loss(ad::Var<T> pred, ad::Var<T> truth, const PyramidConfig& pyramid) {
  const auto& s = pred.shape();
  if (s != truth.shape()) {
    throw ShapeError("rec_loss shape mismatch: " + shape_str(s) + " vs " + shape_str(truth.shape()));
  }
  if (s.size() < 2 || s[s.size() - 1] != pyramid.resolution || s[s.size() - 2] != pyramid.resolution) {
    throw ShapeError("rec_loss spatial extent of " + shape_str(s) + " differs from pyramid resolution " +
                     std::to_string(pyramid.resolution));
  }
  const auto weights = pyramid.weights();
  std::vector<ad::Var<T>> terms;
  auto p = pred, t = truth;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (i > 0) {
      p = ad::sumpool(p, 2);
      t = ad::sumpool(t, 2);
    }
    terms.push_back(ad::mse(p, t));
  }
  return ad::weighted_sum(terms, weights);
}

template <typename T>
ad::Var<T> plain_l2_loss(ad::Var<T> pred, ad::Var<T> truth) {
  return ad::mse(pred, truth);
}

template <typename T>
ad::Var<T> adv_loss_G(ad::Var<T> d_fake, bool non_saturating) {
  if (non_saturating) return ad::affine(ad::mean(ad::log_clamped(d_fake, kProbabilityEps, 1.0)), -1, 0);
  return ad::mean(ad::log_clamped(ad::affine(d_fake, -1, 1), kProbabilityEps, 1.0));
}

template <typename T>
ad::Var<T> loss_D(ad::Var<T> d_real, ad::Var<T> d_fake) {
  auto real = ad::mean(ad::log_clamped(d_real, kProbabilityEps, 1.0));
  auto fake = ad::mean(ad::log_clamped(ad::affine(d_fake, -1, 1), kProbabilityEps, 1.0));
  return ad::weighted_sum<T>({real, fake}, {-1.0, -1.0});
}

template <typename T>
ad::Var<T> total_G(ad::Var<T> rec, ad::Var<T> adv, const LossWeights& weights) {
  return ad::weighted_sum<T>({rec, adv}, {weights.rec, weights.adv});
}

double rec_loss_value(const Tensor& pred, const Tensor& truth, const PyramidConfig& pyramid) {
  ad::Tape<float> tape;
  return rec_loss(tape.constant(pred), tape.constant(truth), pyramid).value()[0];
}

namespace {
double clamped_log(double p) { return std::log(std::clamp(p, kProbabilityEps, 1.0)); }
}  // namespace

double adv_loss_G_value(std::span<const double> d_fake) {
  double acc = 0;
  for (double d : d_fake) acc += clamped_log(1.0 - d);
  return acc / static_cast<double>(d_fake.size());
}

double loss_D_value(std::span<const double> d_real, std::span<const double> d_fake) {
  double real = 0, fake = 0;
  for (double d : d_real) real += clamped_log(d);
  for (double d : d_fake) fake += clamped_log(1.0 - d);
  return -real / static_cast<double>(d_real.size()) - fake / static_cast<double>(d_fake.size());
}

double total_G_value(double rec, double adv, const LossWeights& weights) {
  return weights.rec * rec + weights.adv * adv;
}

#define DEFOG_INSTANTIATE_LOSSES(T)                                               \
  template ad::Var<T> rec_loss(ad::Var<T>, ad::Var<T>, const PyramidConfig&);     \
  template ad::Var<T> plain_l2_loss(ad::Var<T>, ad::Var<T>);                      \
  template ad::Var<T> adv_loss_G(ad::Var<T>, bool);                               \
  template ad::Var<T> loss_D(ad::Var<T>, ad::Var<T>);                             \
  template ad::Var<T> total_G(ad::Var<T>, ad::Var<T>, const LossWeights&);

DEFOG_INSTANTIATE_LOSSES(float)
DEFOG_INSTANTIATE_LOSSES(double)

}  // namespace defog
