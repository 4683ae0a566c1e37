#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "defog/autodiff.hpp"

namespace defog {

// Multi-scale sum-pool reconstruction settings. Level i pools with stride
// 2^i, i = 0..log2(resolution), and is weighted 4^-i / sum_k 4^-k.
struct PyramidConfig {
  std::size_t resolution = 32;

  std::size_t levels() const;
  std::vector<double> weights() const;
  void validate() const;
};

std::vector<double> pyramid_weights(std::size_t resolution);

struct LossWeights {
  double rec = 0.999;
  double adv = 0.001;

  void validate() const;
};

constexpr double kProbabilityEps = 1e-7;

// Weighted sum over levels of the MSE between sum-pooled prediction and truth.
template <typename T>
ad::Var<T> rec_loss(ad::Var<T> pred, ad::Var<T> truth, const PyramidConfig& pyramid);

// Level-0 MSE only.
template <typename T>
ad::Var<T> plain_l2_loss(ad::Var<T> pred, ad::Var<T> truth);

// mean log(1 - d_fake); with `non_saturating`, -mean log(d_fake).
template <typename T>
ad::Var<T> adv_loss_G(ad::Var<T> d_fake, bool non_saturating = false);

// -mean log d_real - mean log(1 - d_fake).
template <typename T>
ad::Var<T> loss_D(ad::Var<T> d_real, ad::Var<T> d_fake);

template <typename T>
ad::Var<T> total_G(ad::Var<T> rec, ad::Var<T> adv, const LossWeights& weights);

// Value-only forms.
double rec_loss_value(const Tensor& pred, const Tensor& truth, const PyramidConfig& pyramid);
double adv_loss_G_value(std::span<const double> d_fake);
double loss_D_value(std::span<const double> d_real, std::span<const double> d_fake);
double total_G_value(double rec, double adv, const LossWeights& weights);

}  // namespace defog
