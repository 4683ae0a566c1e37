#pragma once

#include <cstdint>
#include <random>

#include "defog/tensor.hpp"

// Forward and backward kernels for the layer set used by the networks.
// All kernels are pure functions of their arguments except the batch-norm
// running statistics, which are updated in place in train mode.
namespace defog::kernel {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  // Extra rows/columns appended to a transposed-convolution output so that
  // stride-2 upsampling mirrors a stride-2 convolution exactly.
  int output_pad = 0;
};

// Output extent of a convolution over `in` cells (floor division).
std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g);
// Output extent of a transposed convolution over `in` cells.
std::size_t tconv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g);

// x [N,Ci,H,W], w [Co,Ci,k,k], b [Co] -> [N,Co,H',W'].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      const ConvGeometry& g);

// Accumulates into any non-null output gradient.
template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                     const ConvGeometry& g, BasicTensor<T>* dx, BasicTensor<T>* dw,
                     BasicTensor<T>* db);

// x [N,Ci,H,W], w [Ci,Co,k,k], b [Co] -> [N,Co,H',W'], H' = (H-1)s - 2p + k + output_pad.
template <typename T>
BasicTensor<T> tconv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                       const ConvGeometry& g);

template <typename T>
void tconv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                      const ConvGeometry& g, BasicTensor<T>* dx, BasicTensor<T>* dw,
                      BasicTensor<T>* db);

// Block sum with filter s and stride s over the last two extents.
template <typename T>
BasicTensor<T> sumpool(const BasicTensor<T>& m, std::size_t s);

// Broadcasts each pooled gradient to its s x s block.
template <typename T>
BasicTensor<T> sumpool_backward(const BasicTensor<T>& dy, std::size_t s);

template <typename T>
struct BatchNormCache {
  BasicTensor<T> xhat;
  std::vector<T> inv_std;
};

enum class Mode { train, eval };

// x [N,C,H,W]; statistics per channel over (N,H,W). In train mode running
// statistics become momentum * running + (1 - momentum) * batch.
template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                         BasicTensor<T>& running_var, Mode mode, double momentum, double eps,
                         BatchNormCache<T>* cache);

template <typename T>
void batchnorm_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                        const BatchNormCache<T>& cache, Mode mode, BasicTensor<T>* dx,
                        BasicTensor<T>* dgamma, BasicTensor<T>* dbeta);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, double slope);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

// Inverted dropout. Returns the output and writes the keep-scale mask
// (0 or 1/(1-rate)) when `mask` is non-null.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, Mode mode, std::mt19937_64& rng,
                       BasicTensor<T>* mask);

// x [N,D], w [D,K], b [K] -> [N,K].
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
void dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                    BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db);

template <typename T>
T mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace defog::kernel
