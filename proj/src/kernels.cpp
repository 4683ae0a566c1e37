#include "defog/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "defog/random.hpp"

namespace defog::kernel {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_rank4(const Shape& s, const char* name) {
  require(s.size() == 4, std::string(name) + " must be 4-d [N,C,H,W], got " + shape_str(s));
}

struct Patch {
  std::size_t channels, in_h, in_w, k, out_h, out_w;
  int stride, pad;
};

// Output columns ow whose input column ow*stride - pad + kj lies inside [0, in_w).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, int stride,
                                                       int pad, std::size_t kk) {
  const long off = static_cast<long>(kk) - pad;
  // ow*stride + off >= 0  and  ow*stride + off < in
  long lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  long hi = static_cast<long>(in) - off <= 0 ? 0 : (static_cast<long>(in) - off + stride - 1) / stride;
  lo = std::min<long>(lo, static_cast<long>(out));
  hi = std::clamp<long>(hi, lo, static_cast<long>(out));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// image [N,C,Hi,Wi] -> col [C*k*k, N*Ho*Wo]
template <typename T>
void im2col(const T* image, std::size_t batch, const Patch& p, T* col) {
  const std::size_t plane = p.out_h * p.out_w;
  const std::size_t cols = batch * plane;
  for (std::size_t c = 0; c < p.channels; ++c) {
    for (std::size_t ki = 0; ki < p.k; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(p.out_h, p.in_h, p.stride, p.pad, ki);
      for (std::size_t kj = 0; kj < p.k; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(p.out_w, p.in_w, p.stride, p.pad, kj);
        const long col_off = static_cast<long>(kj) - p.pad;
        T* row = col + ((c * p.k + ki) * p.k + kj) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* src = image + (n * p.channels + c) * p.in_h * p.in_w;
          T* dst = row + n * plane;
          std::fill(dst, dst + oh_lo * p.out_w, T(0));
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const long ih = static_cast<long>(oh) * p.stride - p.pad + static_cast<long>(ki);
            T* drow = dst + oh * p.out_w;
            const T* srow = src + ih * p.in_w + col_off;
            std::fill(drow, drow + ow_lo, T(0));
            if (p.stride == 1) {
              std::copy(srow + ow_lo, srow + ow_hi, drow + ow_lo);
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) drow[ow] = srow[ow * p.stride];
            }
            std::fill(drow + ow_hi, drow + p.out_w, T(0));
          }
          std::fill(dst + oh_hi * p.out_w, dst + plane, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col back into image.
template <typename T>
void col2im(const T* col, std::size_t batch, const Patch& p, T* image) {
  const std::size_t plane = p.out_h * p.out_w;
  const std::size_t cols = batch * plane;
  for (std::size_t c = 0; c < p.channels; ++c) {
    for (std::size_t ki = 0; ki < p.k; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(p.out_h, p.in_h, p.stride, p.pad, ki);
      for (std::size_t kj = 0; kj < p.k; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(p.out_w, p.in_w, p.stride, p.pad, kj);
        const long col_off = static_cast<long>(kj) - p.pad;
        const T* row = col + ((c * p.k + ki) * p.k + kj) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          T* dst = image + (n * p.channels + c) * p.in_h * p.in_w;
          const T* src = row + n * plane;
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const long ih = static_cast<long>(oh) * p.stride - p.pad + static_cast<long>(ki);
            T* drow = dst + ih * p.in_w + col_off;
            const T* srow = src + oh * p.out_w;
            if (p.stride == 1) {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) drow[ow] += srow[ow];
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) drow[ow * p.stride] += srow[ow];
            }
          }
        }
      }
    }
  }
}

// [N,C,P] -> [C, N*P]
template <typename T>
void to_channel_major(const T* src, std::size_t n, std::size_t c, std::size_t plane, T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (i * c + ch) * plane, plane, dst + ch * n * plane + i * plane);
}

// [C, N*P] -> [N,C,P], accumulating when `add` is set.
template <typename T>
void from_channel_major(const T* src, std::size_t n, std::size_t c, std::size_t plane, T* dst,
                        bool add) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* s = src + ch * n * plane + i * plane;
      T* d = dst + (i * c + ch) * plane;
      if (add) {
        for (std::size_t j = 0; j < plane; ++j) d[j] += s[j];
      } else {
        std::copy_n(s, plane, d);
      }
    }
}

void check_geometry(const ConvGeometry& g) {
  require(g.stride >= 1, "stride must be >= 1, got " + std::to_string(g.stride));
  require(g.pad >= 0, "pad must be >= 0, got " + std::to_string(g.pad));
  require(g.output_pad >= 0 && g.output_pad < g.stride,
          "output_pad must lie in [0, stride), got " + std::to_string(g.output_pad));
}

template <typename T>
void bias_grad(const BasicTensor<T>& dy, BasicTensor<T>* db) {
  if (!db) return;
  const std::size_t n = dy.dim(0), c = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = dy.ptr() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    }
    (*db)[ch] += acc;
  }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  check_geometry(g);
  const long span = static_cast<long>(in) + 2L * g.pad - static_cast<long>(k);
  require(k >= 1, "kernel extent must be >= 1");
  require(span >= 0, "kernel extent " + std::to_string(k) + " exceeds padded input extent " +
                         std::to_string(in + 2 * g.pad));
  return static_cast<std::size_t>(span / g.stride) + 1;
}

std::size_t tconv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  check_geometry(g);
  require(k >= 1 && in >= 1, "transposed convolution needs k >= 1 and a non-empty input");
  const long out = (static_cast<long>(in) - 1) * g.stride - 2L * g.pad + static_cast<long>(k) +
                   g.output_pad;
  require(out >= 1, "transposed convolution output extent would be " + std::to_string(out));
  return static_cast<std::size_t>(out);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      const ConvGeometry& g) {
  require_rank4(x.shape(), "conv2d input");
  require_rank4(w.shape(), "conv2d weight");
  require(w.dim(2) == w.dim(3), "conv2d weight must be square, got " + shape_str(w.shape()));
  require(w.dim(1) == x.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape()) +
                                    " has " + std::to_string(x.dim(1)) + " channels, weight " +
                                    shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)));
  require(b.size() == w.dim(0), "conv2d bias length " + std::to_string(b.size()) +
                                    " != output channels " + std::to_string(w.dim(0)));
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(0), k = w.dim(2);
  const std::size_t ho = conv_out_extent(x.dim(2), k, g), wo = conv_out_extent(x.dim(3), k, g);
  const Patch p{ci, x.dim(2), x.dim(3), k, ho, wo, g.stride, g.pad};
  const std::size_t kk = ci * k * k, cols = n * ho * wo;

  std::vector<T> col(kk * cols);
  im2col(x.ptr(), n, p, col.data());
  std::vector<T> out_cm(co * cols);
  MatMap<T>(out_cm.data(), co, cols).noalias() =
      ConstMatMap<T>(w.ptr(), co, kk) * ConstMatMap<T>(col.data(), kk, cols);

  BasicTensor<T> y({n, co, ho, wo});
  from_channel_major(out_cm.data(), n, co, ho * wo, y.ptr(), false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < co; ++ch) {
      T* d = y.ptr() + (i * co + ch) * ho * wo;
      for (std::size_t j = 0; j < ho * wo; ++j) d[j] += b[ch];
    }
  return y;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                     const ConvGeometry& g, BasicTensor<T>* dx, BasicTensor<T>* dw,
                     BasicTensor<T>* db) {
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(0), k = w.dim(2);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3);
  const Patch p{ci, x.dim(2), x.dim(3), k, ho, wo, g.stride, g.pad};
  const std::size_t kk = ci * k * k, cols = n * ho * wo;

  std::vector<T> dy_cm(co * cols);
  to_channel_major(dy.ptr(), n, co, ho * wo, dy_cm.data());
  ConstMatMap<T> dym(dy_cm.data(), co, cols);

  if (dw) {
    std::vector<T> col(kk * cols);
    im2col(x.ptr(), n, p, col.data());
    MatMap<T>(dw->ptr(), co, kk).noalias() += dym * ConstMatMap<T>(col.data(), kk, cols).transpose();
  }
  if (dx) {
    std::vector<T> dcol(kk * cols);
    MatMap<T>(dcol.data(), kk, cols).noalias() = ConstMatMap<T>(w.ptr(), co, kk).transpose() * dym;
    col2im(dcol.data(), n, p, dx->ptr());
  }
  bias_grad(dy, db);
}

template <typename T>
BasicTensor<T> tconv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                       const ConvGeometry& g) {
  require_rank4(x.shape(), "tconv2d input");
  require_rank4(w.shape(), "tconv2d weight");
  require(w.dim(2) == w.dim(3), "tconv2d weight must be square, got " + shape_str(w.shape()));
  require(w.dim(0) == x.dim(1), "tconv2d channel mismatch: input " + shape_str(x.shape()) +
                                    " has " + std::to_string(x.dim(1)) + " channels, weight " +
                                    shape_str(w.shape()) + " expects " + std::to_string(w.dim(0)));
  require(b.size() == w.dim(1), "tconv2d bias length " + std::to_string(b.size()) +
                                    " != output channels " + std::to_string(w.dim(1)));
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(1), k = w.dim(2);
  const std::size_t h = x.dim(2), wd = x.dim(3);
  const std::size_t ho = tconv_out_extent(h, k, g), wo = tconv_out_extent(wd, k, g);
  const Patch p{co, ho, wo, k, h, wd, g.stride, g.pad};
  const std::size_t kk = co * k * k, cols = n * h * wd;

  std::vector<T> x_cm(ci * cols);
  to_channel_major(x.ptr(), n, ci, h * wd, x_cm.data());
  std::vector<T> col(kk * cols);
  MatMap<T>(col.data(), kk, cols).noalias() =
      ConstMatMap<T>(w.ptr(), ci, kk).transpose() * ConstMatMap<T>(x_cm.data(), ci, cols);

  BasicTensor<T> y({n, co, ho, wo});
  col2im(col.data(), n, p, y.ptr());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < co; ++ch) {
      T* d = y.ptr() + (i * co + ch) * ho * wo;
      for (std::size_t j = 0; j < ho * wo; ++j) d[j] += b[ch];
    }
  return y;
}

template <typename T>
void tconv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                      const ConvGeometry& g, BasicTensor<T>* dx, BasicTensor<T>* dw,
                      BasicTensor<T>* db) {
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(1), k = w.dim(2);
  const std::size_t h = x.dim(2), wd = x.dim(3);
  const Patch p{co, dy.dim(2), dy.dim(3), k, h, wd, g.stride, g.pad};
  const std::size_t kk = co * k * k, cols = n * h * wd;

  std::vector<T> dcol(kk * cols);
  im2col(dy.ptr(), n, p, dcol.data());
  ConstMatMap<T> dcm(dcol.data(), kk, cols);
  if (dx) {
    std::vector<T> dx_cm(ci * cols);
    MatMap<T>(dx_cm.data(), ci, cols).noalias() = ConstMatMap<T>(w.ptr(), ci, kk) * dcm;
    from_channel_major(dx_cm.data(), n, ci, h * wd, dx->ptr(), true);
  }
  if (dw) {
    std::vector<T> x_cm(ci * cols);
    to_channel_major(x.ptr(), n, ci, h * wd, x_cm.data());
    MatMap<T>(dw->ptr(), ci, kk).noalias() += ConstMatMap<T>(x_cm.data(), ci, cols) * dcm.transpose();
  }
  bias_grad(dy, db);
}

template <typename T>
BasicTensor<T> sumpool(const BasicTensor<T>& m, std::size_t s) {
  require(m.rank() >= 2, "sumpool needs at least 2 extents, got " + shape_str(m.shape()));
  require(s >= 1, "sumpool stride must be >= 1");
  const std::size_t r = m.rank();
  const std::size_t h = m.dim(r - 2), w = m.dim(r - 1);
  require(h % s == 0 && w % s == 0, "sumpool stride " + std::to_string(s) +
                                        " does not divide spatial extents of " + shape_str(m.shape()));
  if (s == 1) return m;
  Shape out_shape = m.shape();
  out_shape[r - 2] = h / s;
  out_shape[r - 1] = w / s;
  BasicTensor<T> out(out_shape);
  const std::size_t planes = m.size() / (h * w), oh = h / s, ow = w / s;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = m.ptr() + pl * h * w;
    T* dst = out.ptr() + pl * oh * ow;
    for (std::size_t i = 0; i < h; ++i) {
      T* drow = dst + (i / s) * ow;
      const T* srow = src + i * w;
      for (std::size_t j = 0; j < w; ++j) drow[j / s] += srow[j];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> sumpool_backward(const BasicTensor<T>& dy, std::size_t s) {
  if (s == 1) return dy;
  const std::size_t r = dy.rank();
  const std::size_t oh = dy.dim(r - 2), ow = dy.dim(r - 1);
  Shape in_shape = dy.shape();
  in_shape[r - 2] = oh * s;
  in_shape[r - 1] = ow * s;
  BasicTensor<T> dx(in_shape);
  const std::size_t planes = dy.size() / (oh * ow), h = oh * s, w = ow * s;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = dy.ptr() + pl * oh * ow;
    T* dst = dx.ptr() + pl * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = src[(i / s) * ow + j / s];
  }
  return dx;
}

template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                         BasicTensor<T>& running_var, Mode mode, double momentum, double eps,
                         BatchNormCache<T>* cache) {
  require_rank4(x.shape(), "batchnorm input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require(gamma.size() == c && beta.size() == c,
          "batchnorm gamma/beta length must equal channel count " + std::to_string(c));
  require(running_mean.size() == c && running_var.size() == c,
          "batchnorm running statistics must have length " + std::to_string(c));
  const double count = static_cast<double>(n * plane);

  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat(x.shape());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.ptr() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
      }
      mean = sum / count;
      double sq = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.ptr() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
      }
      var = sq / count;
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean[ch] = static_cast<T>(momentum * running_mean[ch] + (1 - momentum) * mean);
      running_var[ch] = static_cast<T>(momentum * running_var[ch] + (1 - momentum) * unbiased);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T m = static_cast<T>(mean);
    inv_std[ch] = istd;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const T xh = (x[off + j] - m) * istd;
        xhat[off + j] = xh;
        y[off + j] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
void batchnorm_backward(const BasicTensor<T>& dy, const BasicTensor<T>& gamma,
                        const BatchNormCache<T>& cache, Mode mode, BasicTensor<T>* dx,
                        BasicTensor<T>* dgamma, BasicTensor<T>* dbeta) {
  const std::size_t n = dy.dim(0), c = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(n * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += dy[off + j];
        sum_dy_xhat += static_cast<double>(dy[off + j]) * cache.xhat[off + j];
      }
    }
    if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_dy_xhat);
    if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_dy);
    if (!dx) continue;
    const T g = gamma[ch], istd = cache.inv_std[ch];
    if (mode == Mode::eval) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) (*dx)[off + j] += dy[off + j] * g * istd;
      }
      continue;
    }
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        (*dx)[off + j] += g * istd * (dy[off + j] - mean_dy - cache.xhat[off + j] * mean_dy_xhat);
      }
    }
  }
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  // NaN passes through so a poisoned network still shows up in the loss.
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < T(0) ? T(0) : x[i];
  return y;
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, double slope) {
  BasicTensor<T> y(x.shape());
  const T a = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : a * x[i];
  return y;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, Mode mode, std::mt19937_64& rng,
                       BasicTensor<T>* mask) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) {
    if (mask) *mask = BasicTensor<T>(x.shape(), T(1));
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> m(x.shape());
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rnd::u01(rng) < rate ? T(0) : keep_scale;
    y[i] = x[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return y;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require(x.rank() == 2 && w.rank() == 2, "dense expects x [N,D] and w [D,K], got " +
                                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
  require(x.dim(1) == w.dim(0), "dense inner extents disagree: x " + shape_str(x.shape()) +
                                    " vs w " + shape_str(w.shape()));
  require(b.size() == w.dim(1), "dense bias length " + std::to_string(b.size()) + " != " +
                                    std::to_string(w.dim(1)));
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(1);
  BasicTensor<T> y({n, k});
  MatMap<T>(y.ptr(), n, k).noalias() = ConstMatMap<T>(x.ptr(), n, d) * ConstMatMap<T>(w.ptr(), d, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) y[i * k + j] += b[j];
  return y;
}

template <typename T>
void dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                    BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db) {
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(1);
  ConstMatMap<T> dym(dy.ptr(), n, k);
  if (dx) MatMap<T>(dx->ptr(), n, d).noalias() += dym * ConstMatMap<T>(w.ptr(), d, k).transpose();
  if (dw) MatMap<T>(dw->ptr(), d, k).noalias() += ConstMatMap<T>(x.ptr(), n, d).transpose() * dym;
  if (db)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) (*db)[j] += dy[i * k + j];
}

template <typename T>
T mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(),
          "mse shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  require(a.size() > 0, "mse of empty tensors");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return static_cast<T>(acc / static_cast<double>(a.size()));
}

#define DEFOG_INSTANTIATE_KERNELS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>&, const ConvGeometry&);                     \
  template void conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                const BasicTensor<T>&, const ConvGeometry&, BasicTensor<T>*,      \
                                BasicTensor<T>*, BasicTensor<T>*);                                \
  template BasicTensor<T> tconv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                  const BasicTensor<T>&, const ConvGeometry&);                    \
  template void tconv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>&, const ConvGeometry&, BasicTensor<T>*,     \
                                 BasicTensor<T>*, BasicTensor<T>*);                               \
  template BasicTensor<T> sumpool(const BasicTensor<T>&, std::size_t);                            \
  template BasicTensor<T> sumpool_backward(const BasicTensor<T>&, std::size_t);                   \
  template BasicTensor<T> batchnorm(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                    const BasicTensor<T>&, BasicTensor<T>&, BasicTensor<T>&,      \
                                    Mode, double, double, BatchNormCache<T>*);                    \
  template void batchnorm_backward(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                   const BatchNormCache<T>&, Mode, BasicTensor<T>*,               \
                                   BasicTensor<T>*, BasicTensor<T>*);                             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                            \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, double);                              \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                         \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, Mode, std::mt19937_64&,          \
                                  BasicTensor<T>*);                                               \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                const BasicTensor<T>&);                                           \
  template void dense_backward(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                               const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,           \
                               BasicTensor<T>*);                                                  \
  template T mse(const BasicTensor<T>&, const BasicTensor<T>&);

DEFOG_INSTANTIATE_KERNELS(float)
DEFOG_INSTANTIATE_KERNELS(double)

}  // namespace defog::kernel
