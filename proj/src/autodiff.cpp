#include "defog/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace defog::ad {

template <typename T>
Var<T> Tape<T>::constant(TensorT value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::param(const std::string& name, TensorT value) {
  if (params_.count(name)) throw ShapeError("parameter bound twice on tape: " + name);
  Node n;
  n.op = "param";
  n.value = std::move(value);
  n.param = name;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  params_[name] = id;
  return {this, id};
}

template <typename T>
Var<T> Tape<T>::record(const char* op, TensorT value, std::vector<int> inputs,
                       BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename Tape<T>::TensorT* Tape<T>::grad_sink(int id) {
  Node& n = nodes_.at(id);
  if (!n.needs) return nullptr;
  if (!n.has_grad) {
    n.grad = TensorT::zeros_like(n.value);
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss, const ParamFilter& want) {
  if (loss.tape != this) throw ShapeError("backward on a variable from another tape");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     shape_str(nodes_.at(loss.id).value.shape()));
  }
  selected_.clear();
  for (auto& n : nodes_) {
    n.needs = false;
    n.has_grad = false;
    n.grad = TensorT();
  }
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (!n.param.empty()) {
      n.needs = !want || want(n.param);
      if (n.needs) selected_.push_back(n.param);
      continue;
    }
    for (int in : n.inputs) n.needs = n.needs || nodes_[in].needs;
  }
  if (!nodes_[loss.id].needs) return;
  grad_sink(loss.id)->fill(T(1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs || !n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
    // Intermediate gradients are no longer needed once propagated.
    if (n.param.empty()) {
      n.grad = TensorT();
      n.has_grad = false;
    }
  }
}

template <typename T>
GradMap<T> Tape<T>::param_grads() const {
  GradMap<T> out;
  for (const auto& name : selected_) {
    const Node& n = nodes_[params_.at(name)];
    out.emplace(name, n.has_grad ? n.grad : TensorT::zeros_like(n.value));
  }
  return out;
}

template <typename T>
typename Tape<T>::TensorT Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  return n.has_grad ? n.grad : TensorT::zeros_like(n.value);
}

template <typename T>
std::map<std::string, Var<T>> bind_params(Tape<T>& tape, const BasicParamStore<T>& store) {
  std::map<std::string, Var<T>> vars;
  for (const auto& [name, t] : store.params()) vars.emplace(name, tape.param(name, t));
  return vars;
}

namespace {

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ShapeError("operands recorded on different tapes");
}

template <typename T>
void accumulate(BasicTensor<T>* dst, const BasicTensor<T>& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeometry& g) {
  same_tape(x, w);
  same_tape(x, b);
  auto y = kernel::conv2d(x.value(), w.value(), b.value(), g);
  return x.tape->record("conv2d", std::move(y), {x.id, w.id, b.id},
                        [xi = x.id, wi = w.id, bi = b.id, g](Tape<T>& t, const BasicTensor<T>& dy) {
                          kernel::conv2d_backward(t.value(xi), t.value(wi), dy, g, t.grad_sink(xi),
                                                  t.grad_sink(wi), t.grad_sink(bi));
                        });
}

template <typename T>
Var<T> tconv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeometry& g) {
  same_tape(x, w);
  same_tape(x, b);
  auto y = kernel::tconv2d(x.value(), w.value(), b.value(), g);
  return x.tape->record("tconv2d", std::move(y), {x.id, w.id, b.id},
                        [xi = x.id, wi = w.id, bi = b.id, g](Tape<T>& t, const BasicTensor<T>& dy) {
                          kernel::tconv2d_backward(t.value(xi), t.value(wi), dy, g, t.grad_sink(xi),
                                                   t.grad_sink(wi), t.grad_sink(bi));
                        });
}

template <typename T>
Var<T> sumpool(Var<T> x, std::size_t s) {
  auto y = kernel::sumpool(x.value(), s);
  return x.tape->record("sumpool", std::move(y), {x.id},
                        [xi = x.id, s](Tape<T>& t, const BasicTensor<T>& dy) {
                          accumulate(t.grad_sink(xi), kernel::sumpool_backward(dy, s));
                        });
}

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BasicTensor<T>& running_mean,
                 BasicTensor<T>& running_var, Mode mode, double momentum, double eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  auto cache = std::make_shared<kernel::BatchNormCache<T>>();
  auto y = kernel::batchnorm(x.value(), gamma.value(), beta.value(), running_mean, running_var,
                             mode, momentum, eps, cache.get());
  return x.tape->record(
      "batchnorm", std::move(y), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, cache, mode](Tape<T>& t, const BasicTensor<T>& dy) {
        kernel::batchnorm_backward(dy, t.value(gi), *cache, mode, t.grad_sink(xi), t.grad_sink(gi),
                                   t.grad_sink(bi));
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  auto y = kernel::relu(x.value());
  return x.tape->record("relu", std::move(y), {x.id}, [xi = x.id](Tape<T>& t, const BasicTensor<T>& dy) {
    auto* dx = t.grad_sink(xi);
    if (!dx) return;
    const auto& xv = t.value(xi);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > T(0)) (*dx)[i] += dy[i];
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope) {
  auto y = kernel::leaky_relu(x.value(), slope);
  return x.tape->record("leaky_relu", std::move(y), {x.id},
                        [xi = x.id, slope](Tape<T>& t, const BasicTensor<T>& dy) {
                          auto* dx = t.grad_sink(xi);
                          if (!dx) return;
                          const auto& xv = t.value(xi);
                          const T a = static_cast<T>(slope);
                          for (std::size_t i = 0; i < dy.size(); ++i)
                            (*dx)[i] += xv[i] > T(0) ? dy[i] : a * dy[i];
                        });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  auto y = kernel::sigmoid(x.value());
  // The backward pass reads this node's own output.
  const int self = static_cast<int>(x.tape->size());
  return x.tape->record("sigmoid", std::move(y), {x.id},
                        [xi = x.id, self](Tape<T>& t, const BasicTensor<T>& dy) {
                          auto* dx = t.grad_sink(xi);
                          if (!dx) return;
                          const auto& yv = t.value(self);
                          for (std::size_t i = 0; i < dy.size(); ++i)
                            (*dx)[i] += dy[i] * yv[i] * (T(1) - yv[i]);
                        });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, std::mt19937_64& rng) {
  BasicTensor<T> mask;
  auto y = kernel::dropout(x.value(), rate, mode, rng, &mask);
  return x.tape->record("dropout", std::move(y), {x.id},
                        [xi = x.id, mask = std::move(mask)](Tape<T>& t, const BasicTensor<T>& dy) {
                          auto* dx = t.grad_sink(xi);
                          if (!dx) return;
                          for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * mask[i];
                        });
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  same_tape(x, w);
  same_tape(x, b);
  auto y = kernel::dense(x.value(), w.value(), b.value());
  return x.tape->record("dense", std::move(y), {x.id, w.id, b.id},
                        [xi = x.id, wi = w.id, bi = b.id](Tape<T>& t, const BasicTensor<T>& dy) {
                          kernel::dense_backward(t.value(xi), t.value(wi), dy, t.grad_sink(xi),
                                                 t.grad_sink(wi), t.grad_sink(bi));
                        });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto y = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(y), {x.id},
                        [xi = x.id](Tape<T>& t, const BasicTensor<T>& dy) {
                          accumulate(t.grad_sink(xi), dy);
                        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->record("add", std::move(y), {a.id, b.id},
                        [ai = a.id, bi = b.id](Tape<T>& t, const BasicTensor<T>& dy) {
                          accumulate(t.grad_sink(ai), dy);
                          accumulate(t.grad_sink(bi), dy);
                        });
}

template <typename T>
Var<T> affine(Var<T> x, double a, double c) {
  BasicTensor<T> y = x.value();
  const T at = static_cast<T>(a), ct = static_cast<T>(c);
  for (auto& v : y.data()) v = at * v + ct;
  return x.tape->record("affine", std::move(y), {x.id},
                        [xi = x.id, at](Tape<T>& t, const BasicTensor<T>& dy) {
                          auto* dx = t.grad_sink(xi);
                          if (!dx) return;
                          for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += at * dy[i];
                        });
}

template <typename T>
Var<T> log_clamped(Var<T> x, double lo, double hi) {
  BasicTensor<T> y(x.shape());
  const auto& xv = x.value();
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::log(std::clamp(xv[i], l, h));
  return x.tape->record("log_clamped", std::move(y), {x.id},
                        [xi = x.id, l, h](Tape<T>& t, const BasicTensor<T>& dy) {
                          auto* dx = t.grad_sink(xi);
                          if (!dx) return;
                          const auto& xv = t.value(xi);
                          for (std::size_t i = 0; i < dy.size(); ++i)
                            if (xv[i] >= l && xv[i] <= h) (*dx)[i] += dy[i] / xv[i];
                        });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const auto& xv = x.value();
  if (xv.size() == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0;
  for (T v : xv.data()) acc += v;
  BasicTensor<T> y({1}, static_cast<T>(acc / static_cast<double>(xv.size())));
  return x.tape->record("mean", std::move(y), {x.id}, [xi = x.id](Tape<T>& t, const BasicTensor<T>& dy) {
    auto* dx = t.grad_sink(xi);
    if (!dx) return;
    const T g = dy[0] / static_cast<T>(dx->size());
    for (auto& v : dx->data()) v += g;
  });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  same_tape(a, b);
  BasicTensor<T> y({1}, kernel::mse(a.value(), b.value()));
  return a.tape->record("mse", std::move(y), {a.id, b.id},
                        [ai = a.id, bi = b.id](Tape<T>& t, const BasicTensor<T>& dy) {
                          auto* da = t.grad_sink(ai);
                          auto* db = t.grad_sink(bi);
                          const auto& av = t.value(ai);
                          const auto& bv = t.value(bi);
                          const T scale = T(2) * dy[0] / static_cast<T>(av.size());
                          for (std::size_t i = 0; i < av.size(); ++i) {
                            const T d = scale * (av[i] - bv[i]);
                            if (da) (*da)[i] += d;
                            if (db) (*db)[i] -= d;
                          }
                        });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ShapeError("weighted_sum needs one weight per term and at least one term");
  }
  std::vector<int> ids;
  double acc = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    same_tape(terms[0], terms[i]);
    if (terms[i].value().size() != 1) throw ShapeError("weighted_sum terms must be scalars");
    acc += weights[i] * static_cast<double>(terms[i].value()[0]);
    ids.push_back(terms[i].id);
  }
  return terms[0].tape->record("weighted_sum", BasicTensor<T>({1}, static_cast<T>(acc)), ids,
                               [ids, weights](Tape<T>& t, const BasicTensor<T>& dy) {
                                 for (std::size_t i = 0; i < ids.size(); ++i) {
                                   if (auto* d = t.grad_sink(ids[i]))
                                     (*d)[0] += static_cast<T>(weights[i]) * dy[0];
                                 }
                               });
}

#define DEFOG_INSTANTIATE_AD(T)                                                                  \
  template class Tape<T>;                                                                        \
  template std::map<std::string, Var<T>> bind_params(Tape<T>&, const BasicParamStore<T>&);       \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, const ConvGeometry&);                           \
  template Var<T> tconv2d(Var<T>, Var<T>, Var<T>, const ConvGeometry&);                          \
  template Var<T> sumpool(Var<T>, std::size_t);                                                  \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BasicTensor<T>&, BasicTensor<T>&, Mode,      \
                            double, double);                                                     \
  template Var<T> relu(Var<T>);                                                                  \
  template Var<T> leaky_relu(Var<T>, double);                                                    \
  template Var<T> sigmoid(Var<T>);                                                               \
  template Var<T> dropout(Var<T>, double, Mode, std::mt19937_64&);                               \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                                 \
  template Var<T> reshape(Var<T>, Shape);                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                           \
  template Var<T> affine(Var<T>, double, double);                                                \
  template Var<T> log_clamped(Var<T>, double, double);                                           \
  template Var<T> mean(Var<T>);                                                                  \
  template Var<T> mse(Var<T>, Var<T>);                                                           \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<double>&);

DEFOG_INSTANTIATE_AD(float)
DEFOG_INSTANTIATE_AD(double)

}  // namespace defog::ad
