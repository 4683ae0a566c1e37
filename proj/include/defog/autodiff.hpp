#pragma once

#include <deque>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "defog/kernels.hpp"
#include "defog/param_store.hpp"

// Tape-based reverse-mode differentiation over the kernel set. A Tape
// records each operation as it runs; nodes only reference earlier nodes, so
// the graph is acyclic and walking the tape backwards is a reverse
// topological order.
namespace defog::ad {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  // Receives the node's output gradient; pushes contributions into its
  // inputs through grad_sink().
  using BackwardFn = std::function<void(Tape&, const TensorT&)>;
  using ParamFilter = std::function<bool(const std::string&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(TensorT value);
  Var<T> param(const std::string& name, TensorT value);
  Var<T> record(const char* op, TensorT value, std::vector<int> inputs, BackwardFn backward);

  const TensorT& value(int id) const { return nodes_.at(id).value; }
  const char* op(int id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of node `id` during backward(), or nullptr when no
  // selected parameter depends on it.
  TensorT* grad_sink(int id);

  // Reverse sweep from a scalar loss. Only parameters accepted by `want`
  // (all when empty) and the nodes between them and the loss are visited.
  void backward(Var<T> loss, const ParamFilter& want = {});

  // Gradients of the parameters selected by the last backward(); a
  // parameter the loss does not depend on gets zeros.
  GradMap<T> param_grads() const;

  // Gradient of any node after backward(); zeros if it received none.
  TensorT grad(Var<T> v) const;

 private:
  struct Node {
    const char* op = "";
    TensorT value;
    std::vector<int> inputs;
    BackwardFn backward;
    std::string param;
    bool needs = false;
    bool has_grad = false;
    TensorT grad;
  };

  std::deque<Node> nodes_;
  std::map<std::string, int> params_;
  std::vector<std::string> selected_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

// Binds every parameter of a store onto a tape.
template <typename T>
std::map<std::string, Var<T>> bind_params(Tape<T>& tape, const BasicParamStore<T>& store);

using kernel::ConvGeometry;
using kernel::Mode;

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeometry& g);
template <typename T>
Var<T> tconv2d(Var<T> x, Var<T> w, Var<T> b, const ConvGeometry& g);
template <typename T>
Var<T> sumpool(Var<T> x, std::size_t s);
// Running statistics are read (eval) or updated in place (train).
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BasicTensor<T>& running_mean,
                 BasicTensor<T>& running_var, Mode mode, double momentum, double eps);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> leaky_relu(Var<T> x, double slope);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, std::mt19937_64& rng);
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
// a * x + c, elementwise.
template <typename T>
Var<T> affine(Var<T> x, double a, double c);
// log(clamp(x, lo, hi)); zero gradient where the clamp is active.
template <typename T>
Var<T> log_clamped(Var<T> x, double lo, double hi);
template <typename T>
Var<T> mean(Var<T> x);
// Mean of squared differences; scalar [1].
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);
// Sum of weight_i * term_i over scalar terms.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights);

}  // namespace defog::ad
