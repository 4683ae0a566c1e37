#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "defog/tensor.hpp"

namespace defog {

// Named trainable tensors, non-trainable buffers (batch-norm running
// statistics) and the Adam moments of the trainable ones.
template <typename T>
class BasicParamStore {
 public:
  using TensorT = BasicTensor<T>;

  struct Moments {
    TensorT first;
    TensorT second;
    bool operator==(const Moments&) const = default;
  };

  void add_param(const std::string& name, TensorT value);
  void add_buffer(const std::string& name, TensorT value);

  bool has_param(const std::string& name) const { return params_.count(name) != 0; }
  TensorT& param(const std::string& name);
  const TensorT& param(const std::string& name) const;
  TensorT& buffer(const std::string& name);
  const TensorT& buffer(const std::string& name) const;
  Moments& moments(const std::string& name);
  const Moments& moments(const std::string& name) const;

  const std::map<std::string, TensorT>& params() const { return params_; }
  std::map<std::string, TensorT>& params() { return params_; }
  const std::map<std::string, TensorT>& buffers() const { return buffers_; }
  std::map<std::string, TensorT>& buffers() { return buffers_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step);
  void increment_step() { ++step_; }

  // Number of trainable scalars.
  std::size_t parameter_count() const;

  template <typename U>
  BasicParamStore<U> cast() const;

  bool operator==(const BasicParamStore&) const = default;

 private:
  std::map<std::string, TensorT> params_;
  std::map<std::string, TensorT> buffers_;
  std::map<std::string, Moments> moments_;
  std::int64_t step_ = 0;

  template <typename U>
  friend class BasicParamStore;
};

using ParamStore = BasicParamStore<float>;
using ParamStoreD = BasicParamStore<double>;

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update. Parameters without an entry in `grads`
// keep their value and moments; the step counter advances once per call.
template <typename T>
void adam_step(BasicParamStore<T>& store, const GradMap<T>& grads, const AdamConfig& cfg);

// DFGCKPT1 checkpoint: magic, u64 little-endian header length, JSON header,
// raw little-endian float32 tensors in header order.
struct NamedStore {
  std::string name;
  const ParamStore* store;
};

struct Checkpoint {
  std::map<std::string, ParamStore> stores;
  nlohmann::json meta;
};

void save_checkpoint(const std::string& path, const std::vector<NamedStore>& stores,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

// Throws ShapeError unless `loaded` has exactly the tensor names and shapes of `expected`.
void require_same_layout(const ParamStore& expected, const ParamStore& loaded,
                         const std::string& what);

}  // namespace defog
