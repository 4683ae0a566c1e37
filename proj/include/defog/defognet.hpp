#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "json.hpp"

#include "defog/autodiff.hpp"
#include "defog/param_store.hpp"
#include "defog/schema.hpp"

namespace defog {

// Encoder-decoder generator. Each encoder stage halves the grid with a
// stride-2 3x3 convolution and doubles the filter count; the decoder mirrors
// it with stride-2 transposed convolutions and adds the encoder activation of
// the same shape. A final convolution restores the input shape (plus the
// input itself), and a 3x3 channel-combination head maps C_x to C_y.
struct GeneratorSpec {
  std::size_t input_channels = 82;
  std::size_t output_channels = 66;
  std::size_t base_filters = 64;
  std::size_t stages = 3;
  std::size_t grid = 32;
  // Encoder-decoder skips and the observation prior added to the head.
  bool observation_connections = true;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  // Multiplies the head's LeCun-uniform bound, so the untrained generator
  // stays close to the observation prior.
  double head_init_scale = 0.01;

  static GeneratorSpec for_schema(const ChannelSchema& schema, std::size_t base_filters = 64,
                                  std::size_t grid = 32);
  void validate(const ChannelSchema& schema) const;
  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
  bool operator==(const GeneratorSpec&) const = default;
};

// Three stride-2 convolutions with leaky ReLU and dropout, then one dense
// logit and a sigmoid.
struct DiscriminatorSpec {
  std::size_t input_channels = 66;
  std::size_t base_filters = 64;
  std::size_t grid = 32;
  double leaky_slope = 0.2;
  double dropout = 0.3;

  static DiscriminatorSpec for_schema(const ChannelSchema& schema, std::size_t base_filters = 64,
                                      std::size_t grid = 32);
  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorSpec from_json(const nlohmann::json& j);
  bool operator==(const DiscriminatorSpec&) const = default;
};

ParamStore build_generator(const GeneratorSpec& spec, const ChannelSchema& schema,
                           std::uint64_t seed);
ParamStore build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed);

// Records the generator on `tape`. `x` is [N, C_x, H, W]; the result is
// rectify(head(...) + prior) of shape [N, C_y, H, W]. Train mode updates the
// batch-norm running statistics held in `store`.
template <typename T>
ad::Var<T> generator_forward(ad::Tape<T>& tape, const std::map<std::string, ad::Var<T>>& params,
                             BasicParamStore<T>& store, const GeneratorSpec& spec,
                             const ChannelSchema& schema, const BasicTensor<T>& x,
                             kernel::Mode mode);

// Records the discriminator; `y` is [N, C_y, H, W], result [N, 1] in (0, 1).
template <typename T>
ad::Var<T> discriminator_forward(const std::map<std::string, ad::Var<T>>& params,
                                 const DiscriminatorSpec& spec, ad::Var<T> y, kernel::Mode mode,
                                 std::mt19937_64& rng);

// Inference helpers without gradient bookkeeping.
Tensor generate(ParamStore& store, const GeneratorSpec& spec, const ChannelSchema& schema,
                const Tensor& x, kernel::Mode mode = kernel::Mode::eval);
GridState generate(ParamStore& store, const GeneratorSpec& spec, const GridState& input);
Tensor discriminate(const ParamStore& store, const DiscriminatorSpec& spec, const Tensor& y,
                    kernel::Mode mode, std::mt19937_64& rng);

// Parameters of the learned correction (head) whose zeroing leaves the
// generator output equal to the observation prior.
std::vector<std::string> correction_path_params();

}  // namespace defog
