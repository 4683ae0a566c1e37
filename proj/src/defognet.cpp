#include "defog/defognet.hpp"

#include <cmath>

#include "defog/random.hpp"

namespace defog {

namespace {

std::string stage(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  for (auto& v : t.data()) v = static_cast<float>(rnd::uniform(rng, -bound, bound));
}

// He-uniform for rectifier layers; `gain2` is the squared activation gain.
double he_bound(std::size_t fan_in, double gain2 = 2.0) {
  return std::sqrt(3.0 * gain2 / static_cast<double>(fan_in));
}

void add_conv(ParamStore& store, const std::string& name, std::size_t out, std::size_t in,
              double bound, std::mt19937_64& rng) {
  Tensor w({out, in, 3, 3});
  init_uniform(w, bound, rng);
  store.add_param(name + ".w", std::move(w));
  store.add_param(name + ".b", Tensor({out}));
}

void add_tconv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               double bound, std::mt19937_64& rng) {
  Tensor w({in, out, 3, 3});
  init_uniform(w, bound, rng);
  store.add_param(name + ".w", std::move(w));
  store.add_param(name + ".b", Tensor({out}));
}

void add_bn(ParamStore& store, const std::string& name, std::size_t channels) {
  store.add_param(name + ".gamma", Tensor({channels}, 1.0f));
  store.add_param(name + ".beta", Tensor({channels}));
  store.add_buffer(name + ".mean", Tensor({channels}));
  store.add_buffer(name + ".var", Tensor({channels}, 1.0f));
}

std::size_t width_at(const GeneratorSpec& spec, std::size_t level) {
  return spec.base_filters << level;
}

const kernel::ConvGeometry kSame{1, 1, 0};
const kernel::ConvGeometry kDown{2, 1, 0};
const kernel::ConvGeometry kUp{2, 1, 1};

}  // namespace

GeneratorSpec GeneratorSpec::for_schema(const ChannelSchema& schema, std::size_t base_filters,
                                        std::size_t grid) {
  GeneratorSpec s;
  s.input_channels = schema.input_channels();
  s.output_channels = schema.truth_channels();
  s.base_filters = base_filters;
  s.grid = grid;
  return s;
}

void GeneratorSpec::validate(const ChannelSchema& schema) const {
  if (input_channels != schema.input_channels() || output_channels != schema.truth_channels()) {
    throw ShapeError("generator spec channels " + std::to_string(input_channels) + "->" +
                     std::to_string(output_channels) + " do not match schema " +
                     std::to_string(schema.input_channels()) + "->" +
                     std::to_string(schema.truth_channels()));
  }
  if (base_filters == 0) throw ShapeError("generator base filter count must be positive");
  if (stages == 0 || stages > 8) throw ShapeError("generator stage count must lie in [1, 8]");
  if (grid == 0 || grid % (std::size_t{1} << stages) != 0) {
    throw ShapeError("grid " + std::to_string(grid) + " is not divisible by 2^" +
                     std::to_string(stages) + "; decoder shapes could not mirror the encoder");
  }
  if (!(head_init_scale >= 0)) throw ShapeError("head_init_scale must be non-negative");
  if (!(bn_momentum >= 0 && bn_momentum < 1) || !(bn_eps > 0)) {
    throw ShapeError("batch-norm momentum must lie in [0,1) and eps must be positive");
  }
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"input_channels", input_channels}, {"output_channels", output_channels},
          {"base_filters", base_filters},     {"stages", stages},
          {"grid", grid},                     {"observation_connections", observation_connections},
          {"bn_momentum", bn_momentum},       {"bn_eps", bn_eps},
          {"head_init_scale", head_init_scale}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  try {
    s.input_channels = j.value("input_channels", s.input_channels);
    s.output_channels = j.value("output_channels", s.output_channels);
    s.base_filters = j.value("base_filters", s.base_filters);
    s.stages = j.value("stages", s.stages);
    s.grid = j.value("grid", s.grid);
    s.observation_connections = j.value("observation_connections", s.observation_connections);
    s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
    s.bn_eps = j.value("bn_eps", s.bn_eps);
    s.head_init_scale = j.value("head_init_scale", s.head_init_scale);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed generator spec: ") + e.what());
  }
  return s;
}

DiscriminatorSpec DiscriminatorSpec::for_schema(const ChannelSchema& schema,
                                                std::size_t base_filters, std::size_t grid) {
  DiscriminatorSpec s;
  s.input_channels = schema.truth_channels();
  s.base_filters = base_filters;
  s.grid = grid;
  return s;
}

void DiscriminatorSpec::validate() const {
  if (input_channels == 0 || base_filters == 0) {
    throw ShapeError("discriminator channel and filter counts must be positive");
  }
  if (grid < 8 || grid % 8 != 0) {
    throw ShapeError("discriminator grid must be a positive multiple of 8, got " +
                     std::to_string(grid));
  }
  if (!(dropout >= 0 && dropout < 1)) throw ShapeError("discriminator dropout must lie in [0,1)");
  if (!(leaky_slope >= 0)) throw ShapeError("leaky slope must be non-negative");
}

nlohmann::json DiscriminatorSpec::to_json() const {
  return {{"input_channels", input_channels}, {"base_filters", base_filters}, {"grid", grid},
          {"leaky_slope", leaky_slope},       {"dropout", dropout}};
}

DiscriminatorSpec DiscriminatorSpec::from_json(const nlohmann::json& j) {
  DiscriminatorSpec s;
  try {
    s.input_channels = j.value("input_channels", s.input_channels);
    s.base_filters = j.value("base_filters", s.base_filters);
    s.grid = j.value("grid", s.grid);
    s.leaky_slope = j.value("leaky_slope", s.leaky_slope);
    s.dropout = j.value("dropout", s.dropout);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed discriminator spec: ") + e.what());
  }
  return s;
}

ParamStore build_generator(const GeneratorSpec& spec, const ChannelSchema& schema,
                           std::uint64_t seed) {
  spec.validate(schema);
  std::mt19937_64 rng(seed);
  ParamStore store;
  add_conv(store, "enc0.conv", width_at(spec, 0), spec.input_channels,
           he_bound(spec.input_channels * 9), rng);
  add_bn(store, "enc0.bn", width_at(spec, 0));
  for (std::size_t i = 1; i <= spec.stages; ++i) {
    add_conv(store, stage("enc", i) + ".conv", width_at(spec, i), width_at(spec, i - 1),
             he_bound(width_at(spec, i - 1) * 9), rng);
    add_bn(store, stage("enc", i) + ".bn", width_at(spec, i));
  }
  for (std::size_t i = spec.stages; i-- > 0;) {
    add_tconv(store, stage("dec", i) + ".tconv", width_at(spec, i + 1), width_at(spec, i),
              he_bound(width_at(spec, i + 1) * 9), rng);
    add_bn(store, stage("dec", i) + ".bn", width_at(spec, i));
  }
  // Linear layers use LeCun-uniform bounds.
  add_conv(store, "out.conv", spec.input_channels, width_at(spec, 0),
           he_bound(width_at(spec, 0) * 9, 1.0), rng);
  add_conv(store, "head.conv", spec.output_channels, spec.input_channels,
           spec.head_init_scale * he_bound(spec.input_channels * 9, 1.0), rng);
  return store;
}

ParamStore build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  const double gain2 = 2.0 / (1.0 + spec.leaky_slope * spec.leaky_slope);
  std::size_t in = spec.input_channels;
  for (std::size_t i = 1; i <= 3; ++i) {
    const std::size_t out = spec.base_filters << (i - 1);
    add_conv(store, stage("conv", i), out, in, he_bound(in * 9, gain2), rng);
    in = out;
  }
  const std::size_t cells = (spec.grid / 8) * (spec.grid / 8);
  Tensor w({in * cells, 1});
  init_uniform(w, he_bound(in * cells, 1.0), rng);
  store.add_param("fc.w", std::move(w));
  store.add_param("fc.b", Tensor({1}));
  return store;
}

template <typename T>
ad::Var<T> generator_forward(ad::Tape<T>& tape, const std::map<std::string, ad::Var<T>>& p,
                             BasicParamStore<T>& store, const GeneratorSpec& spec,
                             const ChannelSchema& schema, const BasicTensor<T>& x,
                             kernel::Mode mode) {
  if (x.rank() != 4 || x.dim(1) != spec.input_channels || x.dim(2) != spec.grid ||
      x.dim(3) != spec.grid) {
    throw ShapeError("generator expects input [N," + std::to_string(spec.input_channels) + "," +
                     std::to_string(spec.grid) + "," + std::to_string(spec.grid) + "], got " +
                     shape_str(x.shape()));
  }
  auto conv_bn_relu = [&](ad::Var<T> in, const std::string& name, const kernel::ConvGeometry& g,
                          bool transposed) {
    const std::string op = transposed ? ".tconv" : ".conv";
    auto h = transposed ? ad::tconv2d(in, p.at(name + op + ".w"), p.at(name + op + ".b"), g)
                        : ad::conv2d(in, p.at(name + op + ".w"), p.at(name + op + ".b"), g);
    h = ad::batchnorm(h, p.at(name + ".bn.gamma"), p.at(name + ".bn.beta"),
                      store.buffer(name + ".bn.mean"), store.buffer(name + ".bn.var"), mode,
                      spec.bn_momentum, spec.bn_eps);
    return ad::relu(h);
  };

  const auto input = tape.constant(x);
  std::vector<ad::Var<T>> enc;
  enc.push_back(conv_bn_relu(input, "enc0", kSame, false));
  for (std::size_t i = 1; i <= spec.stages; ++i) {
    enc.push_back(conv_bn_relu(enc.back(), stage("enc", i), kDown, false));
  }
  auto d = enc.back();
  for (std::size_t i = spec.stages; i-- > 0;) {
    d = conv_bn_relu(d, stage("dec", i), kUp, true);
    if (spec.observation_connections) d = ad::add(d, enc[i]);
  }
  auto out = ad::conv2d(d, p.at("out.conv.w"), p.at("out.conv.b"), kSame);
  if (spec.observation_connections) out = ad::add(out, input);
  auto head = ad::conv2d(out, p.at("head.conv.w"), p.at("head.conv.b"), kSame);
  if (spec.observation_connections) {
    head = ad::add(head, tape.constant(observation_prior(x, schema)));
  }
  return ad::relu(head);
}

template <typename T>
ad::Var<T> discriminator_forward(const std::map<std::string, ad::Var<T>>& p,
                                 const DiscriminatorSpec& spec, ad::Var<T> y, kernel::Mode mode,
                                 std::mt19937_64& rng) {
  const auto& s = y.shape();
  if (s.size() != 4 || s[1] != spec.input_channels || s[2] != spec.grid || s[3] != spec.grid) {
    throw ShapeError("discriminator expects [N," + std::to_string(spec.input_channels) + "," +
                     std::to_string(spec.grid) + "," + std::to_string(spec.grid) + "], got " +
                     shape_str(s));
  }
  auto h = y;
  for (std::size_t i = 1; i <= 3; ++i) {
    const std::string name = stage("conv", i);
    h = ad::conv2d(h, p.at(name + ".w"), p.at(name + ".b"), kDown);
    h = ad::leaky_relu(h, spec.leaky_slope);
    h = ad::dropout(h, spec.dropout, mode, rng);
  }
  const std::size_t n = s[0];
  h = ad::reshape(h, {n, h.value().size() / n});
  return ad::sigmoid(ad::dense(h, p.at("fc.w"), p.at("fc.b")));
}

template ad::Var<float> generator_forward(ad::Tape<float>&,
                                          const std::map<std::string, ad::Var<float>>&,
                                          BasicParamStore<float>&, const GeneratorSpec&,
                                          const ChannelSchema&, const BasicTensor<float>&,
                                          kernel::Mode);
template ad::Var<double> generator_forward(ad::Tape<double>&,
                                           const std::map<std::string, ad::Var<double>>&,
                                           BasicParamStore<double>&, const GeneratorSpec&,
                                           const ChannelSchema&, const BasicTensor<double>&,
                                           kernel::Mode);
template ad::Var<float> discriminator_forward(const std::map<std::string, ad::Var<float>>&,
                                              const DiscriminatorSpec&, ad::Var<float>,
                                              kernel::Mode, std::mt19937_64&);
template ad::Var<double> discriminator_forward(const std::map<std::string, ad::Var<double>>&,
                                               const DiscriminatorSpec&, ad::Var<double>,
                                               kernel::Mode, std::mt19937_64&);

Tensor generate(ParamStore& store, const GeneratorSpec& spec, const ChannelSchema& schema,
                const Tensor& x, kernel::Mode mode) {
  ad::Tape<float> tape;
  auto params = ad::bind_params(tape, store);
  return generator_forward(tape, params, store, spec, schema, x, mode).value();
}

GridState generate(ParamStore& store, const GeneratorSpec& spec, const GridState& input) {
  if (input.kind() != StateKind::input) {
    throw ShapeError(std::string("generator consumes an input state, got ") +
                     kind_name(input.kind()));
  }
  const auto& t = input.tensor();
  auto y = generate(store, spec, input.schema(), t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}));
  return GridState(input.schema_ptr(), StateKind::predicted,
                   y.reshaped({y.dim(1), y.dim(2), y.dim(3)}));
}

Tensor discriminate(const ParamStore& store, const DiscriminatorSpec& spec, const Tensor& y,
                    kernel::Mode mode, std::mt19937_64& rng) {
  ad::Tape<float> tape;
  auto params = ad::bind_params(tape, store);
  return discriminator_forward(params, spec, tape.constant(y), mode, rng).value();
}

std::vector<std::string> correction_path_params() { return {"head.conv.w", "head.conv.b"}; }

}  // namespace defog
