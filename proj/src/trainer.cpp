#include "defog/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "defog/errors.hpp"
#include "defog/random.hpp"

namespace defog {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::size_t kEvalBatch = 64;

const std::vector<std::pair<std::string, bool Ablation::*>>& ablation_fields() {
  static const std::vector<std::pair<std::string, bool Ablation::*>> f = {
      {"drop_partial", &Ablation::drop_partial},   {"drop_accumulated", &Ablation::drop_accumulated},
      {"drop_adv", &Ablation::drop_adv},           {"drop_rec", &Ablation::drop_rec},
      {"plain_l2", &Ablation::plain_l2},           {"drop_obconn", &Ablation::drop_obconn},
  };
  return f;
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
  }
  // Batch norm needs two samples; a trailing singleton joins the previous batch.
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void Ablation::validate() const {
  if (drop_partial && drop_accumulated) {
    throw DataError("drop_partial and drop_accumulated together leave the generator no input");
  }
  if (drop_adv && drop_rec) throw DataError("drop_adv and drop_rec together leave no loss");
}

bool Ablation::any() const { return !names().empty(); }

void Ablation::set(const std::string& name) {
  for (const auto& [n, field] : ablation_fields()) {
    if (n == name) {
      this->*field = true;
      return;
    }
  }
  std::string known;
  for (const auto& n : all_names()) known += (known.empty() ? "" : ", ") + n;
  throw DataError("unknown ablation '" + name + "' (known: " + known + ")");
}

std::vector<std::string> Ablation::names() const {
  std::vector<std::string> out;
  for (const auto& [n, field] : ablation_fields())
    if (this->*field) out.push_back(n);
  return out;
}

const std::vector<std::string>& Ablation::all_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : ablation_fields()) v.push_back(f.first);
    return v;
  }();
  return names;
}

nlohmann::json Ablation::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [n, field] : ablation_fields()) j[n] = this->*field;
  return j;
}

Ablation Ablation::from_json(const nlohmann::json& j) {
  Ablation a;
  if (j.is_array()) {
    for (const auto& n : j) a.set(n.get<std::string>());
  } else {
    for (const auto& [n, field] : ablation_fields()) a.*field = j.value(n, false);
    for (const auto& item : j.items()) {
      if (item.value().is_boolean() && item.value().get<bool>()) a.set(item.key());
    }
  }
  a.validate();
  return a;
}

void apply_input_ablation(Tensor& x, const ChannelSchema& schema, const Ablation& ablation) {
  if (!ablation.drop_partial && !ablation.drop_accumulated) return;
  if (x.rank() != 4 || x.dim(1) != schema.input_channels()) {
    throw ShapeError("input ablation expects [N," + std::to_string(schema.input_channels()) +
                     ",H,W], got " + shape_str(x.shape()));
  }
  const std::size_t plane = x.dim(2) * x.dim(3), cx = x.dim(1), cp = schema.partial_channels();
  const std::size_t lo = ablation.drop_partial ? 0 : cp;
  const std::size_t hi = ablation.drop_partial ? cp : cx;
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    float* base = x.ptr() + n * cx * plane;
    std::fill(base + lo * plane, base + hi * plane, 0.0f);
  }
}

GeneratorSpec effective_generator_spec(GeneratorSpec spec, const Ablation& ablation) {
  if (ablation.drop_obconn) spec.observation_connections = false;
  return spec;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw DataError("batch_size must be positive");
  if (!(adam.lr > 0)) throw DataError("learning rate must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw DataError("Adam betas must lie in [0,1)");
  }
  if (!(adam.eps > 0)) throw DataError("Adam eps must be positive");
  if (validate_every == 0 || checkpoint_every == 0) {
    throw DataError("validate_every and checkpoint_every must be positive");
  }
  if (!(threshold > 0)) throw DataError("existence threshold must be positive");
  weights.validate();
  pyramid.validate();
  ablation.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"lambda_rec", weights.rec},
          {"lambda_adv", weights.adv},
          {"pyramid_resolution", pyramid.resolution},
          {"ablation", ablation.to_json()},
          {"non_saturating", non_saturating},
          {"seed", seed},
          {"validate_every", validate_every},
          {"checkpoint_every", checkpoint_every},
          {"threshold", threshold}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.weights.rec = j.value("lambda_rec", c.weights.rec);
    c.weights.adv = j.value("lambda_adv", c.weights.adv);
    c.pyramid.resolution = j.value("pyramid_resolution", c.pyramid.resolution);
    if (j.contains("ablation")) c.ablation = Ablation::from_json(j.at("ablation"));
    c.non_saturating = j.value("non_saturating", c.non_saturating);
    c.seed = j.value("seed", c.seed);
    c.validate_every = j.value("validate_every", c.validate_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.threshold = j.value("threshold", c.threshold);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open train config " + path);
  try {
    return from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

const char* const kLogHeader = "epoch,L_D,L_G,L_rec,L_adv,val_mse";

std::string format_log_row(const EpochLog& r) {
  return std::to_string(r.epoch) + "," + fmt(r.loss_d) + "," + fmt(r.loss_g) + "," +
         fmt(r.loss_rec) + "," + fmt(r.loss_adv) + "," + (r.val_mse ? fmt(*r.val_mse) : "");
}

namespace {

nlohmann::json log_to_json(const EpochLog& r) {
  nlohmann::json j = {{"epoch", r.epoch},       {"L_D", r.loss_d},     {"L_G", r.loss_g},
                      {"L_rec", r.loss_rec},    {"L_adv", r.loss_adv}};
  if (r.val_mse) j["val_mse"] = *r.val_mse;
  return j;
}

EpochLog log_from_json(const nlohmann::json& j) {
  EpochLog r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.loss_d = j.at("L_D").get<double>();
  r.loss_g = j.at("L_G").get<double>();
  r.loss_rec = j.at("L_rec").get<double>();
  r.loss_adv = j.at("L_adv").get<double>();
  if (j.contains("val_mse")) r.val_mse = j.at("val_mse").get<double>();
  return r;
}

}  // namespace

Trainer::Trainer(const Dataset& data, const GeneratorSpec& gen_spec,
                 const DiscriminatorSpec& disc_spec, TrainConfig cfg)
    : data_(data),
      gen_spec_(effective_generator_spec(gen_spec, cfg.ablation)),
      disc_spec_(disc_spec),
      cfg_(std::move(cfg)) {
  cfg_.validate();
  gen_spec_.validate(*data_.schema);
  disc_spec_.validate();
  if (disc_spec_.input_channels != data_.schema->truth_channels() || disc_spec_.grid != data_.grid) {
    throw ShapeError("discriminator spec does not match the dataset schema/grid");
  }
  if (gen_spec_.grid != data_.grid || cfg_.pyramid.resolution != data_.grid) {
    throw ShapeError("generator grid / pyramid resolution " + std::to_string(gen_spec_.grid) + "/" +
                     std::to_string(cfg_.pyramid.resolution) + " do not match dataset grid " +
                     std::to_string(data_.grid));
  }
  gen_ = build_generator(gen_spec_, *data_.schema, rnd::derive_seed(cfg_.seed, 1));
  disc_ = build_discriminator(disc_spec_, rnd::derive_seed(cfg_.seed, 2));
  train_indices_ = data_.frame_indices(Split::train);
  if (cfg_.epochs > 0 && train_indices_.empty()) throw DataError("dataset has no training frames");
}

nlohmann::json Trainer::meta() const {
  nlohmann::json m;
  m["epoch"] = epoch_;
  m["generator_spec"] = gen_spec_.to_json();
  m["discriminator_spec"] = disc_spec_.to_json();
  m["train_config"] = cfg_.to_json();
  m["schema"] = data_.schema->to_json();
  m["best_epoch"] = best_epoch_;
  if (best_val_mse_) m["best_val_mse"] = *best_val_mse_;
  m["history"] = nlohmann::json::array();
  for (const auto& r : history_) m["history"].push_back(log_to_json(r));
  return m;
}

void Trainer::save(const std::string& path) const {
  save_checkpoint(path, {{"generator", &gen_}, {"discriminator", &disc_}}, meta());
}

void Trainer::restore(const std::string& path, const std::string& best_path) {
  Checkpoint ck = load_checkpoint(path);
  auto take = [&](const char* name, ParamStore& into) {
    auto it = ck.stores.find(name);
    if (it == ck.stores.end()) throw DataError(path + ": no " + name + " in checkpoint");
    require_same_layout(into, it->second, name);
    into = std::move(it->second);
  };
  try {
    if (GeneratorSpec::from_json(ck.meta.at("generator_spec")) != gen_spec_) {
      throw ShapeError(path + ": generator spec differs from the configured one");
    }
    take("generator", gen_);
    take("discriminator", disc_);
    epoch_ = ck.meta.at("epoch").get<std::size_t>();
    history_.clear();
    validation_.clear();
    for (const auto& r : ck.meta.at("history")) history_.push_back(log_from_json(r));
    best_epoch_ = ck.meta.value("best_epoch", std::size_t{0});
    best_val_mse_.reset();
    if (ck.meta.contains("best_val_mse")) best_val_mse_ = ck.meta.at("best_val_mse").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint metadata: " + e.what());
  }
  best_.reset();
  if (best_val_mse_ && !best_path.empty() && std::filesystem::exists(best_path)) {
    Checkpoint b = load_checkpoint(best_path);
    auto it = b.stores.find("generator");
    if (it == b.stores.end()) throw DataError(best_path + ": no generator in checkpoint");
    require_same_layout(gen_, it->second, "best generator");
    best_ = std::move(it->second);
  }
}

void Trainer::step(const std::vector<std::size_t>& batch, std::size_t batch_index, EpochLog& acc) {
  const auto& schema = *data_.schema;
  const Ablation& ab = cfg_.ablation;
  Tensor x = data_.stack_inputs(batch);
  apply_input_ablation(x, schema, ab);
  Tensor y = data_.stack_truth(batch);

  ad::Tape<float> tape;
  auto gp = ad::bind_params(tape, gen_);
  auto yhat = generator_forward(tape, gp, gen_, gen_spec_, schema, x, kernel::Mode::train);
  auto yt = tape.constant(std::move(y));
  auto rec = ab.plain_l2 ? plain_l2_loss(yhat, yt) : rec_loss(yhat, yt, cfg_.pyramid);
  const double lambda_rec = ab.drop_rec ? 0.0 : cfg_.weights.rec;

  std::optional<ad::Var<float>> lg, ld, adv;
  if (ab.drop_adv) {
    lg = ad::affine(rec, lambda_rec, 0.0);
  } else {
    auto dp = ad::bind_params(tape, disc_);
    std::mt19937_64 rng(rnd::derive_seed(cfg_.seed, epoch_ + 1, batch_index + 1));
    auto d_real = discriminator_forward(dp, disc_spec_, yt, kernel::Mode::train, rng);
    auto d_fake = discriminator_forward(dp, disc_spec_, yhat, kernel::Mode::train, rng);
    adv = adv_loss_G(d_fake, cfg_.non_saturating);
    lg = total_G(rec, *adv, LossWeights{lambda_rec, cfg_.weights.adv});
    ld = loss_D(d_real, d_fake);
  }

  const double lg_v = lg->value().storage()[0];
  const double ld_v = ld ? ld->value().storage()[0] : 0.0;
  const double rec_v = rec.value().storage()[0];
  const double adv_v = adv ? adv->value().storage()[0] : 0.0;
  if (!std::isfinite(lg_v) || !std::isfinite(ld_v) || !std::isfinite(rec_v) ||
      !std::isfinite(adv_v)) {
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                       std::to_string(batch_index + 1) + " (L_G=" + fmt(lg_v) +
                       ", L_D=" + fmt(ld_v) + ")");
  }

  tape.backward(*lg, [this](const std::string& n) { return gen_.has_param(n); });
  GradMap<float> g_grads = tape.param_grads();
  if (ld) {
    tape.backward(*ld, [this](const std::string& n) { return disc_.has_param(n); });
    adam_step(disc_, tape.param_grads(), cfg_.adam);
  }
  adam_step(gen_, g_grads, cfg_.adam);

  acc.loss_g += lg_v;
  acc.loss_d += ld_v;
  acc.loss_rec += rec_v;
  acc.loss_adv += adv_v;
}

EpochLog Trainer::run_epoch() {
  std::vector<std::size_t> order = train_indices_;
  std::mt19937_64 rng(rnd::derive_seed(cfg_.seed, epoch_ + 1, kShuffleStream));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rnd::uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1)]);
  }
  const auto batches = chunk(order, cfg_.batch_size);
  EpochLog log;
  for (std::size_t b = 0; b < batches.size(); ++b) step(batches[b], b, log);
  const double n = static_cast<double>(std::max<std::size_t>(1, batches.size()));
  log.loss_d /= n;
  log.loss_g /= n;
  log.loss_rec /= n;
  log.loss_adv /= n;
  ++epoch_;
  log.epoch = epoch_;
  return log;
}

EvalReport Trainer::validate_now() {
  return evaluate_generator(gen_, gen_spec_, cfg_.ablation, data_,
                            data_.frame_indices(Split::validation), cfg_.threshold);
}

TrainReport Trainer::run(const std::string& out_dir,
                         const std::function<void(const EpochLog&)>& on_epoch) {
  namespace fs = std::filesystem;
  std::string last_path, best_path, log_path;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    last_path = (fs::path(out_dir) / "last.ckpt").string();
    best_path = (fs::path(out_dir) / "best.ckpt").string();
    log_path = (fs::path(out_dir) / "log.csv").string();
    // The log mirrors the history, so a resumed run rewrites rows past the checkpoint.
    std::ofstream log(log_path, std::ios::trunc);
    log << kLogHeader << "\n";
    for (const auto& r : history_) log << format_log_row(r) << "\n";
  }
  const bool has_val = data_.count(Split::validation) > 0;

  while (epoch_ < cfg_.epochs) {
    EpochLog row = run_epoch();
    if (has_val && (epoch_ % cfg_.validate_every == 0 || epoch_ == cfg_.epochs)) {
      EvalReport rep = validate_now();
      row.val_mse = rep.mse;
      validation_.emplace_back(epoch_, rep);
      if (!best_val_mse_ || rep.mse < *best_val_mse_) {
        best_val_mse_ = rep.mse;
        best_epoch_ = epoch_;
        best_ = gen_;
        if (!best_path.empty()) {
          save_checkpoint(best_path, {{"generator", &gen_}}, meta());
        }
      }
    }
    history_.push_back(row);
    if (!log_path.empty()) {
      std::ofstream log(log_path, std::ios::app);
      log << format_log_row(row) << "\n";
    }
    if (!last_path.empty() && (epoch_ % cfg_.checkpoint_every == 0 || epoch_ == cfg_.epochs)) {
      save(last_path);
    }
    if (on_epoch) on_epoch(row);
  }
  if (!last_path.empty() && !fs::exists(last_path)) save(last_path);
  if (!best_path.empty() && !best_) save_checkpoint(best_path, {{"generator", &gen_}}, meta());

  TrainReport rep;
  rep.history = history_;
  rep.validation = validation_;
  rep.best_epoch = best_epoch_;
  rep.best_val_mse = best_val_mse_.value_or(0.0);
  rep.final_checkpoint = last_path;
  rep.best_checkpoint = best_path;
  return rep;
}

Model load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  auto it = ck.stores.find("generator");
  if (it == ck.stores.end()) throw DataError(path + ": no generator in checkpoint");
  Model m;
  try {
    m.spec = GeneratorSpec::from_json(ck.meta.at("generator_spec"));
    m.schema = std::make_shared<const ChannelSchema>(ChannelSchema::from_json(ck.meta.at("schema")));
    if (ck.meta.contains("train_config") && ck.meta.at("train_config").contains("ablation")) {
      m.ablation = Ablation::from_json(ck.meta.at("train_config").at("ablation"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint metadata: " + e.what());
  }
  ParamStore expected = build_generator(m.spec, *m.schema, 0);
  require_same_layout(expected, it->second, "generator");
  m.generator = std::move(it->second);
  return m;
}

Tensor predict(Model& model, const Dataset& data, const std::vector<std::size_t>& indices) {
  if (!(*model.schema == *data.schema) || model.spec.grid != data.grid) {
    throw ShapeError("checkpoint schema/grid does not match the dataset");
  }
  Tensor out({indices.size(), data.schema->truth_channels(), data.grid, data.grid});
  const std::size_t frame = out.size() / std::max<std::size_t>(1, indices.size());
  for (std::size_t i = 0; i < indices.size(); i += kEvalBatch) {
    std::vector<std::size_t> b(indices.begin() + static_cast<std::ptrdiff_t>(i),
                               indices.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(indices.size(), i + kEvalBatch)));
    Tensor x = data.stack_inputs(b);
    apply_input_ablation(x, *data.schema, model.ablation);
    Tensor y = generate(model.generator, model.spec, *data.schema, x, kernel::Mode::eval);
    std::copy(y.storage().begin(), y.storage().end(), out.storage().begin() + i * frame);
  }
  return out;
}

EvalReport evaluate_generator(ParamStore& generator, const GeneratorSpec& spec,
                              const Ablation& ablation, const Dataset& data,
                              const std::vector<std::size_t>& indices, double threshold) {
  Evaluator ev(threshold);
  for (std::size_t i = 0; i < indices.size(); i += kEvalBatch) {
    std::vector<std::size_t> b(indices.begin() + static_cast<std::ptrdiff_t>(i),
                               indices.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(indices.size(), i + kEvalBatch)));
    Tensor x = data.stack_inputs(b);
    apply_input_ablation(x, *data.schema, ablation);
    ev.add(generate(generator, spec, *data.schema, x, kernel::Mode::eval), data.stack_truth(b));
  }
  return ev.report();
}

EvalReport evaluate_model(Model& model, const Dataset& data, Split split, double threshold) {
  if (!(*model.schema == *data.schema) || model.spec.grid != data.grid) {
    throw ShapeError("checkpoint schema/grid does not match the dataset");
  }
  return evaluate_generator(model.generator, model.spec, model.ablation, data,
                            data.frame_indices(split), threshold);
}

Tensor baseline_prediction(Baseline kind, const Tensor& input, const ChannelSchema& schema) {
  return kind == Baseline::partial ? partial_prior(input, schema)
                                   : observation_prior(input, schema);
}

EvalReport evaluate_baseline(Baseline kind, const Dataset& data,
                             const std::vector<std::size_t>& indices, double threshold) {
  Evaluator ev(threshold);
  for (std::size_t i = 0; i < indices.size(); i += 256) {
    std::vector<std::size_t> b(indices.begin() + static_cast<std::ptrdiff_t>(i),
                               indices.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(indices.size(), i + 256)));
    ev.add(baseline_prediction(kind, data.stack_inputs(b), *data.schema), data.stack_truth(b));
  }
  return ev.report();
}

EvalReport evaluate_baseline(Baseline kind, const Dataset& data, Split split, double threshold) {
  return evaluate_baseline(kind, data, data.frame_indices(split), threshold);
}

}  // namespace defog
