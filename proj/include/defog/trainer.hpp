#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "defog/dataset.hpp"
#include "defog/defognet.hpp"
#include "defog/losses.hpp"
#include "defog/metrics.hpp"
#include "defog/param_store.hpp"

namespace defog {

// Component removals for ablation runs.
struct Ablation {
  bool drop_partial = false;      // zero the partial block of the input
  bool drop_accumulated = false;  // zero the accumulated block of the input
  bool drop_adv = false;          // no adversarial term, no discriminator updates
  bool drop_rec = false;          // no reconstruction term
  bool plain_l2 = false;          // level-0 MSE instead of the pyramid
  bool drop_obconn = false;       // no skips, no input identity, no prior

  void validate() const;
  bool any() const;
  // Sets the flag called `name`; throws DataError for unknown names.
  void set(const std::string& name);
  std::vector<std::string> names() const;
  static const std::vector<std::string>& all_names();

  nlohmann::json to_json() const;
  static Ablation from_json(const nlohmann::json& j);
  bool operator==(const Ablation&) const = default;
};

// Zeroes the input blocks removed by `ablation` in a batch [N, C_x, H, W].
void apply_input_ablation(Tensor& x, const ChannelSchema& schema, const Ablation& ablation);

// Generator spec with the observation connections removed under drop_obconn.
GeneratorSpec effective_generator_spec(GeneratorSpec spec, const Ablation& ablation);

struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  AdamConfig adam;
  LossWeights weights;
  PyramidConfig pyramid;
  Ablation ablation;
  bool non_saturating = false;
  std::uint64_t seed = 1;
  std::size_t validate_every = 10;
  std::size_t checkpoint_every = 10;
  double threshold = kDefaultExistenceThreshold;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss_d = 0;
  double loss_g = 0;
  double loss_rec = 0;
  double loss_adv = 0;
  std::optional<double> val_mse;

  bool operator==(const EpochLog&) const = default;
};

struct TrainReport {
  std::vector<EpochLog> history;
  std::vector<std::pair<std::size_t, EvalReport>> validation;
  std::size_t best_epoch = 0;  // 0: initial model
  double best_val_mse = 0;
  std::string final_checkpoint;
  std::string best_checkpoint;
};

std::string format_log_row(const EpochLog& row);
extern const char* const kLogHeader;

// Algorithm-1 training loop: per batch one generator forward, one
// discriminator update and one generator update.
class Trainer {
 public:
  Trainer(const Dataset& data, const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec,
          TrainConfig cfg);

  // Continues from a checkpoint written by save(); `best_path` restores the
  // selected model when present.
  void restore(const std::string& path, const std::string& best_path = "");
  void save(const std::string& path) const;

  // Runs one epoch over the training split and returns its mean losses.
  EpochLog run_epoch();
  // Validation MSE report of the current generator.
  EvalReport validate_now();

  // Trains until cfg.epochs. With a non-empty out_dir writes last.ckpt,
  // best.ckpt and log.csv there.
  TrainReport run(const std::string& out_dir = "",
                  const std::function<void(const EpochLog&)>& on_epoch = {});

  std::size_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  const GeneratorSpec& generator_spec() const { return gen_spec_; }
  const DiscriminatorSpec& discriminator_spec() const { return disc_spec_; }
  ParamStore& generator() { return gen_; }
  ParamStore& discriminator() { return disc_; }
  // Generator with the best validation MSE so far (the current one before any validation).
  const ParamStore& best_generator() const { return best_ ? *best_ : gen_; }
  const std::vector<EpochLog>& history() const { return history_; }

 private:
  nlohmann::json meta() const;
  void step(const std::vector<std::size_t>& batch, std::size_t batch_index, EpochLog& acc);

  const Dataset& data_;
  GeneratorSpec gen_spec_;
  DiscriminatorSpec disc_spec_;
  TrainConfig cfg_;
  ParamStore gen_;
  ParamStore disc_;
  std::optional<ParamStore> best_;
  std::size_t best_epoch_ = 0;
  std::optional<double> best_val_mse_;
  std::size_t epoch_ = 0;
  std::vector<EpochLog> history_;
  std::vector<std::pair<std::size_t, EvalReport>> validation_;
  std::vector<std::size_t> train_indices_;
};

// A trained generator with everything needed to run it on a dataset.
struct Model {
  ParamStore generator;
  GeneratorSpec spec;
  SchemaPtr schema;
  Ablation ablation;
};

// Loads the generator of a checkpoint written by the trainer.
Model load_model(const std::string& path);

// Eval-mode predictions for dataset frames, inputs ablated as in training.
Tensor predict(Model& model, const Dataset& data, const std::vector<std::size_t>& indices);

EvalReport evaluate_model(Model& model, const Dataset& data, Split split,
                          double threshold = kDefaultExistenceThreshold);
EvalReport evaluate_generator(ParamStore& generator, const GeneratorSpec& spec,
                              const Ablation& ablation, const Dataset& data,
                              const std::vector<std::size_t>& indices,
                              double threshold = kDefaultExistenceThreshold);

enum class Baseline { partial, accumulated };

// Non-learned predictors: the current view (partial) or the last-seen state
// (accumulated), both in ground-truth layout.
Tensor baseline_prediction(Baseline kind, const Tensor& input, const ChannelSchema& schema);
EvalReport evaluate_baseline(Baseline kind, const Dataset& data,
                             const std::vector<std::size_t>& indices,
                             double threshold = kDefaultExistenceThreshold);
EvalReport evaluate_baseline(Baseline kind, const Dataset& data, Split split,
                             double threshold = kDefaultExistenceThreshold);

}  // namespace defog
