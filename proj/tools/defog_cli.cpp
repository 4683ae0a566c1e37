// defog: dataset generation, training, evaluation and rendering.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "defog/dataset.hpp"
#include "defog/errors.hpp"
#include "defog/fogsim.hpp"
#include "defog/render.hpp"
#include "defog/trainer.hpp"

namespace fs = std::filesystem;
using namespace defog;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

unsigned env_threads() {
  const char* v = std::getenv("DEFOG_THREADS");
  if (!v || !*v) return 1;
  try {
    return static_cast<unsigned>(std::max(1, std::stoi(v)));
  } catch (const std::exception&) {
    throw DataError(std::string("DEFOG_THREADS must be a positive integer, got '") + v + "'");
  }
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path);
  os << content;
}

// Network file: {"generator": {...}, "discriminator": {...}}; channel counts
// and grid come from the dataset, other fields default.
std::pair<GeneratorSpec, DiscriminatorSpec> network_specs(const std::string& path,
                                                          const Dataset& data,
                                                          std::size_t base_filters) {
  auto gs = GeneratorSpec::for_schema(*data.schema, base_filters, data.grid);
  auto ds = DiscriminatorSpec::for_schema(*data.schema, base_filters, data.grid);
  if (!path.empty()) {
    const auto j = read_json(path);
    if (j.contains("generator")) {
      auto merged = gs.to_json();
      merged.merge_patch(j.at("generator"));
      gs = GeneratorSpec::from_json(merged);
    }
    if (j.contains("discriminator")) {
      auto merged = ds.to_json();
      merged.merge_patch(j.at("discriminator"));
      ds = DiscriminatorSpec::from_json(merged);
    }
  }
  return {gs, ds};
}

struct GenDataArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> episodes;
};

int cmd_gen_data(const GenDataArgs& a) {
  SimConfig cfg = a.config.empty() ? SimConfig::desk_default() : SimConfig::load(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.episodes) cfg.episodes = *a.episodes;
  cfg.validate();
  Dataset ds = generate_dataset(cfg, env_threads());
  write_dataset(ds, a.out);
  std::cout << "wrote " << a.out << ": " << ds.frames.size() << " frames from "
            << ds.episodes.size() << " episodes (train " << ds.count(Split::train)
            << ", validation " << ds.count(Split::validation) << ", test "
            << ds.count(Split::test) << ")\n\n";
  std::vector<std::size_t> all(ds.frames.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::cout << format_stats(dataset_stats(ds, all));
  return 0;
}

struct TrainArgs {
  std::string data, config, net, out;
  std::vector<std::string> ablate;
  bool resume = false;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::size_t base_filters = 16;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  Dataset ds = read_dataset(a.data);
  TrainConfig tc = a.config.empty() ? TrainConfig{} : TrainConfig::load(a.config);
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.seed) tc.seed = *a.seed;
  for (const auto& f : a.ablate) tc.ablation.set(f);
  tc.validate();
  auto [gs, dsp] = network_specs(a.net, ds, a.base_filters);

  Trainer trainer(ds, gs, dsp, tc);
  const auto last = (fs::path(a.out) / "last.ckpt").string();
  const auto best = (fs::path(a.out) / "best.ckpt").string();
  if (a.resume) {
    if (!fs::exists(last)) throw DataError("--resume: no checkpoint at " + last);
    trainer.restore(last, best);
    std::cout << "resuming after epoch " << trainer.epoch() << "\n";
  }
  if (!a.quiet) std::cout << kLogHeader << "\n";
  auto rep = trainer.run(a.out, [&](const EpochLog& row) {
    if (!a.quiet) std::cout << format_log_row(row) << std::endl;
  });
  std::cout << "checkpoints: " << rep.final_checkpoint << ", " << rep.best_checkpoint
            << " (best epoch " << rep.best_epoch << ")\n";
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, json, split = "test";
  bool baselines = false;
  double threshold = kDefaultExistenceThreshold;
};

int cmd_eval(const EvalArgs& a) {
  Dataset ds = read_dataset(a.data);
  const Split split = parse_split(a.split);
  std::vector<NamedReport> reports;
  if (!a.checkpoint.empty()) {
    Model m = load_model(a.checkpoint);
    reports.emplace_back("DefogGAN", evaluate_model(m, ds, split, a.threshold));
  }
  if (a.baselines) {
    reports.emplace_back("partial", evaluate_baseline(Baseline::partial, ds, split, a.threshold));
    reports.emplace_back("accumulated",
                         evaluate_baseline(Baseline::accumulated, ds, split, a.threshold));
  }
  if (reports.empty()) throw CLI::ValidationError("eval", "give --checkpoint and/or --baselines");
  std::cout << "split " << split_name(split) << ", " << reports.front().second.frames
            << " frames\n"
            << report_table(reports);
  if (!a.json.empty()) {
    auto j = reports_to_json(reports);
    j["split"] = split_name(split);
    write_file(a.json, j.dump(2) + "\n");
  }
  return 0;
}

struct PredictArgs {
  std::string data, checkpoint, out, mode = "ascii";
  std::size_t frame = 0;
  std::size_t scale = 4;
  double threshold = kDefaultExistenceThreshold;
};

int cmd_predict(const PredictArgs& a) {
  Dataset ds = read_dataset(a.data);
  if (a.frame >= ds.frames.size()) {
    throw DataError("frame " + std::to_string(a.frame) + " out of range; valid frames are 0.." +
                    std::to_string(ds.frames.size() == 0 ? 0 : ds.frames.size() - 1) +
                    (ds.frames.empty() ? " (dataset is empty)" : ""));
  }
  const auto& f = ds.frames[a.frame];
  std::vector<Panel> panels = {{"x-tilde", f.accumulated}, {"x-bar", f.partial}};
  if (!a.checkpoint.empty()) {
    Model m = load_model(a.checkpoint);
    Tensor y = predict(m, ds, {a.frame});
    panels.emplace_back("y-hat", GridState(ds.schema, StateKind::predicted,
                                           y.reshaped({y.dim(1), y.dim(2), y.dim(3)})));
  }
  panels.emplace_back("y", f.truth);

  RenderSpec spec;
  spec.mode = a.mode == "pgm" ? RenderMode::pgm : RenderMode::ascii;
  spec.scale = a.scale;
  spec.threshold = a.threshold;
  if (spec.mode == RenderMode::ascii) {
    const auto text = render_ascii(panels, spec);
    if (a.out.empty()) {
      std::cout << text;
    } else {
      write_file(a.out, text);
    }
  } else {
    if (a.out.empty()) throw CLI::ValidationError("--out", "pgm mode needs an output path");
    write_file(a.out, render_pgm(panels, spec));
    std::cout << "wrote " << a.out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fog-of-war state prediction: data generation, training, evaluation, rendering"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Simulate episodes and write a FOGD1 dataset");
  g->add_option("--config", gen.config, "Simulation config JSON (default: built-in desk config)")
      ->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output dataset path")->required();
  g->add_option("--seed", gen.seed, "Override the config seed");
  g->add_option("--episodes", gen.episodes, "Override the episode count");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train generator and discriminator");
  t->add_option("--data", tr.data, "Dataset file")->required()->check(CLI::ExistingFile);
  t->add_option("--config", tr.config, "Train config JSON")->check(CLI::ExistingFile);
  t->add_option("--net", tr.net, "Network spec JSON")->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Output directory (last.ckpt, best.ckpt, log.csv)")->required();
  t->add_option("--ablate", tr.ablate, "Remove a component (repeatable)")
      ->check(CLI::IsMember(Ablation::all_names()));
  t->add_flag("--resume", tr.resume, "Continue from OUT/last.ckpt");
  t->add_option("--epochs", tr.epochs, "Override the epoch count");
  t->add_option("--seed", tr.seed, "Override the seed");
  t->add_option("--base-filters", tr.base_filters, "Base filter count when --net does not set it")
      ->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "Do not print per-epoch losses");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint and/or the baselines");
  e->add_option("--data", ev.data, "Dataset file")->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint, "Trainer checkpoint")->check(CLI::ExistingFile);
  e->add_flag("--baselines", ev.baselines, "Add partial and accumulated baseline rows");
  e->add_option("--split", ev.split, "train, validation or test")->capture_default_str();
  e->add_option("--json", ev.json, "Also write the reports as JSON");
  e->add_option("--threshold", ev.threshold, "Existence threshold")->capture_default_str();

  PredictArgs pr;
  auto add_predict = [&](const char* name, const char* help, bool need_ckpt) {
    auto* p = app.add_subcommand(name, help);
    p->add_option("--data", pr.data, "Dataset file")->required()->check(CLI::ExistingFile);
    auto* ck = p->add_option("--checkpoint", pr.checkpoint, "Trainer checkpoint")
                   ->check(CLI::ExistingFile);
    if (need_ckpt) ck->required();
    p->add_option("--frame", pr.frame, "Frame index")->capture_default_str();
    p->add_option("--out", pr.out, "Output file (ascii defaults to stdout)");
    p->add_option("--mode", pr.mode, "ascii or pgm")
        ->check(CLI::IsMember({"ascii", "pgm"}))
        ->capture_default_str();
    p->add_option("--scale", pr.scale, "Pixels per cell (pgm)")->capture_default_str();
    p->add_option("--threshold", pr.threshold, "Existence threshold")->capture_default_str();
    return p;
  };
  auto* p = add_predict("predict", "Render x-tilde, x-bar, y-hat and y for one frame", true);
  auto* r = add_predict("render", "Like predict; the y-hat panel needs --checkpoint", false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*p || *r) return cmd_predict(pr);
  } catch (const CLI::ValidationError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const ShapeError& err) {
    std::cerr << "shape error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
