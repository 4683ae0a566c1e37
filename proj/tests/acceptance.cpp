// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 6 and 7 train five desk-scale models and take several minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "defog/dataset.hpp"
#include "defog/defognet.hpp"
#include "defog/losses.hpp"
#include "defog/trainer.hpp"
#include "support.hpp"

using namespace defog;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void pyramid_weights_check() {
  const auto t0 = Clock::now();
  const auto w = pyramid_weights(32);
  double norm = 0;
  for (int i = 0; i < 6; ++i) norm += std::pow(0.25, i);
  bool ok = w.size() == 6 && norm == 1.3330078125;
  double sum = 0, worst = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    worst = std::max(worst, std::abs(w[i] - std::pow(0.25, static_cast<double>(i)) / norm));
    sum += w[i];
  }
  const double dt = seconds_since(t0);
  ok = ok && worst <= 1e-15 && std::abs(sum - 1.0) <= 1e-12 && dt < 1.0;
  report(1, ok,
         "6 levels, max |w - closed form| " + fmt("%.1e", worst) + ", |sum - 1| " +
             fmt("%.1e", std::abs(sum - 1.0)) + ", " + fmt("%.3f s", dt));
}

void sumpool_check() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> n_d(1, 4), c_d(1, 66), e_d(0, 5);
  bool exact = true, conserved = true;
  double worst_rec = 0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t g = std::size_t{1} << e_d(rng);
    const Shape shape{n_d(rng), c_d(rng), g, g};
    const auto m = testing::random_counts<double>(shape, rng, 0.2, 4);
    for (std::size_t s = 1; s <= g; s *= 2) {
      const auto p = kernel::sumpool(m, s);
      exact = exact && p == testing::naive_sumpool(m, s);
      conserved = conserved && p.sum() == m.sum();
    }
    const auto pred = testing::random_tensor<float>(shape, rng, 0.0, 2.0);
    const auto truth = testing::random_counts<float>(shape, rng, 0.1, 3);
    const double got = rec_loss_value(pred, truth, PyramidConfig{g});
    worst_rec = std::max(worst_rec, testing::rel_err(got, testing::brute_pyramid_loss(pred, truth, g)));
  }
  report(2, exact && conserved && worst_rec <= 1e-6,
         std::string("100 tensors, oracle ") + (exact ? "exact" : "MISMATCH") + ", totals " +
             (conserved ? "conserved" : "NOT conserved") + ", rec_loss max rel err " +
             fmt("%.1e", worst_rec));
}

void gradient_check() {
  const auto t0 = Clock::now();
  double worst_op = 0;
  std::string worst_name;
  for (const auto& [name, err] : testing::op_fd_errors()) {
    if (err >= worst_op) worst_op = err, worst_name = name;
  }
  const double gen = std::max(testing::generator_fd_max_rel(kernel::Mode::train),
                              testing::generator_fd_max_rel(kernel::Mode::eval));
  const double dt = seconds_since(t0);
  report(3, worst_op <= 1e-5 && gen <= 1e-5 && dt < 120,
         "ops max rel err " + fmt("%.1e", worst_op) + " (" + worst_name + "), tiny generator " +
             fmt("%.1e", gen) + ", " + fmt("%.1f s", dt));
}

void residual_identity_check() {
  auto s = std::make_shared<const ChannelSchema>(ChannelSchema::desk_default());
  auto gs = GeneratorSpec::for_schema(*s, 16);
  auto g = build_generator(gs, *s, 4);
  for (const auto& name : correction_path_params()) g.param(name).fill(0.0f);
  std::mt19937_64 rng(4);
  int equal = 0;
  for (int i = 0; i < 50; ++i) {
    auto x = testing::random_counts<float>({1, s->input_channels(), 32, 32}, rng, 0.1, 3);
    equal += generate(g, gs, *s, x, kernel::Mode::eval) == observation_prior(x, *s);
  }
  report(4, equal == 50, std::to_string(equal) + "/50 inputs give exactly the observation prior");
}

void baseline_invariants_check() {
  auto cfg = SimConfig::desk_default();
  cfg.episodes = 42;  // 24 frames each
  cfg.seed = 5;
  const auto ds = generate_dataset(cfg);
  std::vector<std::size_t> all(ds.frames.size());
  std::iota(all.begin(), all.end(), 0);
  const auto partial = evaluate_baseline(Baseline::partial, ds, all);

  std::size_t worse = 0;
  for (const auto& e : ds.episodes) {
    std::vector<std::size_t> idx(e.frame_count);
    std::iota(idx.begin(), idx.end(), e.first_frame);
    const auto p = evaluate_baseline(Baseline::partial, ds, idx);
    const auto a = evaluate_baseline(Baseline::accumulated, ds, idx);
    if (a.recall < p.recall) ++worse;
  }
  const auto acc = evaluate_baseline(Baseline::accumulated, ds, all);
  const bool ok = ds.frames.size() >= 1000 && partial.confusion.fp == 0 && worse == 0 &&
                  acc.confusion.fp > 0;
  report(5, ok,
         std::to_string(ds.frames.size()) + " frames, partial fp " +
             std::to_string(partial.confusion.fp) + " (precision " + fmt("%.3f", partial.precision) +
             "), episodes with accumulated recall < partial " + std::to_string(worse) + "/" +
             std::to_string(ds.episodes.size()) + ", accumulated fp " +
             std::to_string(acc.confusion.fp) + " (recall " + fmt("%.3f", acc.recall) + " vs " +
             fmt("%.3f", partial.recall) + ")");
}

struct RunResult {
  EvalReport test;
  std::size_t best_epoch = 0;
  double minutes = 0;
};

RunResult train_desk(const Dataset& ds, std::uint64_t seed, const Ablation& ab) {
  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 32;
  tc.validate_every = 5;
  tc.checkpoint_every = 10;
  tc.seed = seed;
  tc.ablation = ab;
  const auto gs = GeneratorSpec::for_schema(*ds.schema, 16, ds.grid);
  const auto dsp = DiscriminatorSpec::for_schema(*ds.schema, 16, ds.grid);
  const auto t0 = Clock::now();
  Trainer t(ds, gs, dsp, tc);
  auto rep = t.run();
  ParamStore best = t.best_generator();
  RunResult r;
  r.test = evaluate_generator(best, t.generator_spec(), ab, ds, ds.frame_indices(Split::test));
  r.best_epoch = rep.best_epoch;
  r.minutes = seconds_since(t0) / 60.0;
  const auto name = ab.any() ? ab.names().front() : std::string("full");
  std::printf("  run %-16s seed %llu: test MSE %.5f recall %.3f, best epoch %zu, %.1f min\n",
              name.c_str(), static_cast<unsigned long long>(seed), r.test.mse, r.test.recall,
              r.best_epoch, r.minutes);
  std::fflush(stdout);
  return r;
}

void training_checks() {
  auto cfg = SimConfig::desk_default();
  cfg.episodes = 104;
  cfg.seed = 1;
  const auto ds = generate_dataset(cfg);
  const auto acc = evaluate_baseline(Baseline::accumulated, ds, Split::test);
  const auto par = evaluate_baseline(Baseline::partial, ds, Split::test);
  std::printf("  %zu training frames; test baselines: accumulated MSE %.5f, partial recall %.3f\n",
              ds.count(Split::train), acc.mse, par.recall);

  std::vector<RunResult> full;
  int held = 0;
  double slowest = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    full.push_back(train_desk(ds, seed, {}));
    held += full.back().test.mse < acc.mse && full.back().test.recall > par.recall;
    slowest = std::max(slowest, full.back().minutes);
  }
  report(6, held == 3 && slowest <= 30,
         std::to_string(held) + "/3 seeds beat accumulated MSE and partial recall, slowest run " +
             fmt("%.1f min", slowest));

  Ablation no_rec, no_acc;
  no_rec.drop_rec = true;
  no_acc.drop_accumulated = true;
  const auto r_rec = train_desk(ds, 1, no_rec);
  const auto r_acc = train_desk(ds, 1, no_acc);
  const double base = full.front().test.mse;
  const double ratio = r_rec.test.mse / base;
  report(7, ratio >= 10.0 && r_acc.test.mse > base,
         "drop_rec / full MSE " + fmt("%.2f", ratio) + " (needs >= 10), drop_accumulated " +
             fmt("%.5f", r_acc.test.mse) + " vs full " + fmt("%.5f", base));
}

void metrics_check() {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> d(1, 6);
  int equal = 0;
  for (int k = 0; k < 50; ++k) {
    const Shape s{d(rng), d(rng), d(rng)};
    const auto pred = testing::random_tensor<float>(s, rng, 0.0, 1.5);
    const auto truth = testing::random_counts<float>(s, rng, 0.3, 2);
    equal += evaluate({pred}, {truth}).confusion == testing::brute_confusion(pred, truth, 0.5);
  }
  Tensor truth({1, 1, 2, 2}, std::vector<float>{1, 0, 0, 2});
  Tensor pred({1, 1, 2, 2}, std::vector<float>{1, 0, 1, 0});
  const auto hand = evaluate({pred}, {truth});
  const bool hand_ok = hand.confusion == Confusion{1, 1, 1, 1} && hand.mse == 1.25;
  report(8, equal == 50 && hand_ok,
         std::to_string(equal) + "/50 random pairs match enumeration, hand case " +
             (hand_ok ? "(1,1,1,1) mse 1.25" : "WRONG"));
}

void determinism_check() {
  const auto dir = fs::temp_directory_path() / "defog_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cfg = SimConfig::desk_default();
  cfg.episodes = 10;
  const auto a = generate_dataset(cfg);
  write_dataset(a, (dir / "a.fogd").string());
  write_dataset(generate_dataset(cfg), (dir / "b.fogd").string());
  const bool same_bytes = slurp((dir / "a.fogd").string()) == slurp((dir / "b.fogd").string());

  const auto back = read_dataset((dir / "a.fogd").string());
  bool round_trip = back.frames.size() == a.frames.size() && back.episodes == a.episodes;
  for (std::size_t i = 0; round_trip && i < a.frames.size(); ++i) {
    round_trip = back.frames[i].partial.tensor() == a.frames[i].partial.tensor() &&
                 back.frames[i].accumulated.tensor() == a.frames[i].accumulated.tensor() &&
                 back.frames[i].truth.tensor() == a.frames[i].truth.tensor();
  }

  auto make = [&](std::size_t epochs) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.validate_every = 1;
    tc.checkpoint_every = 1;
    return Trainer(back, GeneratorSpec::for_schema(*back.schema, 4, back.grid),
                   DiscriminatorSpec::for_schema(*back.schema, 4, back.grid), tc);
  };
  auto t1 = make(4), t2 = make(4);
  const auto r1 = t1.run(), r2 = t2.run();
  const bool same_logs = r1.history == r2.history && t1.generator() == t2.generator();

  auto first = make(2);
  first.run(dir.string());
  auto resumed = make(4);
  resumed.restore((dir / "last.ckpt").string(), (dir / "best.ckpt").string());
  const auto r3 = resumed.run();
  const bool resume_ok = r3.history == r1.history && resumed.generator() == t1.generator() &&
                         resumed.discriminator() == t1.discriminator();
  fs::remove_all(dir);

  auto yes = [](bool b) { return b ? "yes" : "NO"; };
  report(9, same_bytes && round_trip && same_logs && resume_ok,
         std::string("identical dataset bytes ") + yes(same_bytes) + ", lossless round trip " +
             yes(round_trip) + ", identical logs " + yes(same_logs) + ", bit-identical resume " +
             yes(resume_ok));
}

}  // namespace

int main() {
  try {
    pyramid_weights_check();
    sumpool_check();
    gradient_check();
    residual_identity_check();
    baseline_invariants_check();
    training_checks();
    metrics_check();
    determinism_check();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
