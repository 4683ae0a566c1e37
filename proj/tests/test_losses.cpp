#include "doctest.h"

#include "defog/losses.hpp"
#include "support.hpp"

using namespace defog;

TEST_CASE("pyramid weights closed form") {
  CHECK(pyramid_weights(1) == std::vector<double>{1.0});
  auto w2 = pyramid_weights(2);
  REQUIRE(w2.size() == 2);
  CHECK(w2[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(w2[1] == doctest::Approx(0.2).epsilon(1e-15));
  auto w32 = pyramid_weights(32);
  REQUIRE(w32.size() == 6);
  CHECK(w32[0] == doctest::Approx(1.0 / 1.3330078125).epsilon(1e-15));
  CHECK(w32[0] == doctest::Approx(0.7501831).epsilon(1e-7));
  CHECK(w32[5] == doctest::Approx(0.0007326).epsilon(1e-4));
  for (std::size_t r = 1; r <= 256; r *= 2) {
    auto w = pyramid_weights(r);
    double sum = 0;
    for (double v : w) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  CHECK_THROWS(pyramid_weights(24));
  CHECK_THROWS(pyramid_weights(0));
}

namespace {

double rec_value(const TensorD& a, const TensorD& b, std::size_t r) {
  ad::Tape<double> tape;
  return rec_loss(tape.constant(a), tape.constant(b), PyramidConfig{r}).value()[0];
}

}  // namespace

TEST_CASE("reconstruction loss basics") {
  std::mt19937_64 rng(61);
  auto y = testing::random_tensor({2, 3, 8, 8}, rng);
  CHECK(rec_value(y, y, 8) == 0.0);
  auto a = testing::random_tensor({2, 3, 1, 1}, rng), b = testing::random_tensor({2, 3, 1, 1}, rng);
  CHECK(rec_value(a, b, 1) == doctest::Approx(kernel::mse(a, b)).epsilon(1e-14));
  CHECK_THROWS(rec_value(y, y, 16));
}

TEST_CASE("single units in different cells: hand evaluation") {
  // One channel, 32x32. Prediction at (0,0), truth at (0,1): same 2x2 block.
  TensorD pred({1, 1, 32, 32}), truth({1, 1, 32, 32});
  pred.at(0, 0, 0, 0) = 1;
  truth.at(0, 0, 0, 1) = 1;
  const auto w = pyramid_weights(32);
  CHECK(rec_value(pred, truth, 32) == doctest::Approx(w[0] * 2.0 / 1024.0).epsilon(1e-14));

  // Truth at (0,2): levels 0 and 1 differ, coarser levels agree.
  TensorD truth2({1, 1, 32, 32});
  truth2.at(0, 0, 0, 2) = 1;
  const double expected = w[0] * 2.0 / 1024.0 + w[1] * 2.0 / 256.0;
  CHECK(rec_value(pred, truth2, 32) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(testing::brute_pyramid_loss(pred, truth2, 32) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("moving a unit within a 2x2 block changes only the level-0 term") {
  std::mt19937_64 rng(62);
  auto truth = testing::random_counts<double>({1, 2, 8, 8}, rng, 0.2);
  auto a = truth, b = truth;
  a.at(0, 1, 4, 4) += 1;
  b.at(0, 1, 5, 5) += 1;
  const auto w = pyramid_weights(8);
  const double diff = rec_value(a, truth, 8) - rec_value(b, truth, 8);
  const double level0 = w[0] * (kernel::mse(a, truth) - kernel::mse(b, truth));
  CHECK(diff == doctest::Approx(level0).epsilon(1e-12));
}

TEST_CASE("reconstruction loss agrees with the pooled-MSE oracle") {
  std::mt19937_64 rng(63);
  for (int i = 0; i < 20; ++i) {
    auto a = testing::random_tensor({2, 3, 16, 16}, rng, 0, 3);
    auto b = testing::random_counts<double>({2, 3, 16, 16}, rng, 0.1);
    const double v = rec_value(a, b, 16);
    CHECK(v >= 0.0);
    CHECK(testing::rel_err(v, testing::brute_pyramid_loss(a, b, 16)) <= 1e-6);
  }
  auto a = testing::random_tensor<float>({2, 4, 32, 32}, rng, 0, 2);
  auto b = testing::random_counts<float>({2, 4, 32, 32}, rng, 0.05);
  CHECK(testing::rel_err(rec_loss_value(a, b, PyramidConfig{32}),
                         testing::brute_pyramid_loss(a, b, 32)) <= 1e-6);
}

TEST_CASE("reconstruction loss gradient matches finite differences") {
  std::mt19937_64 rng(64);
  auto truth = testing::random_counts<double>({2, 2, 8, 8}, rng, 0.2);
  auto rep = testing::fd_check(
      {testing::random_tensor({2, 2, 8, 8}, rng, 0, 2)},
      [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) {
        return rec_loss(v[0], t.constant(truth), PyramidConfig{8});
      },
      10, rng);
  CHECK(rep.max_rel <= 1e-5);
  auto rep2 = testing::fd_check(
      {testing::random_tensor({2, 2, 8, 8}, rng, 0, 2)},
      [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) {
        return plain_l2_loss(v[0], t.constant(truth));
      },
      10, rng);
  CHECK(rep2.max_rel <= 1e-5);
}

namespace {

double adv_g(double d, bool ns = false) {
  ad::Tape<double> t;
  return adv_loss_G(t.constant(TensorD({1, 1}, d)), ns).value()[0];
}

double disc(double r, double f) {
  ad::Tape<double> t;
  return loss_D(t.constant(TensorD({1, 1}, r)), t.constant(TensorD({1, 1}, f))).value()[0];
}

}  // namespace

TEST_CASE("adversarial losses") {
  CHECK(adv_g(0.5) == doctest::Approx(std::log(0.5)));
  CHECK(adv_g(1e-12) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(adv_g(0.9) < adv_g(0.1));
  CHECK(std::isfinite(adv_g(1.0)));
  CHECK(adv_g(0.5, true) == doctest::Approx(-std::log(0.5)));

  CHECK(disc(0.5, 0.5) == doctest::Approx(2 * std::log(2.0)));
  CHECK(disc(1 - 1e-9, 1e-9) < 1e-6);
  CHECK(disc(0.01, 0.99) == doctest::Approx(-2 * std::log(0.01)));
  CHECK(std::isfinite(disc(0.0, 1.0)));

  std::vector<double> fake = {0.5, 0.5}, real = {0.5, 0.5};
  CHECK(adv_loss_G_value(fake) == doctest::Approx(std::log(0.5)));
  CHECK(loss_D_value(real, fake) == doctest::Approx(2 * std::log(2.0)));
}

TEST_CASE("total generator loss") {
  CHECK(total_G_value(1.0, 0.0, LossWeights{}) == doctest::Approx(0.999));
  CHECK(total_G_value(2.0, -3.0, LossWeights{0.0, 1.0}) == -3.0);
  CHECK(total_G_value(2.0, -3.0, LossWeights{1.0, 0.0}) == 2.0);
  ad::Tape<double> t;
  auto rec = t.constant(TensorD({1}, 1.0)), adv = t.constant(TensorD({1}, 0.0));
  CHECK(total_G(rec, adv, LossWeights{}).value()[0] == doctest::Approx(0.999));
  CHECK_THROWS(LossWeights{-1.0, 0.0}.validate());
}

TEST_CASE("adversarial loss gradients match finite differences") {
  std::mt19937_64 rng(65);
  auto rep = testing::fd_check(
      {testing::random_tensor({4, 1}, rng, 0.1, 0.9), testing::random_tensor({4, 1}, rng, 0.1, 0.9)},
      [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) { return loss_D(v[0], v[1]); },
      4, rng);
  CHECK(rep.max_rel <= 1e-5);
  auto rep2 = testing::fd_check(
      {testing::random_tensor({4, 1}, rng, 0.1, 0.9)},
      [&](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) { return adv_loss_G(v[0]); }, 4,
      rng);
  CHECK(rep2.max_rel <= 1e-5);
}
