#include "doctest.h"

#include "defog/metrics.hpp"
#include "support.hpp"

using namespace defog;

TEST_CASE("hand case on a 2x2 grid") {
  Tensor truth({1, 1, 2, 2}, std::vector<float>{1, 0, 0, 2});
  Tensor pred({1, 1, 2, 2}, std::vector<float>{1, 0, 1, 0});
  auto r = evaluate({pred}, {truth});
  CHECK(r.confusion == Confusion{1, 1, 1, 1});
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1 == 0.5);
  CHECK(r.accuracy == 0.5);
  CHECK(r.mse == doctest::Approx(1.25));
}

TEST_CASE("binarization threshold") {
  Tensor t({4}, std::vector<float>{0.49f, 0.51f, 0.0f, 2.0f});
  CHECK(existence_binarize(t) == std::vector<std::uint8_t>{0, 1, 0, 1});
  CHECK(existence_binarize(Tensor({3})) == std::vector<std::uint8_t>{0, 0, 0});
  Tensor y({3}, std::vector<float>{0, 1, 3});
  CHECK(existence_binarize(y, 0.5) == std::vector<std::uint8_t>{0, 1, 1});
}

TEST_CASE("perfect and all-zero predictions") {
  std::mt19937_64 rng(71);
  auto y = testing::random_counts<float>({66, 32, 32}, rng, 0.002);
  auto perfect = evaluate({y}, {y});
  CHECK(perfect.mse == 0.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);

  const auto k = existence_binarize(y);
  const double existing = std::count(k.begin(), k.end(), 1);
  REQUIRE(existing > 0);
  auto zero = evaluate({Tensor(y.shape())}, {y});
  CHECK(zero.confusion.total() == 67584);
  CHECK(zero.accuracy == doctest::Approx(1.0 - existing / 67584.0));
  CHECK(zero.recall == 0.0);
  CHECK(zero.precision == 0.0);
  CHECK(zero.precision_undefined);
  CHECK_FALSE(zero.recall_undefined);
}

TEST_CASE("confusion matches brute-force enumeration and score identities hold") {
  std::mt19937_64 rng(72);
  for (int i = 0; i < 50; ++i) {
    auto y = testing::random_counts<float>({3, 4, 4}, rng, 0.3);
    auto p = testing::random_tensor<float>({3, 4, 4}, rng, 0.0, 1.0);
    auto r = evaluate({p}, {y});
    CHECK(r.confusion == testing::brute_confusion(p, y, 0.5));
    const auto& c = r.confusion;
    CHECK(c.total() == 48);
    CHECK(r.accuracy == doctest::Approx(double(c.tp + c.tn) / c.total()));
    if (c.tp + c.fp > 0) CHECK(r.precision == doctest::Approx(double(c.tp) / (c.tp + c.fp)));
    if (c.tp + c.fn > 0) CHECK(r.recall == doctest::Approx(double(c.tp) / (c.tp + c.fn)));
    if (r.precision + r.recall > 0)
      CHECK(r.f1 == doctest::Approx(2 * r.precision * r.recall / (r.precision + r.recall)));
  }
}

TEST_CASE("streamed MSE equals the kernel MSE of the stacked stream") {
  std::mt19937_64 rng(73);
  auto a = testing::random_tensor<float>({6, 2, 8, 8}, rng, 0, 2);
  auto b = testing::random_counts<float>({6, 2, 8, 8}, rng, 0.2);
  Evaluator ev;
  ev.add(Tensor({2, 2, 8, 8}, std::vector<float>(a.storage().begin(), a.storage().begin() + 256)),
         Tensor({2, 2, 8, 8}, std::vector<float>(b.storage().begin(), b.storage().begin() + 256)));
  ev.add(Tensor({4, 2, 8, 8}, std::vector<float>(a.storage().begin() + 256, a.storage().end())),
         Tensor({4, 2, 8, 8}, std::vector<float>(b.storage().begin() + 256, b.storage().end())));
  auto r = ev.report();
  CHECK(r.frames == 6);
  CHECK(testing::rel_err(r.mse, kernel::mse(a.cast<double>(), b.cast<double>())) <= 1e-7);
}

TEST_CASE("misaligned streams are rejected") {
  CHECK_THROWS(evaluate({Tensor({1, 2, 2})}, {}));
  CHECK_THROWS(evaluate({Tensor({1, 2, 2})}, {Tensor({1, 2, 3})}));
  Evaluator ev;
  ev.add(Tensor({1, 2, 2}), Tensor({1, 2, 2}));
  CHECK_THROWS(ev.add(Tensor({1, 3, 3}), Tensor({1, 3, 3})));
}

TEST_CASE("report table format and JSON round trip") {
  Tensor truth({1, 1, 2, 2}, std::vector<float>{1, 0, 0, 2});
  Tensor pred({1, 1, 2, 2}, std::vector<float>{1, 0, 1, 0});
  auto r = evaluate({pred}, {truth});
  auto single = report_table({{"model", r}});
  CHECK(single.find("MSE") != std::string::npos);
  CHECK(single.find("1.25000") != std::string::npos);
  CHECK(single.find("0.500") != std::string::npos);
  CHECK(std::count(single.begin(), single.end(), '\n') == 2);

  EvalReport small;
  small.mse = 0.00208;
  auto t = report_table({{"b", small}, {"a", r}});
  CHECK(t.find("0.00208") != std::string::npos);
  CHECK(t.find("\nb ") < t.find("\na "));

  auto back = reports_from_json(reports_to_json({{"b", small}, {"a", r}}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "b");
  CHECK(back[1].second.confusion == r.confusion);
  CHECK(back[1].second.mse == r.mse);
  CHECK(back[1].second.f1 == r.f1);
}
