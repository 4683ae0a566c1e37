#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "defog/param_store.hpp"
#include "support.hpp"

using namespace defog;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("defog_ps_" + name)).string();
}

ParamStore sample_store() {
  std::mt19937_64 rng(31);
  ParamStore s;
  s.add_param("a.w", testing::random_tensor<float>({2, 3}, rng));
  s.add_param("a.b", testing::random_tensor<float>({3}, rng));
  s.add_buffer("a.mean", testing::random_tensor<float>({3}, rng));
  GradMap<float> g = {{"a.w", testing::random_tensor<float>({2, 3}, rng)},
                      {"a.b", testing::random_tensor<float>({3}, rng)}};
  adam_step(s, g, AdamConfig{});
  return s;
}

}  // namespace

TEST_CASE("moments mirror parameter shapes") {
  ParamStore s;
  s.add_param("w", Tensor({2, 2}));
  CHECK(s.moments("w").first.shape() == Shape({2, 2}));
  CHECK(s.moments("w").second.shape() == Shape({2, 2}));
  CHECK(s.step() == 0);
  CHECK_THROWS(s.add_param("w", Tensor({1})));
  CHECK_THROWS(s.set_step(-1));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamStore s;
  s.add_param("w", Tensor({3}, 0.7f));
  adam_step(s, {{"w", Tensor({3})}}, AdamConfig{});
  CHECK(s.param("w") == Tensor({3}, 0.7f));
  CHECK(s.step() == 1);
}

TEST_CASE("adam: first step with unit gradient moves by the learning rate") {
  ParamStoreD s;
  s.add_param("w", TensorD({1}, 1.0));
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(s, {{"w", TensorD({1}, 1.0)}}, cfg);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  CHECK(s.param("w")[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: missing gradient keys leave those parameters unchanged") {
  ParamStore s;
  s.add_param("a", Tensor({1}, 1.0f));
  s.add_param("b", Tensor({1}, 1.0f));
  adam_step(s, {{"a", Tensor({1}, 1.0f)}}, AdamConfig{});
  CHECK(s.param("a")[0] < 1.0f);
  CHECK(s.param("b")[0] == 1.0f);
  CHECK(s.moments("b").first[0] == 0.0f);
  CHECK_THROWS_AS(adam_step(s, {{"a", Tensor({2})}}, AdamConfig{}), ShapeError);
}

TEST_CASE("adam is deterministic") {
  CHECK(sample_store() == sample_store());
}

TEST_CASE("checkpoint round trip keeps parameters, moments, buffers and step") {
  const auto s = sample_store();
  const auto path = tmp_path("rt.ckpt");
  save_checkpoint(path, {{"net", &s}}, {{"epoch", 3}});
  auto ck = load_checkpoint(path);
  CHECK(ck.meta.at("epoch") == 3);
  REQUIRE(ck.stores.count("net") == 1);
  CHECK(ck.stores.at("net") == s);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects corrupt files") {
  const auto s = sample_store();
  const auto path = tmp_path("bad.ckpt");
  save_checkpoint(path, {{"net", &s}});
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << b;
  };
  write("XXXXXXXX" + bytes.substr(8));
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  write(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  write(bytes + "z");
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  CHECK_THROWS_AS(load_checkpoint(tmp_path("missing.ckpt")), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("layout mismatch is rejected") {
  auto a = sample_store();
  ParamStore b;
  b.add_param("a.w", Tensor({3, 2}));
  b.add_param("a.b", Tensor({3}));
  b.add_buffer("a.mean", Tensor({3}));
  CHECK_THROWS_AS(require_same_layout(a, b, "net"), ShapeError);
  CHECK_NOTHROW(require_same_layout(a, a, "net"));
}
