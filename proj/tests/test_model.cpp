#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "coda/model.hpp"
#include "coda/rng.hpp"

using coda::Rng;
using coda::Shape;
using coda::Tensor;
using namespace coda::model;
namespace ad = coda::ad;

TEST_CASE("param_count formulas") {
  SECTION("4-layer MLP 2-64-64-64-2") {
    ModelConfig cfg;
    cfg.arch = Arch::mlp;
    cfg.state_shape = {2};
    cfg.hidden = 64;
    cfg.depth = 4;
    REQUIRE(param_count(cfg) == 8642);
  }
  SECTION("depth-2 MLP 1-4-1") {
    ModelConfig cfg;
    cfg.arch = Arch::mlp;
    cfg.state_shape = {1};
    cfg.hidden = 4;
    cfg.depth = 2;
    REQUIRE(param_count(cfg) == 13);
  }
  SECTION("conv stack 2-8-8-8-2 with 3x3 kernels, cross-checked against the layout") {
    ModelConfig cfg;
    cfg.arch = Arch::conv2d;
    cfg.state_shape = {2, 8, 8};
    cfg.hidden = 8;
    cfg.depth = 4;
    const std::size_t expected = (2 * 8 * 9 + 8) + 2 * (8 * 8 * 9 + 8) + (8 * 2 * 9 + 2);
    REQUIRE(param_count(cfg) == expected);

    // Layout enumeration oracle: slices must tile [0, param_count) exactly.
    const auto layout = param_layout(cfg);
    std::set<std::size_t> seen;
    for (const auto& l : layout) {
      for (std::size_t i = 0; i < coda::shape_numel(l.w_shape); ++i) seen.insert(l.w_offset + i);
      for (std::size_t i = 0; i < l.b_count; ++i) seen.insert(l.b_offset + i);
    }
    REQUIRE(seen.size() == param_count(cfg));
    REQUIRE(*seen.rbegin() == param_count(cfg) - 1);
  }
  SECTION("depth below 2 is rejected") {
    ModelConfig cfg;
    cfg.depth = 1;
    REQUIRE_THROWS_AS(param_count(cfg), coda::ConfigError);
  }
}

TEST_CASE("forward basics") {
  SECTION("all-zero parameters give the zero output") {
    ModelConfig cfg;
    cfg.state_shape = {3};
    cfg.hidden = 8;
    cfg.depth = 4;
    std::vector<double> theta(param_count(cfg), 0.0);
    const Tensor y = forward(cfg, theta, Tensor({3}, {0.4, -1.0, 2.0}));
    REQUIRE(y.shape == Shape{3});
    for (double v : y.data) REQUIRE(v == 0.0);
  }
  SECTION("hand-composed identity-activation chain: 2(2x+1)+1 = 4x+3") {
    ModelConfig cfg;
    cfg.state_shape = {1};
    cfg.hidden = 1;
    cfg.depth = 2;
    cfg.activation = Activation::identity;
    // layers: w=2, b=1 twice
    std::vector<double> theta = {2.0, 1.0, 2.0, 1.0};
    const Tensor y = forward(cfg, theta, Tensor({1}, {1.0}));
    REQUIRE_THAT(y.data[0], Catch::Matchers::WithinAbs(7.0, 1e-15));
  }
  SECTION("swish(0) = 0 passes through zero pre-activations") {
    ad::Tape tape;
    ad::Value z = tape.leaf(Tensor({1}, {0.0}));
    REQUIRE(tape.value(tape.swish(z))[0] == 0.0);
  }
  SECTION("batched forward equals per-sample forward") {
    ModelConfig cfg;
    cfg.state_shape = {2};
    cfg.hidden = 6;
    cfg.depth = 3;
    const auto p = init_params(cfg, 91);
    const Tensor x1({2}, {0.5, -0.25});
    const Tensor x2({2}, {-1.5, 2.0});
    const Tensor batch({2, 2}, {0.5, -0.25, -1.5, 2.0});
    const Tensor yb = forward(cfg, p.values, batch);
    const Tensor y1 = forward(cfg, p.values, x1);
    const Tensor y2 = forward(cfg, p.values, x2);
    REQUIRE(yb.data[0] == y1.data[0]);
    REQUIRE(yb.data[1] == y1.data[1]);
    REQUIRE(yb.data[2] == y2.data[0]);
    REQUIRE(yb.data[3] == y2.data[1]);
  }
}

TEST_CASE("init_params") {
  ModelConfig cfg;
  cfg.state_shape = {2};
  cfg.hidden = 16;
  cfg.depth = 4;
  SECTION("deterministic per seed, different across seeds") {
    const auto a = init_params(cfg, 3);
    const auto b = init_params(cfg, 3);
    const auto c = init_params(cfg, 4);
    REQUIRE(a.values == b.values);
    REQUIRE(a.values != c.values);
  }
  SECTION("weights bounded by sqrt(6/fan_in) per layer, biases zero") {
    const auto p = init_params(cfg, 5);
    for (const auto& layer : p.layout) {
      const double bound = std::sqrt(6.0 / static_cast<double>(layer.w_shape[1]));
      for (std::size_t i = 0; i < coda::shape_numel(layer.w_shape); ++i) {
        REQUIRE(std::abs(p.values[layer.w_offset + i]) <= bound);
      }
      for (std::size_t i = 0; i < layer.b_count; ++i) {
        REQUIRE(p.values[layer.b_offset + i] == 0.0);
      }
    }
  }
}

TEST_CASE("forward gradients match finite differences (both archs)") {
  Rng rng(2024);
  SECTION("mlp") {
    ModelConfig cfg;
    cfg.state_shape = {2};
    cfg.hidden = 5;
    cfg.depth = 4;
    auto p = init_params(cfg, 7);
    const std::vector<double> input = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    ad::Program loss = [&](ad::Tape& tape, ad::Value theta) {
      ad::Value x = tape.constant(Tensor({2}, input));
      ad::Value y = forward(cfg, tape, theta, x);
      return tape.dot(y, y);
    };
    auto g = ad::grad(loss, p.values);
    auto fd = ad::finite_diff_grad(loss, p.values, 1e-5);
    for (std::size_t i = 0; i < g.size(); ++i) {
      REQUIRE(std::abs(g[i] - fd[i]) <= 1e-8 + 1e-5 * std::max(std::abs(g[i]), std::abs(fd[i])));
    }
  }
  SECTION("conv2d") {
    ModelConfig cfg;
    cfg.arch = Arch::conv2d;
    cfg.state_shape = {2, 4, 4};
    cfg.hidden = 3;
    cfg.depth = 3;
    auto p = init_params(cfg, 8);
    std::vector<double> input(2 * 4 * 4);
    for (double& v : input) v = rng.uniform(-1, 1);
    ad::Program loss = [&](ad::Tape& tape, ad::Value theta) {
      ad::Value x = tape.constant(Tensor({2, 4, 4}, input));
      ad::Value y = forward(cfg, tape, theta, x);
      return tape.dot(y, y);
    };
    auto g = ad::grad(loss, p.values);
    auto fd = ad::finite_diff_grad(loss, p.values, 1e-5);
    for (std::size_t i = 0; i < g.size(); ++i) {
      REQUIRE(std::abs(g[i] - fd[i]) <= 1e-8 + 1e-5 * std::max(std::abs(g[i]), std::abs(fd[i])));
    }
  }
}

TEST_CASE("conv forward is translation-equivariant on the periodic grid") {
  ModelConfig cfg;
  cfg.arch = Arch::conv2d;
  cfg.state_shape = {2, 6, 6};
  cfg.hidden = 4;
  cfg.depth = 3;
  const auto p = init_params(cfg, 11);
  Rng rng(12);
  std::vector<double> x(2 * 6 * 6);
  for (double& v : x) v = rng.uniform(-1, 1);

  auto shift = [&](const std::vector<double>& in, std::size_t si, std::size_t sj) {
    std::vector<double> out(in.size());
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
          out[c * 36 + ((i + si) % 6) * 6 + (j + sj) % 6] = in[c * 36 + i * 6 + j];
        }
      }
    }
    return out;
  };

  const Tensor y = forward(cfg, p.values, Tensor({2, 6, 6}, x));
  const Tensor y_shifted = forward(cfg, p.values, Tensor({2, 6, 6}, shift(x, 1, 4)));
  const auto expected = shift(y.data, 1, 4);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    REQUIRE_THAT(y_shifted.data[i], Catch::Matchers::WithinAbs(expected[i], 1e-12));
  }
}

TEST_CASE("forward is locally Lipschitz in theta") {
  ModelConfig cfg;
  cfg.state_shape = {2};
  cfg.hidden = 8;
  cfg.depth = 4;
  const auto p = init_params(cfg, 21);
  Rng rng(22);
  std::vector<double> direction(p.values.size());
  double norm = 0.0;
  for (double& v : direction) {
    v = rng.uniform(-1, 1);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : direction) v /= norm;

  const Tensor x({2}, {1.3, 0.7});
  const Tensor y0 = forward(cfg, p.values, x);
  double prev_ratio = 0.0;
  for (double eps : {1e-3, 1e-4, 1e-5}) {
    auto theta = p.values;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += eps * direction[i];
    const Tensor y1 = forward(cfg, theta, x);
    double diff = 0.0;
    for (std::size_t i = 0; i < y0.numel(); ++i) diff = std::max(diff, std::abs(y1.data[i] - y0.data[i]));
    const double ratio = diff / eps;
    if (prev_ratio > 0.0) {
      REQUIRE(ratio < 4.0 * prev_ratio + 1.0);  // bounded difference quotient
    }
    prev_ratio = ratio;
  }
}
