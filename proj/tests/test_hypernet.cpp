#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "coda/checkpoint_io.hpp"
#include "coda/dataset_io.hpp"
#include "coda/hypernet.hpp"
#include "coda/rng.hpp"

using coda::Rng;
using coda::Tensor;
using namespace coda::hypernet;
namespace ad = coda::ad;
namespace io = coda::io;

TEST_CASE("decode") {
  SECTION("zero context returns theta_c exactly") {
    const std::vector<double> theta_c = {1.0, -2.0, 0.5};
    const std::vector<double> w = {0.3, 0.1, -0.2, 0.9, 0.0, 1.0};
    const auto out = decode(theta_c, w, {0.0, 0.0});
    REQUIRE(out == theta_c);
  }
  SECTION("zero decoder returns theta_c for any context") {
    const std::vector<double> theta_c = {1.0, 2.0};
    const std::vector<double> w(4, 0.0);
    REQUIRE(decode(theta_c, w, {3.0, -7.0}) == theta_c);
  }
  SECTION("hand matrix-vector product") {
    const auto out = decode({1.0, 2.0}, {1.0, 0.0, 0.0, 2.0}, {3.0, 4.0});
    REQUIRE(out == std::vector<double>{4.0, 10.0});
  }
  SECTION("dimension mismatch is rejected") {
    REQUIRE_THROWS_AS(decode({1.0, 2.0}, {1.0, 0.0}, {3.0, 4.0}), coda::NumericalError);
  }
}

TEST_CASE("decode is affine in the context") {
  Rng rng(31);
  const std::size_t d_theta = 20, d_xi = 3;
  std::vector<double> theta_c(d_theta), w(d_theta * d_xi);
  for (double& v : theta_c) v = rng.uniform(-1, 1);
  for (double& v : w) v = rng.uniform(-1, 1);
  std::vector<double> xi1(d_xi), xi2(d_xi);
  for (double& v : xi1) v = rng.uniform(-1, 1);
  for (double& v : xi2) v = rng.uniform(-1, 1);
  const double a = 1.3, b = -0.8;

  std::vector<double> combo(d_xi);
  for (std::size_t i = 0; i < d_xi; ++i) combo[i] = a * xi1[i] + b * xi2[i];
  const auto lhs = decode(theta_c, w, combo);
  const auto d1 = decode(theta_c, w, xi1);
  const auto d2 = decode(theta_c, w, xi2);
  for (std::size_t i = 0; i < d_theta; ++i) {
    const double rhs = theta_c[i] + a * (d1[i] - theta_c[i]) + b * (d2[i] - theta_c[i]);
    REQUIRE_THAT(lhs[i], Catch::Matchers::WithinAbs(rhs, 1e-12));
  }
}

TEST_CASE("decoded offsets live in the column space of W") {
  Rng rng(77);
  const std::size_t d_theta = 40, d_xi = 2;
  std::vector<double> theta_c(d_theta), w(d_theta * d_xi);
  for (double& v : theta_c) v = rng.uniform(-1, 1);
  for (double& v : w) v = rng.uniform(-1, 1);

  // Orthonormalize W's columns (Gram-Schmidt) and check the decoded offset
  // has no residual outside the span.
  std::vector<std::vector<double>> basis;
  for (std::size_t j = 0; j < d_xi; ++j) {
    std::vector<double> col(d_theta);
    for (std::size_t i = 0; i < d_theta; ++i) col[i] = w[i * d_xi + j];
    for (const auto& q : basis) {
      double proj = 0.0;
      for (std::size_t i = 0; i < d_theta; ++i) proj += q[i] * col[i];
      for (std::size_t i = 0; i < d_theta; ++i) col[i] -= proj * q[i];
    }
    double norm = 0.0;
    for (double v : col) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : col) v /= norm;
    basis.push_back(col);
  }

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> xi(d_xi);
    for (double& v : xi) v = rng.uniform(-2, 2);
    const auto decoded = decode(theta_c, w, xi);
    std::vector<double> offset(d_theta);
    for (std::size_t i = 0; i < d_theta; ++i) offset[i] = decoded[i] - theta_c[i];
    for (const auto& q : basis) {
      double proj = 0.0;
      for (std::size_t i = 0; i < d_theta; ++i) proj += q[i] * offset[i];
      for (std::size_t i = 0; i < d_theta; ++i) offset[i] -= proj * q[i];
    }
    double residual = 0.0;
    for (double v : offset) residual = std::max(residual, std::abs(v));
    REQUIRE(residual < 1e-10);
  }
}

TEST_CASE("penalty") {
  SECTION("zero weights give zero penalty") {
    PenaltyConfig cfg{PenaltyVariant::l2, 0.0, 0.0};
    REQUIRE(penalty({1.0, 2.0, 3.0, 4.0}, 2, {5.0, 6.0}, cfg) == 0.0);
  }
  SECTION("l1 variant: identity rows sum to 2") {
    PenaltyConfig cfg{PenaltyVariant::l1, 0.0, 1.0};
    REQUIRE_THAT(penalty({1.0, 0.0, 0.0, 1.0}, 2, {0.0, 0.0}, cfg),
                 Catch::Matchers::WithinAbs(2.0, 1e-15));
  }
  SECTION("l2 variant hand computation") {
    PenaltyConfig cfg{PenaltyVariant::l2, 1.0, 1.0};
    REQUIRE_THAT(penalty({3.0, 4.0}, 1, {1.0}, cfg), Catch::Matchers::WithinAbs(26.0, 1e-15));
  }
  SECTION("negative weights are rejected") {
    PenaltyConfig cfg{PenaltyVariant::l2, -1.0, 0.0};
    REQUIRE_THROWS_AS(penalty({1.0}, 1, {1.0}, cfg), coda::ConfigError);
  }
  SECTION("penalty is non-negative and vanishes only at zero arguments") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      PenaltyConfig cfg{trial % 2 == 0 ? PenaltyVariant::l1 : PenaltyVariant::l2, 0.5, 0.25};
      std::vector<double> w(6), xi(2);
      for (double& v : w) v = rng.uniform(-2, 2);
      for (double& v : xi) v = rng.uniform(-2, 2);
      const double p = penalty(w, 2, xi, cfg);
      REQUIRE(p >= 0.0);
      double mass = 0.0;
      for (double v : w) mass += std::abs(v);
      for (double v : xi) mass += std::abs(v);
      if (p == 0.0) REQUIRE(mass == 0.0);
    }
  }
  SECTION("taped penalty matches the plain value and differentiates") {
    Rng rng(6);
    std::vector<double> w(8), xi(2);
    for (double& v : w) v = rng.uniform(-1, 1);
    for (double& v : xi) v = rng.uniform(-1, 1);
    for (auto variant : {PenaltyVariant::l1, PenaltyVariant::l2}) {
      PenaltyConfig cfg{variant, 0.3, 0.7};
      ad::Tape tape;
      ad::Value wv = tape.leaf(Tensor({4, 2}, w));
      ad::Value xv = tape.leaf(Tensor({2}, xi));
      ad::Value p = penalty(tape, wv, xv, cfg);
      REQUIRE_THAT(tape.scalar_value(p), Catch::Matchers::WithinAbs(penalty(w, 2, xi, cfg), 1e-14));
      tape.backward(p);  // must not throw
    }
  }
}

TEST_CASE("locality upper bounds hold on 1000 random draws") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d_theta = 5 + rng.uniform_index(30);
    const std::size_t d_xi = 1 + rng.uniform_index(4);
    std::vector<double> w(d_theta * d_xi), xi(d_xi);
    for (double& v : w) v = rng.uniform(-2, 2);
    for (double& v : xi) v = rng.uniform(-2, 2);
    const auto b = locality_bounds_check(w, d_xi, xi);
    REQUIRE(b.lhs_l2 <= b.rhs_l2 * (1.0 + 1e-9) + 1e-12);
    REQUIRE(b.lhs_l1 <= b.rhs_l1 * (1.0 + 1e-9) + 1e-12);
  }
}

TEST_CASE("locality bound edge cases") {
  SECTION("zero decoder: all four sides vanish") {
    const auto b = locality_bounds_check(std::vector<double>(10, 0.0), 2, {1.0, -1.0});
    REQUIRE(b.lhs_l2 == 0.0);
    REQUIRE(b.rhs_l2 == 0.0);
    REQUIRE(b.lhs_l1 == 0.0);
    REQUIRE(b.rhs_l1 == 0.0);
  }
  SECTION("rank-1 decoder with aligned context is tight in l2") {
    Rng rng(123);
    const std::size_t d_theta = 20, d_xi = 2;
    std::vector<double> u(d_theta), v(d_xi);
    for (double& x : u) x = rng.uniform(-1, 1);
    for (double& x : v) x = rng.uniform(-1, 1);
    std::vector<double> w(d_theta * d_xi);
    for (std::size_t i = 0; i < d_theta; ++i) {
      for (std::size_t j = 0; j < d_xi; ++j) w[i * d_xi + j] = u[i] * v[j];
    }
    const auto b = locality_bounds_check(w, d_xi, v);  // xi proportional to v
    REQUIRE(std::abs(b.lhs_l2 - b.rhs_l2) <= 1e-10 * std::max(1.0, b.rhs_l2));
  }
}

TEST_CASE("dataset container round-trips bitwise") {
  auto spec = coda::systems::SystemSpec::make(coda::systems::SystemKind::lv);
  auto envs = coda::systems::environment_grid(spec, coda::systems::Split::train);
  std::vector<coda::systems::EnvironmentDataset> sets;
  for (std::size_t e = 0; e < 3; ++e) {
    sets.push_back(coda::systems::generate_dataset(spec, envs[e], 2, 55, coda::systems::Split::train));
  }
  const std::string bytes = io::encode_datasets(spec, sets, coda::systems::Split::train, 55);
  REQUIRE(bytes.substr(0, 4) == "CODA");
  REQUIRE(bytes[4] == 0x01);

  const auto file = io::decode_datasets(bytes);
  REQUIRE(file.sets.size() == 3);
  REQUIRE(file.seed == 55);
  for (std::size_t e = 0; e < 3; ++e) {
    REQUIRE(file.sets[e].env.id == sets[e].env.id);
    REQUIRE(file.sets[e].env.params == sets[e].env.params);
    REQUIRE(file.sets[e].trajectories.size() == sets[e].trajectories.size());
    for (std::size_t t = 0; t < sets[e].trajectories.size(); ++t) {
      REQUIRE(file.sets[e].trajectories[t].states.data == sets[e].trajectories[t].states.data);
    }
  }
  // Re-encoding is byte-identical.
  REQUIRE(io::encode_datasets(file.spec, file.sets, file.split, file.seed) == bytes);
}

TEST_CASE("checkpoint container round-trips bitwise") {
  Rng rng(321);
  io::Checkpoint ck;
  ck.system = coda::systems::SystemKind::lv;
  ck.model.state_shape = {2};
  ck.model.hidden = 4;
  ck.model.depth = 2;
  ck.penalty = PenaltyConfig{PenaltyVariant::l1, 1e-4, 1e-6};
  ck.hyper.d_xi = 2;
  ck.hyper.theta_c.resize(coda::model::param_count(ck.model));
  for (double& v : ck.hyper.theta_c) v = rng.uniform(-1, 1);
  ck.hyper.w.resize(ck.hyper.theta_c.size() * 2);
  for (double& v : ck.hyper.w) v = rng.uniform(-1, 1);
  ck.hyper.contexts = {{"e0", {0.1, -0.2}}, {"e1", {0.3, 0.4}}};
  ck.envs = {{"e0", {0.5, 0.5}, "train", 1e-4, 100}, {"e1", {0.75, 0.5}, "train", 2e-4, 100}};

  const std::string bytes = io::encode_checkpoint(ck);
  const auto back = io::decode_checkpoint(bytes);
  REQUIRE(back.hyper.theta_c == ck.hyper.theta_c);
  REQUIRE(back.hyper.w == ck.hyper.w);
  REQUIRE(back.hyper.contexts == ck.hyper.contexts);
  REQUIRE(back.envs.size() == 2);
  REQUIRE(back.penalty.lambda_xi == ck.penalty.lambda_xi);
  REQUIRE(io::encode_checkpoint(back) == bytes);
}

TEST_CASE("format errors") {
  REQUIRE_THROWS_AS(io::decode("BAD!"), coda::FormatError);
  std::string bytes = "CODA";
  bytes.push_back(0x02);  // wrong version
  bytes += std::string(4, '\0');
  REQUIRE_THROWS_AS(io::decode(bytes), coda::FormatError);
}
