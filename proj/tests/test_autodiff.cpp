#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "coda/autodiff.hpp"
#include "coda/rng.hpp"

using coda::Rng;
using coda::Tensor;
using namespace coda::ad;

namespace {

// Random small MLP loss used as the randomized program for the oracle
// property: theta holds [W1, b1, W2, b2, ...], loss = mean(out^2) via dot.
struct RandomMlp {
  std::vector<std::size_t> dims;
  std::vector<double> input;

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
    return n;
  }

  [[nodiscard]] Program program() const {
    return [this](Tape& tape, Value theta) {
      Value x = tape.constant(Tensor({input.size()}, input));
      std::size_t off = 0;
      for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t in = dims[l];
        const std::size_t out = dims[l + 1];
        Value w = tape.slice(theta, off, {out, in});
        off += in * out;
        Value b = tape.slice(theta, off, {out});
        off += out;
        x = tape.linear(x, w, b);
        if (l + 2 < dims.size()) x = tape.swish(x);
      }
      Value sq = tape.dot(x, x);
      return tape.scale(sq, 1.0 / static_cast<double>(dims.back()));
    };
  }
};

void check_gradients_close(const std::vector<double>& g, const std::vector<double>& fd, double rtol,
                           double atol = 1e-8) {
  REQUIRE(g.size() == fd.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double tol = atol + rtol * std::max(std::abs(g[i]), std::abs(fd[i]));
    INFO("coordinate " << i << ": ad=" << g[i] << " fd=" << fd[i]);
    REQUIRE(std::abs(g[i] - fd[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("finite_diff_grad matches known derivatives") {
  Program square = [](Tape& tape, Value theta) { return tape.dot(theta, theta); };
  auto fd = finite_diff_grad(square, {3.0}, 1e-5);
  REQUIRE(fd.size() == 1);
  REQUIRE_THAT(fd[0], Catch::Matchers::WithinAbs(6.0, 1e-8));

  auto fd_sin = finite_diff_grad(ScalarFn([](const std::vector<double>& t) { return std::sin(t[0]); }),
                                 {0.0}, 1e-5);
  REQUIRE_THAT(fd_sin[0], Catch::Matchers::WithinAbs(1.0, 1e-9));

  REQUIRE_THROWS_AS(finite_diff_grad(square, {3.0}, 0.0), coda::NumericalError);
}

TEST_CASE("grad of simple programs") {
  SECTION("theta0 squared") {
    Program square = [](Tape& tape, Value theta) { return tape.dot(theta, theta); };
    auto g = grad(square, {3.0});
    REQUIRE(g.size() == 1);
    REQUIRE_THAT(g[0], Catch::Matchers::WithinAbs(6.0, 1e-12));
  }
  SECTION("constant program has zero gradient") {
    Program constant = [](Tape& tape, Value theta) {
      (void)theta;
      return tape.constant(Tensor::scalar(5.0));
    };
    auto g = grad(constant, {1.0, 2.0, 3.0});
    REQUIRE(g == std::vector<double>{0.0, 0.0, 0.0});
  }
  SECTION("non-scalar output is rejected") {
    Program vector_out = [](Tape& tape, Value theta) { return tape.add(theta, theta); };
    REQUIRE_THROWS_AS(grad(vector_out, {1.0, 2.0}), coda::NumericalError);
  }
}

TEST_CASE("grad matches finite differences on random 4-layer MLPs") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(coda::derive_seed(977, {seed}));
    RandomMlp mlp;
    mlp.dims = {3, 6, 6, 6, 2};
    mlp.input = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<double> theta(mlp.param_count());
    for (double& v : theta) v = rng.uniform(-0.8, 0.8);

    auto g = grad(mlp.program(), theta);
    auto fd = finite_diff_grad(mlp.program(), theta, 1e-5);
    check_gradients_close(g, fd, 1e-5);
  }
}

TEST_CASE("gradient is linear in the loss") {
  Rng rng(41);
  RandomMlp mlp;
  mlp.dims = {2, 5, 5, 1};
  mlp.input = {0.3, -0.7};
  std::vector<double> theta(mlp.param_count());
  for (double& v : theta) v = rng.uniform(-1, 1);

  Program l1 = mlp.program();
  Program l2 = [&mlp](Tape& tape, Value theta_v) {
    Value base = mlp.program()(tape, theta_v);
    return tape.scale(base, 0.5);  // a distinct but related loss
  };
  const double a = 1.7, b = -2.3;
  Program combo = [&](Tape& tape, Value theta_v) {
    Value va = tape.scale(l1(tape, theta_v), a);
    Value vb = tape.scale(l2(tape, theta_v), b);
    return tape.add(va, vb);
  };
  auto g1 = grad(l1, theta);
  auto g2 = grad(l2, theta);
  auto gc = grad(combo, theta);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    REQUIRE_THAT(gc[i], Catch::Matchers::WithinAbs(a * g1[i] + b * g2[i], 1e-12));
  }
}

TEST_CASE("repeated evaluation is bit-identical") {
  Rng rng(7);
  RandomMlp mlp;
  mlp.dims = {4, 8, 8, 3};
  mlp.input = {0.1, 0.2, -0.3, 0.4};
  std::vector<double> theta(mlp.param_count());
  for (double& v : theta) v = rng.uniform(-1, 1);

  const double v1 = eval_program(mlp.program(), theta);
  const double v2 = eval_program(mlp.program(), theta);
  REQUIRE(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  auto g1 = grad(mlp.program(), theta);
  auto g2 = grad(mlp.program(), theta);
  REQUIRE(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("non-finite intermediates raise NumericalError") {
  Tape tape;
  Value big = tape.leaf(Tensor({1}, {1e308}));
  REQUIRE_THROWS_AS(tape.mul(big, big), coda::NumericalError);
}

TEST_CASE("elementwise and reduction backward rules") {
  SECTION("mul with aliased inputs doubles the gradient") {
    Tape tape;
    Value x = tape.leaf(Tensor({3}, {1.0, -2.0, 0.5}));
    Value y = tape.mul(x, x);
    Value s = tape.sum(y);
    tape.backward(s);
    auto g = tape.grad(x);
    REQUIRE_THAT(g[0], Catch::Matchers::WithinAbs(2.0, 1e-15));
    REQUIRE_THAT(g[1], Catch::Matchers::WithinAbs(-4.0, 1e-15));
    REQUIRE_THAT(g[2], Catch::Matchers::WithinAbs(1.0, 1e-15));
  }
  SECTION("mse forward and backward") {
    Tape tape;
    Value a = tape.leaf(Tensor({2}, {1.0, 3.0}));
    Value b = tape.constant(Tensor({2}, {0.0, 1.0}));
    Value m = tape.mse(a, b);
    REQUIRE_THAT(tape.scalar_value(m), Catch::Matchers::WithinAbs((1.0 + 4.0) / 2.0, 1e-15));
    tape.backward(m);
    auto g = tape.grad(a);
    REQUIRE_THAT(g[0], Catch::Matchers::WithinAbs(1.0, 1e-15));
    REQUIRE_THAT(g[1], Catch::Matchers::WithinAbs(2.0, 1e-15));
  }
  SECTION("row_select routes gradients by mask") {
    Tape tape;
    Value a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Value b = tape.leaf(Tensor({2, 2}, {10, 20, 30, 40}));
    Value y = tape.row_select({1, 0}, a, b);
    REQUIRE(tape.value(y) == std::vector<double>{1, 2, 30, 40});
    Value s = tape.sum(y);
    tape.backward(s);
    REQUIRE(tape.grad(a) == std::vector<double>{1, 1, 0, 0});
    REQUIRE(tape.grad(b) == std::vector<double>{0, 0, 1, 1});
  }
  SECTION("row_norm_sum subgradient is zero at zero rows") {
    Tape tape;
    Value w = tape.leaf(Tensor({2, 2}, {3.0, 4.0, 0.0, 0.0}));
    Value s = tape.row_norm_sum(w);
    REQUIRE_THAT(tape.scalar_value(s), Catch::Matchers::WithinAbs(5.0, 1e-15));
    tape.backward(s);
    auto g = tape.grad(w);
    REQUIRE_THAT(g[0], Catch::Matchers::WithinAbs(0.6, 1e-15));
    REQUIRE_THAT(g[1], Catch::Matchers::WithinAbs(0.8, 1e-15));
    REQUIRE(g[2] == 0.0);
    REQUIRE(g[3] == 0.0);
  }
}

TEST_CASE("conv2d periodic matches finite differences") {
  Rng rng(123);
  const std::size_t c_in = 2, c_out = 3, h = 4, w = 5, k = 3;
  const std::size_t n_kernel = c_out * c_in * k * k;
  const std::size_t n_theta = n_kernel + c_out;
  std::vector<double> theta(n_theta);
  for (double& v : theta) v = rng.uniform(-1, 1);
  std::vector<double> input(c_in * h * w);
  for (double& v : input) v = rng.uniform(-1, 1);

  Program conv_loss = [&](Tape& tape, Value th) {
    Value x = tape.constant(Tensor({c_in, h, w}, input));
    Value kernel = tape.slice(th, 0, {c_out, c_in, k, k});
    Value bias = tape.slice(th, n_kernel, {c_out});
    Value y = tape.conv2d_periodic(x, kernel, bias);
    Value sw = tape.swish(y);
    return tape.dot(sw, sw);
  };
  auto g = grad(conv_loss, theta);
  auto fd = finite_diff_grad(conv_loss, theta, 1e-5);
  check_gradients_close(g, fd, 1e-5);
}

TEST_CASE("conv2d translation shifts commute") {
  Rng rng(5);
  const std::size_t c = 2, h = 6, w = 6, k = 3, co = 2;
  std::vector<double> kernel((co * c * k * k));
  for (double& v : kernel) v = rng.uniform(-1, 1);
  std::vector<double> bias(co);
  for (double& v : bias) v = rng.uniform(-1, 1);
  std::vector<double> x(c * h * w);
  for (double& v : x) v = rng.uniform(-1, 1);

  auto shift = [&](const std::vector<double>& in, std::size_t channels, std::size_t si, std::size_t sj) {
    std::vector<double> out(in.size());
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          out[ch * h * w + ((i + si) % h) * w + (j + sj) % w] = in[ch * h * w + i * w + j];
        }
      }
    }
    return out;
  };

  auto run = [&](const std::vector<double>& in) {
    Tape tape;
    Value xv = tape.constant(Tensor({c, h, w}, in));
    Value kv = tape.constant(Tensor({co, c, k, k}, kernel));
    Value bv = tape.constant(Tensor({co}, bias));
    return tape.value(tape.conv2d_periodic(xv, kv, bv));
  };

  const auto direct = shift(run(x), co, 2, 3);
  const auto shifted = run(shift(x, c, 2, 3));
  for (std::size_t i = 0; i < direct.size(); ++i) {
    REQUIRE_THAT(direct[i], Catch::Matchers::WithinAbs(shifted[i], 1e-12));
  }
}
