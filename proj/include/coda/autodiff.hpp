#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "coda/errors.hpp"
#include "coda/tensor.hpp"

namespace coda::ad {

class Tape;

/// Handle to one tensor-valued node on a tape.
struct Value {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  scale,
  axpy,
  swish,
  slice,
  linear,
  matvec,
  conv2d,
  sum,
  concat,
  dot,
  mse,
  row_norm_sum,
  row_select,
};

/**
 * @brief Reverse-mode tape over tensor-granularity operations.
 *
 * Values are computed eagerly as nodes are recorded; backward() walks the
 * record once in reverse. The tape is rebuilt per evaluation, so identical
 * inputs give bit-identical outputs and gradients. Every op checks its
 * output for NaN/Inf and throws NumericalError with the op name.
 */
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // ---- node creation ----

  Value leaf(Tensor t) { return push(Op::leaf, std::move(t.shape), std::move(t.data), true); }

  Value constant(Tensor t) { return push(Op::constant, std::move(t.shape), std::move(t.data), false); }

  Value constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  Value add(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape, "add: shape mismatch");
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] + nb.value[i];
    return push(Op::add, na.shape, std::move(out), grad_any(a, b), a, b);
  }

  Value sub(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape, "sub: shape mismatch");
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] - nb.value[i];
    return push(Op::sub, na.shape, std::move(out), grad_any(a, b), a, b);
  }

  Value mul(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape, "mul: shape mismatch");
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] * nb.value[i];
    return push(Op::mul, na.shape, std::move(out), grad_any(a, b), a, b);
  }

  Value scale(Value a, double c) {
    const Node& na = node(a);
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * na.value[i];
    Value v = push(Op::scale, na.shape, std::move(out), node(a).needs_grad, a);
    nodes_[static_cast<std::size_t>(v.id)].coeff = c;
    return v;
  }

  /// a + c * b.
  Value axpy(Value a, double c, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape, "axpy: shape mismatch");
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] + c * nb.value[i];
    Value v = push(Op::axpy, na.shape, std::move(out), grad_any(a, b), a, b);
    nodes_[static_cast<std::size_t>(v.id)].coeff = c;
    return v;
  }

  /// swish(x) = x * sigmoid(x).
  Value swish(Value a) {
    const Node& na = node(a);
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] * sigmoid(na.value[i]);
    return push(Op::swish, na.shape, std::move(out), na.needs_grad, a);
  }

  /// Contiguous view of `count = numel(out_shape)` entries starting at `offset`.
  Value slice(Value a, std::size_t offset, Shape out_shape) {
    const Node& na = node(a);
    const std::size_t count = shape_numel(out_shape);
    require(offset + count <= na.value.size(), "slice: out of range");
    std::vector<double> out(na.value.begin() + static_cast<std::ptrdiff_t>(offset),
                            na.value.begin() + static_cast<std::ptrdiff_t>(offset + count));
    Value v = push(Op::slice, std::move(out_shape), std::move(out), na.needs_grad, a);
    nodes_[static_cast<std::size_t>(v.id)].offset = offset;
    return v;
  }

  /**
   * @brief Dense layer y = x W^T + b with x of shape [batch, in] or [in],
   * W of shape [out, in], b of shape [out].
   */
  Value linear(Value x, Value w, Value b) {
    const Node& nx = node(x);
    const Node& nw = node(w);
    const Node& nb = node(b);
    require(nw.shape.size() == 2, "linear: weight must be rank 2");
    const std::size_t out_dim = nw.shape[0];
    const std::size_t in_dim = nw.shape[1];
    require(nb.shape.size() == 1 && nb.shape[0] == out_dim, "linear: bias shape mismatch");
    const bool batched = nx.shape.size() == 2;
    require(batched || nx.shape.size() == 1, "linear: input must be rank 1 or 2");
    const std::size_t batch = batched ? nx.shape[0] : 1;
    require((batched ? nx.shape[1] : nx.shape[0]) == in_dim, "linear: input dim mismatch");

    std::vector<double> out(batch * out_dim);
    const double* xp = nx.value.data();
    const double* wp = nw.value.data();
    const double* bp = nb.value.data();
    for (std::size_t i = 0; i < batch; ++i) {
      const double* xi = xp + i * in_dim;
      double* yi = out.data() + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) {
        const double* wj = wp + j * in_dim;
        double acc = bp[j];
        for (std::size_t k = 0; k < in_dim; ++k) acc += xi[k] * wj[k];
        yi[j] = acc;
      }
    }
    Shape out_shape = batched ? Shape{batch, out_dim} : Shape{out_dim};
    return push(Op::linear, std::move(out_shape), std::move(out),
                nx.needs_grad || nw.needs_grad || nb.needs_grad, x, w, b);
  }

  /// y = W v with W of shape [m, n], v of shape [n].
  Value matvec(Value w, Value v) {
    const Node& nw = node(w);
    const Node& nv = node(v);
    require(nw.shape.size() == 2 && nv.shape.size() == 1 && nw.shape[1] == nv.shape[0],
            "matvec: shape mismatch");
    const std::size_t m = nw.shape[0];
    const std::size_t n = nw.shape[1];
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = nw.value.data() + i * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += row[j] * nv.value[j];
      out[i] = acc;
    }
    return push(Op::matvec, {m}, std::move(out), grad_any(w, v), w, v);
  }

  /**
   * @brief 2-D convolution with periodic (wrap-around) padding.
   *
   * x: [batch, c_in, h, w] or [c_in, h, w]; kernel: [c_out, c_in, k, k]
   * (k odd); bias: [c_out]. Output spatial size equals input size.
   */
  Value conv2d_periodic(Value x, Value kernel, Value bias) {
    const Node& nx = node(x);
    const Node& nk = node(kernel);
    const Node& nb = node(bias);
    require(nk.shape.size() == 4 && nk.shape[2] == nk.shape[3] && nk.shape[2] % 2 == 1,
            "conv2d: kernel must be [c_out, c_in, k, k] with odd k");
    const bool batched = nx.shape.size() == 4;
    require(batched || nx.shape.size() == 3, "conv2d: input must be rank 3 or 4");
    const std::size_t batch = batched ? nx.shape[0] : 1;
    const std::size_t c_in = batched ? nx.shape[1] : nx.shape[0];
    const std::size_t h = batched ? nx.shape[2] : nx.shape[1];
    const std::size_t w = batched ? nx.shape[3] : nx.shape[2];
    const std::size_t c_out = nk.shape[0];
    const std::size_t k = nk.shape[2];
    require(nk.shape[1] == c_in, "conv2d: channel mismatch");
    require(nb.shape.size() == 1 && nb.shape[0] == c_out, "conv2d: bias mismatch");

    std::vector<double> out(batch * c_out * h * w);
    const long half = static_cast<long>(k / 2);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t co = 0; co < c_out; ++co) {
        double* yplane = out.data() + (n * c_out + co) * h * w;
        const double bias_v = nb.value[co];
        for (std::size_t i = 0; i < h * w; ++i) yplane[i] = bias_v;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double* xplane = nx.value.data() + (n * c_in + ci) * h * w;
          const double* kmat = nk.value.data() + (co * c_in + ci) * k * k;
          for (long di = -half; di <= half; ++di) {
            for (long dj = -half; dj <= half; ++dj) {
              const double kv = kmat[(di + half) * static_cast<long>(k) + (dj + half)];
              if (kv == 0.0) continue;
              for (std::size_t i = 0; i < h; ++i) {
                const std::size_t si = wrap(static_cast<long>(i) + di, h);
                const double* xrow = xplane + si * w;
                double* yrow = yplane + i * w;
                for (std::size_t j = 0; j < w; ++j) {
                  const std::size_t sj = wrap(static_cast<long>(j) + dj, w);
                  yrow[j] += kv * xrow[sj];
                }
              }
            }
          }
        }
      }
    }
    Shape out_shape = batched ? Shape{batch, c_out, h, w} : Shape{c_out, h, w};
    return push(Op::conv2d, std::move(out_shape), std::move(out),
                nx.needs_grad || nk.needs_grad || nb.needs_grad, x, kernel, bias);
  }

  Value sum(Value a) {
    const Node& na = node(a);
    double acc = 0.0;
    for (double v : na.value) acc += v;
    return push(Op::sum, {1}, {acc}, na.needs_grad, a);
  }

  /// Concatenate up to three nodes (flattened) into one rank-1 value.
  Value concat(Value a, Value b, Value c = {}) {
    const Node& na = node(a);
    const Node& nb = node(b);
    std::vector<double> out = na.value;
    out.insert(out.end(), nb.value.begin(), nb.value.end());
    bool needs = grad_any(a, b);
    if (c.valid()) {
      const Node& nc = node(c);
      out.insert(out.end(), nc.value.begin(), nc.value.end());
      needs = needs || nc.needs_grad;
    }
    const std::size_t total = out.size();
    return push(Op::concat, {total}, std::move(out), needs, a, b, c);
  }

  Value dot(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.value.size() == nb.value.size(), "dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < na.value.size(); ++i) acc += na.value[i] * nb.value[i];
    return push(Op::dot, {1}, {acc}, grad_any(a, b), a, b);
  }

  /// mean((a - b)^2) over all elements.
  Value mse(Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape, "mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < na.value.size(); ++i) {
      const double d = na.value[i] - nb.value[i];
      acc += d * d;
    }
    acc /= static_cast<double>(na.value.size());
    return push(Op::mse, {1}, {acc}, grad_any(a, b), a, b);
  }

  /// Group-lasso norm sum_i ||W_{i,:}||_2; subgradient at a zero row is 0.
  Value row_norm_sum(Value w) {
    const Node& nw = node(w);
    require(nw.shape.size() == 2, "row_norm_sum: rank-2 input required");
    const std::size_t rows = nw.shape[0];
    const std::size_t cols = nw.shape[1];
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      double sq = 0.0;
      const double* row = nw.value.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) sq += row[j] * row[j];
      acc += std::sqrt(sq);
    }
    return push(Op::row_norm_sum, {1}, {acc}, nw.needs_grad, w);
  }

  /// Per-row blend: row i of the output is row i of `a` when mask[i] else of `b`.
  Value row_select(const std::vector<std::uint8_t>& mask, Value a, Value b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    require(na.shape == nb.shape && !na.shape.empty(), "row_select: shape mismatch");
    require(mask.size() == na.shape[0], "row_select: mask length mismatch");
    const std::size_t row_len = na.value.size() / na.shape[0];
    std::vector<double> out(na.value.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const double* src = (mask[i] ? na.value.data() : nb.value.data()) + i * row_len;
      std::copy(src, src + row_len, out.data() + i * row_len);
    }
    Value v = push(Op::row_select, na.shape, std::move(out), grad_any(a, b), a, b);
    nodes_[static_cast<std::size_t>(v.id)].mask = mask;
    return v;
  }

  // ---- access ----

  [[nodiscard]] const Shape& shape(Value v) const { return node(v).shape; }
  [[nodiscard]] const std::vector<double>& value(Value v) const { return node(v).value; }
  [[nodiscard]] double scalar_value(Value v) const {
    require(node(v).value.size() == 1, "scalar_value: node is not scalar");
    return node(v).value[0];
  }

  /// Gradient buffer of a node after backward(); zeros if it never received flow.
  [[nodiscard]] std::vector<double> grad(Value v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }

  // ---- reverse pass ----

  /**
   * @brief Accumulate d(out)/d(node) for every recorded node.
   *
   * `out` must be scalar (shape [1]). May be called once per tape build.
   */
  void backward(Value out) {
    Node& root = mutable_node(out);
    require(root.value.size() == 1, "backward: output is not scalar");
    for (Node& n : nodes_) n.grad.clear();
    root.grad.assign(1, 1.0);
    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
      Node& n = nodes_[idx];
      if (n.grad.empty() || !n.needs_grad) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    double coeff = 0.0;
    std::size_t offset = 0;
    std::vector<std::uint8_t> mask;
  };

  std::vector<Node> nodes_;

  static void require(bool ok, const char* msg) {
    if (!ok) throw NumericalError(msg);
  }

  [[nodiscard]] static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  [[nodiscard]] static std::size_t wrap(long i, std::size_t n) {
    const long m = static_cast<long>(n);
    long r = i % m;
    if (r < 0) r += m;
    return static_cast<std::size_t>(r);
  }

  [[nodiscard]] const Node& node(Value v) const {
    require(v.tape == this && v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(),
            "value does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  [[nodiscard]] Node& mutable_node(Value v) {
    return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
  }

  [[nodiscard]] bool grad_any(Value a, Value b) const { return node(a).needs_grad || node(b).needs_grad; }

  Value push(Op op, Shape shape, std::vector<double> value, bool needs_grad,
             Value a = {}, Value b = {}, Value c = {}) {
    for (double v : value) {
      if (!std::isfinite(v)) {
        throw NumericalError(std::string("non-finite value produced by op '") + op_name(op) +
                             "' at node " + std::to_string(nodes_.size()));
      }
    }
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.c = c.id;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size() - 1)};
  }

  [[nodiscard]] static const char* op_name(Op op) {
    switch (op) {
      case Op::leaf: return "leaf";
      case Op::constant: return "constant";
      case Op::add: return "add";
      case Op::sub: return "sub";
      case Op::mul: return "mul";
      case Op::scale: return "scale";
      case Op::axpy: return "axpy";
      case Op::swish: return "swish";
      case Op::slice: return "slice";
      case Op::linear: return "linear";
      case Op::matvec: return "matvec";
      case Op::conv2d: return "conv2d";
      case Op::sum: return "sum";
      case Op::concat: return "concat";
      case Op::dot: return "dot";
      case Op::mse: return "mse";
      case Op::row_norm_sum: return "row_norm_sum";
      case Op::row_select: return "row_select";
    }
    return "?";
  }

  std::vector<double>& grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  [[nodiscard]] bool wants_grad(int id) const {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad;
  }

  void propagate(Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::add: {
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
        break;
      }
      case Op::sub: {
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        const auto& av = nodes_[static_cast<std::size_t>(n.a)].value;
        const auto& bv = nodes_[static_cast<std::size_t>(n.b)].value;
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
        break;
      }
      case Op::scale: {
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.coeff * g[i];
        }
        break;
      }
      case Op::axpy: {
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += n.coeff * g[i];
        }
        break;
      }
      case Op::swish: {
        const auto& av = nodes_[static_cast<std::size_t>(n.a)].value;
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = sigmoid(av[i]);
            ga[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
          }
        }
        break;
      }
      case Op::slice: {
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[n.offset + i] += g[i];
        }
        break;
      }
      case Op::linear: {
        const Node& nx = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nw = nodes_[static_cast<std::size_t>(n.b)];
        const std::size_t out_dim = nw.shape[0];
        const std::size_t in_dim = nw.shape[1];
        const std::size_t batch = n.value.size() / out_dim;
        if (wants_grad(n.a)) {
          auto& gx = grad_buf(n.a);
          for (std::size_t i = 0; i < batch; ++i) {
            const double* gi = g.data() + i * out_dim;
            double* gxi = gx.data() + i * in_dim;
            for (std::size_t j = 0; j < out_dim; ++j) {
              const double gij = gi[j];
              if (gij == 0.0) continue;
              const double* wj = nw.value.data() + j * in_dim;
              for (std::size_t k = 0; k < in_dim; ++k) gxi[k] += gij * wj[k];
            }
          }
        }
        if (wants_grad(n.b)) {
          auto& gw = grad_buf(n.b);
          for (std::size_t i = 0; i < batch; ++i) {
            const double* gi = g.data() + i * out_dim;
            const double* xi = nx.value.data() + i * in_dim;
            for (std::size_t j = 0; j < out_dim; ++j) {
              const double gij = gi[j];
              if (gij == 0.0) continue;
              double* gwj = gw.data() + j * in_dim;
              for (std::size_t k = 0; k < in_dim; ++k) gwj[k] += gij * xi[k];
            }
          }
        }
        if (wants_grad(n.c)) {
          auto& gb = grad_buf(n.c);
          for (std::size_t i = 0; i < batch; ++i) {
            const double* gi = g.data() + i * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gi[j];
          }
        }
        break;
      }
      case Op::matvec: {
        const Node& nw = nodes_[static_cast<std::size_t>(n.a)];
        const Node& nv = nodes_[static_cast<std::size_t>(n.b)];
        const std::size_t m = nw.shape[0];
        const std::size_t dim = nw.shape[1];
        if (wants_grad(n.a)) {
          auto& gw = grad_buf(n.a);
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            double* grow = gw.data() + i * dim;
            for (std::size_t j = 0; j < dim; ++j) grow[j] += gi * nv.value[j];
          }
        }
        if (wants_grad(n.b)) {
          auto& gv = grad_buf(n.b);
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double* wrow = nw.value.data() + i * dim;
            for (std::size_t j = 0; j < dim; ++j) gv[j] += gi * wrow[j];
          }
        }
        break;
      }
      case Op::conv2d: {
        backward_conv2d(n);
        break;
      }
      case Op::sum: {
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (double& v : ga) v += g[0];
        }
        break;
      }
      case Op::concat: {
        std::size_t off = 0;
        for (int input : {n.a, n.b, n.c}) {
          if (input < 0) continue;
          const std::size_t len = nodes_[static_cast<std::size_t>(input)].value.size();
          if (wants_grad(input)) {
            auto& gi = grad_buf(input);
            for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
          }
          off += len;
        }
        break;
      }
      case Op::dot: {
        const auto& av = nodes_[static_cast<std::size_t>(n.a)].value;
        const auto& bv = nodes_[static_cast<std::size_t>(n.b)].value;
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bv[i];
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * av[i];
        }
        break;
      }
      case Op::mse: {
        const auto& av = nodes_[static_cast<std::size_t>(n.a)].value;
        const auto& bv = nodes_[static_cast<std::size_t>(n.b)].value;
        const double c = 2.0 * g[0] / static_cast<double>(av.size());
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * (av[i] - bv[i]);
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= c * (av[i] - bv[i]);
        }
        break;
      }
      case Op::row_norm_sum: {
        if (wants_grad(n.a)) {
          const Node& nw = nodes_[static_cast<std::size_t>(n.a)];
          const std::size_t rows = nw.shape[0];
          const std::size_t cols = nw.shape[1];
          auto& gw = grad_buf(n.a);
          for (std::size_t i = 0; i < rows; ++i) {
            const double* row = nw.value.data() + i * cols;
            double sq = 0.0;
            for (std::size_t j = 0; j < cols; ++j) sq += row[j] * row[j];
            if (sq == 0.0) continue;  // group-lasso subgradient convention
            const double inv = g[0] / std::sqrt(sq);
            double* grow = gw.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) grow[j] += inv * row[j];
          }
        }
        break;
      }
      case Op::row_select: {
        const std::size_t row_len = n.value.size() / n.mask.size();
        if (wants_grad(n.a)) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < n.mask.size(); ++i) {
            if (!n.mask[i]) continue;
            for (std::size_t j = 0; j < row_len; ++j) ga[i * row_len + j] += g[i * row_len + j];
          }
        }
        if (wants_grad(n.b)) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < n.mask.size(); ++i) {
            if (n.mask[i]) continue;
            for (std::size_t j = 0; j < row_len; ++j) gb[i * row_len + j] += g[i * row_len + j];
          }
        }
        break;
      }
    }
  }

  void backward_conv2d(Node& n) {
    const Node& nx = nodes_[static_cast<std::size_t>(n.a)];
    const Node& nk = nodes_[static_cast<std::size_t>(n.b)];
    const bool batched = nx.shape.size() == 4;
    const std::size_t batch = batched ? nx.shape[0] : 1;
    const std::size_t c_in = batched ? nx.shape[1] : nx.shape[0];
    const std::size_t h = batched ? nx.shape[2] : nx.shape[1];
    const std::size_t w = batched ? nx.shape[3] : nx.shape[2];
    const std::size_t c_out = nk.shape[0];
    const std::size_t k = nk.shape[2];
    const long half = static_cast<long>(k / 2);
    const std::vector<double>& g = n.grad;

    if (wants_grad(n.a)) {
      auto& gx = grad_buf(n.a);
      for (std::size_t bn = 0; bn < batch; ++bn) {
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* gplane = g.data() + (bn * c_out + co) * h * w;
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            double* gxplane = gx.data() + (bn * c_in + ci) * h * w;
            const double* kmat = nk.value.data() + (co * c_in + ci) * k * k;
            for (long di = -half; di <= half; ++di) {
              for (long dj = -half; dj <= half; ++dj) {
                const double kv = kmat[(di + half) * static_cast<long>(k) + (dj + half)];
                if (kv == 0.0) continue;
                for (std::size_t i = 0; i < h; ++i) {
                  const std::size_t si = wrap(static_cast<long>(i) + di, h);
                  const double* grow = gplane + i * w;
                  double* gxrow = gxplane + si * w;
                  for (std::size_t j = 0; j < w; ++j) {
                    gxrow[wrap(static_cast<long>(j) + dj, w)] += kv * grow[j];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (wants_grad(n.b)) {
      auto& gk = grad_buf(n.b);
      for (std::size_t bn = 0; bn < batch; ++bn) {
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* gplane = g.data() + (bn * c_out + co) * h * w;
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* xplane = nx.value.data() + (bn * c_in + ci) * h * w;
            double* gkmat = gk.data() + (co * c_in + ci) * k * k;
            for (long di = -half; di <= half; ++di) {
              for (long dj = -half; dj <= half; ++dj) {
                double acc = 0.0;
                for (std::size_t i = 0; i < h; ++i) {
                  const std::size_t si = wrap(static_cast<long>(i) + di, h);
                  const double* grow = gplane + i * w;
                  const double* xrow = xplane + si * w;
                  for (std::size_t j = 0; j < w; ++j) {
                    acc += grow[j] * xrow[wrap(static_cast<long>(j) + dj, w)];
                  }
                }
                gkmat[(di + half) * static_cast<long>(k) + (dj + half)] += acc;
              }
            }
          }
        }
      }
    }
    if (wants_grad(n.c)) {
      auto& gb = grad_buf(n.c);
      for (std::size_t bn = 0; bn < batch; ++bn) {
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* gplane = g.data() + (bn * c_out + co) * h * w;
          double acc = 0.0;
          for (std::size_t i = 0; i < h * w; ++i) acc += gplane[i];
          gb[co] += acc;
        }
      }
    }
  }
};

// Free-function forms so generic code (the ODE steppers) can use the same
// vocabulary for Tensor and Value states.

[[nodiscard]] inline Value add(Value a, Value b) { return a.tape->add(a, b); }
[[nodiscard]] inline Value sub(Value a, Value b) { return a.tape->sub(a, b); }
[[nodiscard]] inline Value mul(Value a, Value b) { return a.tape->mul(a, b); }
[[nodiscard]] inline Value scale(Value a, double c) { return a.tape->scale(a, c); }
[[nodiscard]] inline Value axpy(Value a, double c, Value b) { return a.tape->axpy(a, c, b); }

/**
 * @brief A pure scalar-valued program of a flat parameter vector.
 *
 * The callable receives a fresh tape and the parameter leaf and returns the
 * scalar output node; any other inputs are bound in the closure.
 */
using Program = std::function<Value(Tape&, Value)>;

/// Scalar program value at theta.
[[nodiscard]] inline double eval_program(const Program& program, const std::vector<double>& theta) {
  Tape tape;
  Value t = tape.leaf(Tensor({theta.size()}, theta));
  Value out = program(tape, t);
  if (tape.shape(out).size() != 1 || tape.value(out).size() != 1) {
    throw NumericalError("program output is not scalar");
  }
  return tape.scalar_value(out);
}

/// Reverse-mode gradient of a scalar program with respect to theta.
[[nodiscard]] inline std::vector<double> grad(const Program& program, const std::vector<double>& theta) {
  Tape tape;
  Value t = tape.leaf(Tensor({theta.size()}, theta));
  Value out = program(tape, t);
  if (tape.value(out).size() != 1) throw NumericalError("grad: program output is not scalar");
  tape.backward(out);
  return tape.grad(t);
}

/// Any plain scalar function of a flat vector; the oracle side needs values only.
using ScalarFn = std::function<double(const std::vector<double>&)>;

/// Central-difference gradient, (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
[[nodiscard]] inline std::vector<double> finite_diff_grad(const ScalarFn& f,
                                                          const std::vector<double>& theta,
                                                          double step) {
  if (!(step > 0.0)) throw NumericalError("finite_diff_grad: step must be positive");
  std::vector<double> g(theta.size());
  std::vector<double> probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + step;
    const double up = f(probe);
    if (!std::isfinite(up)) throw NumericalError("finite_diff_grad: non-finite evaluation");
    probe[i] = theta[i] - step;
    const double down = f(probe);
    if (!std::isfinite(down)) throw NumericalError("finite_diff_grad: non-finite evaluation");
    probe[i] = theta[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

[[nodiscard]] inline std::vector<double> finite_diff_grad(const Program& program,
                                                          const std::vector<double>& theta,
                                                          double step) {
  return finite_diff_grad(
      ScalarFn([&program](const std::vector<double>& t) { return eval_program(program, t); }), theta,
      step);
}

}  // namespace coda::ad
