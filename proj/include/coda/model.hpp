#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coda/autodiff.hpp"
#include "coda/rng.hpp"
#include "coda/tensor.hpp"

namespace coda::model {

enum class Arch { mlp, conv2d };

enum class Activation { swish, identity };

/**
 * @brief Architecture of the dynamics approximator g as a pure function
 * of a flat parameter vector.
 *
 * depth counts linear/conv layers; swish is applied after all but the
 * last. Conv layers use periodic same-padding so output shape equals
 * input shape.
 */
struct ModelConfig {
  Arch arch = Arch::mlp;
  Shape state_shape = {2};  // {d} for mlp, {c, h, w} for conv2d
  std::size_t hidden = 64;  // width (mlp) or channels (conv2d)
  std::size_t depth = 4;
  std::size_t kernel = 3;
  Activation activation = Activation::swish;

  void validate() const {
    if (depth < 2) throw ConfigError("ModelConfig: depth must be >= 2");
    if (arch == Arch::mlp && state_shape.size() != 1) {
      throw ConfigError("ModelConfig: mlp expects rank-1 state");
    }
    if (arch == Arch::conv2d && state_shape.size() != 3) {
      throw ConfigError("ModelConfig: conv2d expects [c, h, w] state");
    }
    if (arch == Arch::conv2d && kernel % 2 == 0) {
      throw ConfigError("ModelConfig: kernel must be odd");
    }
  }
};

/// Location of one layer's weight and bias inside the flat vector.
struct LayerSlice {
  std::size_t w_offset = 0;
  Shape w_shape;
  std::size_t b_offset = 0;
  std::size_t b_count = 0;
};

[[nodiscard]] inline std::vector<LayerSlice> param_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerSlice> layout;
  std::size_t off = 0;
  const std::size_t io = cfg.state_shape[0];  // state dim (mlp) or channels (conv2d)
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t in = l == 0 ? io : cfg.hidden;
    const std::size_t out = l + 1 == cfg.depth ? io : cfg.hidden;
    LayerSlice s;
    s.w_offset = off;
    if (cfg.arch == Arch::mlp) {
      s.w_shape = {out, in};
    } else {
      s.w_shape = {out, in, cfg.kernel, cfg.kernel};
    }
    off += shape_numel(s.w_shape);
    s.b_offset = off;
    s.b_count = out;
    off += out;
    layout.push_back(std::move(s));
  }
  return layout;
}

/// Exact number of scalars across all weights and biases.
[[nodiscard]] inline std::size_t param_count(const ModelConfig& cfg) {
  const auto layout = param_layout(cfg);
  const auto& last = layout.back();
  return last.b_offset + last.b_count;
}

/// Flat parameter vector paired with its layer layout.
struct FlatParams {
  std::vector<double> values;
  std::vector<LayerSlice> layout;
};

/**
 * @brief Fan-in-scaled uniform initialization, biases zero.
 *
 * Weights are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)), which keeps
 * swish pre-activations order-1 at any width.
 */
[[nodiscard]] inline FlatParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  FlatParams p;
  p.layout = param_layout(cfg);
  p.values.assign(param_count(cfg), 0.0);
  Rng rng(derive_seed(seed, {fnv1a64("model-init")}));
  for (const auto& layer : p.layout) {
    std::size_t fan_in = 0;
    if (cfg.arch == Arch::mlp) {
      fan_in = layer.w_shape[1];
    } else {
      fan_in = layer.w_shape[1] * layer.w_shape[2] * layer.w_shape[3];
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const std::size_t w_count = shape_numel(layer.w_shape);
    for (std::size_t i = 0; i < w_count; ++i) {
      p.values[layer.w_offset + i] = rng.uniform(-bound, bound);
    }
  }
  return p;
}

/// Per-tape handles to the layer views of one decoded parameter vector.
struct TapedParams {
  std::vector<ad::Value> weights;
  std::vector<ad::Value> biases;
};

/// Slice a flat parameter node into per-layer views (do this once per tape).
[[nodiscard]] inline TapedParams slice_params(const ModelConfig& cfg, ad::Tape& tape, ad::Value theta) {
  TapedParams tp;
  for (const auto& layer : param_layout(cfg)) {
    tp.weights.push_back(tape.slice(theta, layer.w_offset, layer.w_shape));
    tp.biases.push_back(tape.slice(theta, layer.b_offset, {layer.b_count}));
  }
  return tp;
}

/**
 * @brief Recorded forward pass; x may be a single state or a batch with a
 * leading batch dimension. Output shape equals input shape.
 */
[[nodiscard]] inline ad::Value forward(const ModelConfig& cfg, ad::Tape& tape, const TapedParams& params,
                                       ad::Value x) {
  ad::Value h = x;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    if (cfg.arch == Arch::mlp) {
      h = tape.linear(h, params.weights[l], params.biases[l]);
    } else {
      h = tape.conv2d_periodic(h, params.weights[l], params.biases[l]);
    }
    if (l + 1 < params.weights.size() && cfg.activation == Activation::swish) {
      h = tape.swish(h);
    }
  }
  return h;
}

[[nodiscard]] inline ad::Value forward(const ModelConfig& cfg, ad::Tape& tape, ad::Value theta,
                                       ad::Value x) {
  return forward(cfg, tape, slice_params(cfg, tape, theta), x);
}

/// Plain evaluation through a throwaway tape (keeps one numeric code path).
[[nodiscard]] inline Tensor forward(const ModelConfig& cfg, const std::vector<double>& theta,
                                    const Tensor& x) {
  if (theta.size() != param_count(cfg)) {
    throw NumericalError("forward: parameter vector has wrong length");
  }
  ad::Tape tape;
  ad::Value t = tape.constant(Tensor({theta.size()}, theta));
  ad::Value out = forward(cfg, tape, t, tape.constant(x));
  return Tensor(tape.shape(out), tape.value(out));
}

}  // namespace coda::model
