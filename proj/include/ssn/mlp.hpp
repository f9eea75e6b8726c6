#pragma once

// Fully connected feed-forward network with hand-written backpropagation.
// The last layer produces the latent features U that the SSN head weights.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ssn/errors.hpp"
#include "ssn/linalg.hpp"

namespace ssn {

using Rng = std::mt19937_64;

enum class Activation { ReLU, Tanh };

inline std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }
inline Activation parse_activation(const std::string& s) {
  if (s == "relu" || s == "ReLU") return Activation::ReLU;
  if (s == "tanh" || s == "Tanh") return Activation::Tanh;
  throw SpecError("unknown activation '" + s + "'");
}

struct MLPConfig {
  /// input dimension, hidden widths..., latent dimension q
  std::vector<Index> layer_sizes;
  Activation activation = Activation::ReLU;
  double dropout_rate = 0.0;
  /// One flag per layer; empty means every layer has a bias.
  std::vector<bool> use_bias;
  /// When false the latent layer is linear. When true it is activated like a
  /// hidden layer and followed by dropout, so U are penultimate-layer
  /// features of a network whose output layer is the head.
  bool activate_latent = false;

  Index num_layers() const { return static_cast<Index>(layer_sizes.size()) - 1; }
  Index input_dim() const { return layer_sizes.front(); }
  Index latent_dim() const { return layer_sizes.back(); }
  bool bias(Index layer) const {
    return use_bias.empty() || use_bias[static_cast<std::size_t>(layer)];
  }
  bool activated(Index layer) const { return layer + 1 < num_layers() || activate_latent; }

  void validate() const {
    if (layer_sizes.size() < 2) throw SpecError("MLP needs an input size and at least one layer");
    for (Index s : layer_sizes)
      if (s < 1) throw SpecError("MLP layer sizes must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw SpecError("dropout rate must be in [0, 1)");
    if (!use_bias.empty() && static_cast<Index>(use_bias.size()) != num_layers())
      throw SpecError("use_bias needs one flag per layer");
  }
};

struct DenseLayer {
  DenseMatrix W;  // out x in
  DenseVector b;  // empty when the layer has no bias
};

struct MLPParams {
  std::vector<DenseLayer> layers;
};

/// Activations kept from a forward pass for backpropagation.
struct MLPCache {
  std::vector<DenseMatrix> inputs;  // per-layer input
  std::vector<DenseMatrix> pre;     // per-layer pre-activation
  std::vector<DenseMatrix> masks;   // per-layer inverted-dropout scale, empty if none
};

/// Glorot-uniform weights, zero biases.
inline MLPParams init_mlp(const MLPConfig& config, Rng& rng) {
  config.validate();
  MLPParams params;
  for (Index l = 0; l < config.num_layers(); ++l) {
    const Index in = config.layer_sizes[static_cast<std::size_t>(l)];
    const Index out = config.layer_sizes[static_cast<std::size_t>(l + 1)];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> unif(-limit, limit);
    DenseLayer layer;
    layer.W.resize(out, in);
    for (Index i = 0; i < out; ++i)
      for (Index j = 0; j < in; ++j) layer.W(i, j) = unif(rng);
    if (config.bias(l)) layer.b = DenseVector::Zero(out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

inline void check_params(const MLPParams& params, const MLPConfig& config) {
  if (static_cast<Index>(params.layers.size()) != config.num_layers())
    throw DimensionError("MLP parameters do not match the layer count");
  for (Index l = 0; l < config.num_layers(); ++l) {
    const auto& layer = params.layers[static_cast<std::size_t>(l)];
    if (layer.W.rows() != config.layer_sizes[static_cast<std::size_t>(l + 1)] ||
        layer.W.cols() != config.layer_sizes[static_cast<std::size_t>(l)])
      throw DimensionError("MLP layer " + std::to_string(l) + " weight shape mismatch");
    if (layer.b.size() != (config.bias(l) ? layer.W.rows() : 0))
      throw DimensionError("MLP layer " + std::to_string(l) + " bias shape mismatch");
  }
}

namespace detail {

inline void activate(DenseMatrix& m, Activation a) {
  if (a == Activation::ReLU)
    m = m.cwiseMax(0.0);
  else
    m = m.array().tanh().matrix();
}

inline void activation_backward(DenseMatrix& grad, const DenseMatrix& pre, Activation a) {
  if (a == Activation::ReLU)
    grad = (pre.array() > 0.0).select(grad, 0.0);
  else
    grad.array() *= 1.0 - pre.array().tanh().square();
}

}  // namespace detail

/// Latent features U (b x q) for inputs Z (b x d). Dropout with inverted
/// scaling is applied only in train mode.
inline DenseMatrix mlp_forward(const MLPParams& params, const MLPConfig& config, const DenseMatrix& Z,
                               bool train_mode, Rng& rng, MLPCache* cache = nullptr) {
  if (Z.cols() != config.input_dim())
    throw DimensionError("mlp_forward: input has " + std::to_string(Z.cols()) + " columns, network expects " +
                         std::to_string(config.input_dim()));
  if (cache) *cache = MLPCache{};
  const bool dropout = train_mode && config.dropout_rate > 0.0;
  std::bernoulli_distribution keep(1.0 - config.dropout_rate);
  const double scale = dropout ? 1.0 / (1.0 - config.dropout_rate) : 1.0;

  DenseMatrix h = Z;
  for (Index l = 0; l < config.num_layers(); ++l) {
    const auto& layer = params.layers[static_cast<std::size_t>(l)];
    DenseMatrix pre = h * layer.W.transpose();
    if (layer.b.size() > 0) pre.rowwise() += layer.b.transpose();
    DenseMatrix out = pre;
    DenseMatrix mask;
    if (config.activated(l)) {
      detail::activate(out, config.activation);
      if (dropout) {
        mask.resize(out.rows(), out.cols());
        for (Index i = 0; i < mask.rows(); ++i)
          for (Index j = 0; j < mask.cols(); ++j) mask(i, j) = keep(rng) ? scale : 0.0;
        out.array() *= mask.array();
      }
    }
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(pre));
      cache->masks.push_back(std::move(mask));
    }
    h = std::move(out);
  }
  return h;
}

/// Parameter gradients given dLoss/dU and the cache of the matching forward
/// pass. The returned structure mirrors MLPParams.
inline MLPParams mlp_backward(const MLPParams& params, const MLPConfig& config, const MLPCache& cache,
                              const DenseMatrix& dU) {
  MLPParams grads;
  grads.layers.resize(params.layers.size());
  DenseMatrix grad = dU;
  for (Index l = config.num_layers() - 1; l >= 0; --l) {
    const auto idx = static_cast<std::size_t>(l);
    const auto& layer = params.layers[idx];
    if (config.activated(l)) {
      if (cache.masks[idx].size() > 0) grad.array() *= cache.masks[idx].array();
      detail::activation_backward(grad, cache.pre[idx], config.activation);
    }
    grads.layers[idx].W = grad.transpose() * cache.inputs[idx];
    if (layer.b.size() > 0) grads.layers[idx].b = grad.colwise().sum().transpose();
    if (l > 0) grad = grad * layer.W;
  }
  return grads;
}

}  // namespace ssn
