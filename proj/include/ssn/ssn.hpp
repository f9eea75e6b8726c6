#pragma once

// Semi-structured network: eta = X beta + U gamma, with U the latent
// features of an MLP on Z. In ONO mode the unstructured contribution of
// every batch is projected onto the orthogonal complement of that batch's
// structured design.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ssn/basis.hpp"
#include "ssn/errors.hpp"
#include "ssn/linalg.hpp"
#include "ssn/mlp.hpp"

namespace ssn {

enum class TrainingMode { Unconstrained, ONO };

inline std::string to_string(TrainingMode m) { return m == TrainingMode::ONO ? "ONO" : "Unconstrained"; }
inline TrainingMode parse_mode(const std::string& s) {
  if (s == "ONO" || s == "ono") return TrainingMode::ONO;
  if (s == "Unconstrained" || s == "unconstrained") return TrainingMode::Unconstrained;
  throw SpecError("unknown training mode '" + s + "'");
}

struct SSNModel {
  DesignLayout layout;
  DenseVector beta;
  MLPConfig mlp_config;
  MLPParams mlp;
  DenseVector gamma;
  /// Offset left by post-hoc orthogonalization: the unstructured
  /// contribution is U gamma - X alpha. Empty until PHO is applied.
  DenseVector alpha;
  TrainingMode mode = TrainingMode::Unconstrained;
  std::uint64_t seed = 0;
  /// Data binding used by the command-line tool.
  std::string target;
  std::vector<std::string> z_columns;

  Index p() const { return beta.size(); }
  Index q() const { return gamma.size(); }

  void validate() const {
    mlp_config.validate();
    check_params(mlp, mlp_config);
    if (gamma.size() != mlp_config.latent_dim()) throw DimensionError("gamma length != latent dimension");
    if (!layout.terms.empty() && layout.cols != beta.size())
      throw DimensionError("beta length != structured design columns");
    if (alpha.size() != 0 && alpha.size() != beta.size()) throw DimensionError("alpha length != beta length");
  }
};

/// Fresh model: Glorot-initialized MLP, beta = 0, gamma = 0.
inline SSNModel make_ssn_model(DesignLayout layout, MLPConfig mlp_config, TrainingMode mode,
                               std::uint64_t seed) {
  SSNModel m;
  Rng rng(seed);
  m.mlp = init_mlp(mlp_config, rng);
  m.beta = DenseVector::Zero(layout.cols);
  m.gamma = DenseVector::Zero(mlp_config.latent_dim());
  m.layout = std::move(layout);
  m.mlp_config = std::move(mlp_config);
  m.mode = mode;
  m.seed = seed;
  return m;
}

namespace detail {

inline void check_batch(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z) {
  if (X.cols() != model.p())
    throw DimensionError("structured batch has " + std::to_string(X.cols()) + " columns, model has " +
                         std::to_string(model.p()));
  if (X.rows() != Z.rows()) throw DimensionError("structured and unstructured batches differ in rows");
}

struct ForwardPass {
  MLPCache cache;
  DenseMatrix U;
  DenseVector unstructured;  // contribution after the optional projection
  DenseVector eta;
};

inline ForwardPass forward(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z, bool train_mode,
                           bool project, Rng& rng, bool keep_cache) {
  check_batch(model, X, Z);
  ForwardPass f;
  f.U = mlp_forward(model.mlp, model.mlp_config, Z, train_mode, rng, keep_cache ? &f.cache : nullptr);
  DenseVector raw = f.U * model.gamma;
  if (model.alpha.size() > 0) raw -= X * model.alpha;
  f.unstructured = project ? project_orthogonal(X, raw) : raw;
  f.eta = X * model.beta + f.unstructured;
  return f;
}

}  // namespace detail

/// Linear predictor of one batch. ONO models project the unstructured part
/// with the batch's own structured rows.
inline DenseVector ssn_forward(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z, bool train_mode,
                               Rng& rng) {
  return detail::forward(model, X, Z, train_mode, model.mode == TrainingMode::ONO, rng, false).eta;
}

struct SSNGradients {
  DenseVector beta;
  MLPParams mlp;
  DenseVector gamma;
};

struct LossAndGradients {
  double loss = 0.0;
  SSNGradients grads;
};

/// Loss 1/(2b) ||y - eta||^2 and its gradient. The ONO projection is a
/// constant of the batch, so gradients flow through it linearly.
inline LossAndGradients loss_and_gradients(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z,
                                           const DenseVector& y, Rng& rng, bool train_mode = true) {
  if (y.size() != X.rows()) throw DimensionError("loss_and_gradients: y length != batch rows");
  const bool ono = model.mode == TrainingMode::ONO;
  auto f = detail::forward(model, X, Z, train_mode, ono, rng, true);
  const double b = static_cast<double>(X.rows());
  const DenseVector resid = f.eta - y;
  LossAndGradients out;
  out.loss = 0.5 * resid.squaredNorm() / b;
  const DenseVector d_eta = resid / b;
  const DenseVector d_raw = ono ? project_orthogonal(X, d_eta) : d_eta;
  out.grads.beta = X.transpose() * d_eta;
  out.grads.gamma = f.U.transpose() * d_raw;
  const DenseMatrix dU = d_raw * model.gamma.transpose();
  out.grads.mlp = mlp_backward(model.mlp, model.mlp_config, f.cache, dU);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam update over a list of parameter blocks.
inline void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
                      const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (params[k].size() != grads[k].size() || m.size() != params[k].size())
      throw DimensionError("adam_step: block shape mismatch");
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      params[k][i] -= state.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.epsilon);
    }
  }
}

namespace detail {

template <typename M>
std::span<double> span_of(M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
template <typename M>
std::span<const double> cspan_of(const M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace detail

inline std::vector<std::span<double>> parameter_blocks(SSNModel& model) {
  std::vector<std::span<double>> out{detail::span_of(model.beta)};
  for (auto& layer : model.mlp.layers) {
    out.push_back(detail::span_of(layer.W));
    out.push_back(detail::span_of(layer.b));
  }
  out.push_back(detail::span_of(model.gamma));
  return out;
}

inline std::vector<std::span<const double>> gradient_blocks(const SSNGradients& g) {
  std::vector<std::span<const double>> out{detail::cspan_of(g.beta)};
  for (const auto& layer : g.mlp.layers) {
    out.push_back(detail::cspan_of(layer.W));
    out.push_back(detail::cspan_of(layer.b));
  }
  out.push_back(detail::cspan_of(g.gamma));
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

/// Latent features U on Z in eval mode.
inline DenseMatrix latent_features(const SSNModel& model, const DenseMatrix& Z) {
  Rng unused(0);
  return mlp_forward(model.mlp, model.mlp_config, Z, false, unused);
}

/// Predictions in eval mode. With `projection_active` an ONO model projects
/// every consecutive block of `batch_size` rows separately; otherwise
/// eta = X beta + U gamma (minus any PHO offset). Unconstrained models
/// ignore the flag.
inline DenseVector predict(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z,
                           bool projection_active = true, Index batch_size = 1024) {
  detail::check_batch(model, X, Z);
  if (batch_size < 1) throw PreconditionError("predict: batch size must be positive");
  const bool project = projection_active && model.mode == TrainingMode::ONO;
  const Index n = X.rows();
  const Index chunk = project ? batch_size : std::max<Index>(batch_size, 4096);
  DenseVector eta(n);
  Rng unused(0);
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    const DenseMatrix Xb = X.middleRows(start, len);
    const DenseMatrix Zb = Z.middleRows(start, len);
    eta.segment(start, len) = detail::forward(model, Xb, Zb, false, project, unused, false).eta;
  }
  return eta;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  Index batch_size = 32;
  int max_epochs = 100;
  double validation_fraction = 0.1;
  int patience = 50;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw SpecError("batch_size must be >= 1");
    if (max_epochs < 0) throw SpecError("max_epochs must be >= 0");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw SpecError("validation_fraction must be in (0, 1)");
    if (patience < 1) throw SpecError("patience must be >= 1");
    if (!(learning_rate > 0.0)) throw SpecError("learning_rate must be positive");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  SSNModel model;
  std::vector<EpochRecord> history;
  int epochs_run = 0;
  int best_epoch = 0;  // 0 when no epoch ran
};

namespace detail {

inline DenseMatrix gather_rows(const DenseMatrix& m, std::span<const Index> idx) {
  DenseMatrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

inline DenseVector gather(const DenseVector& v, std::span<const Index> idx) {
  DenseVector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
  return out;
}

}  // namespace detail

/// Mini-batch Adam on 1/(2n)||y - eta||^2 with early stopping on a held-out
/// validation split. The data are shuffled once with the seed; the last
/// `validation_fraction` of that order is the validation set. Training
/// batches are reshuffled every epoch and the final short batch is kept.
/// The returned model carries the parameters of the best validation epoch.
inline TrainResult train_ssn(SSNModel model, const DenseMatrix& X, const DenseMatrix& Z, const DenseVector& y,
                             const TrainConfig& config) {
  config.validate();
  model.validate();
  const Index n = X.rows();
  if (n == 0) throw DataError("train_ssn: empty data");
  if (Z.rows() != n || y.size() != n) throw DimensionError("train_ssn: X, Z and y differ in rows");
  if (X.cols() != model.p()) throw DimensionError("train_ssn: design columns != beta length");
  if (n < 2) throw DataError("train_ssn: need at least two observations for a validation split");
  require_finite(X, "X");
  require_finite(Z, "Z");
  require_finite(y, "y");

  TrainResult result;
  result.model = model;
  if (config.max_epochs == 0) return result;

  Rng rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Index n_val = static_cast<Index>(std::llround(config.validation_fraction * static_cast<double>(n)));
  n_val = std::clamp<Index>(n_val, 1, n - 1);
  const Index n_train = n - n_val;
  const std::span<const Index> all(order);
  const auto val_idx = all.subspan(static_cast<std::size_t>(n_train));
  const DenseMatrix X_val = detail::gather_rows(X, val_idx);
  const DenseMatrix Z_val = detail::gather_rows(Z, val_idx);
  const DenseVector y_val = detail::gather(y, val_idx);
  std::vector<Index> train_idx(order.begin(), order.begin() + n_train);

  AdamState adam;
  adam.learning_rate = config.learning_rate;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    for (Index start = 0; start < n_train; start += config.batch_size) {
      const Index len = std::min(config.batch_size, n_train - start);
      const auto idx = std::span<const Index>(train_idx).subspan(static_cast<std::size_t>(start),
                                                                 static_cast<std::size_t>(len));
      const DenseMatrix Xb = detail::gather_rows(X, idx);
      const DenseMatrix Zb = detail::gather_rows(Z, idx);
      const DenseVector yb = detail::gather(y, idx);
      const auto lg = loss_and_gradients(model, Xb, Zb, yb, rng, true);
      loss_sum += lg.loss * static_cast<double>(len);
      adam_step(adam, parameter_blocks(model), gradient_blocks(lg.grads));
    }
    const DenseVector pred = predict(model, X_val, Z_val, true, config.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    rec.val_loss = 0.5 * (y_val - pred).squaredNorm() / static_cast<double>(n_val);
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (!std::isfinite(rec.val_loss)) throw DegenerateError("train_ssn: validation loss diverged");
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace ssn
