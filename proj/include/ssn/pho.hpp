#pragma once

// Post-hoc orthogonalization of a trained SSN.
//
// With zeta = U gamma the unstructured predictor, the structured weights
// absorb the part of zeta that lies in col(X):
//
//   alpha      = X^+ zeta                    (or (X'X + lambda K)^-1 X' zeta)
//   beta_tilde = beta + alpha
//   eta_unstr  = zeta - X alpha
//
// so that X beta_tilde + eta_unstr reproduces the original predictions.

#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssn/basis.hpp"
#include "ssn/errors.hpp"
#include "ssn/linalg.hpp"
#include "ssn/ssn.hpp"

namespace ssn {

struct PHOResult {
  DenseVector beta_tilde;
  DenseVector alpha;
  DenseVector eta_str;
  DenseVector eta_unstr;
  double ortho_residual = 0.0;
  std::optional<double> lambda_used;  // set by the penalized variant
  bool has_intercept = false;

  DenseVector prediction() const { return eta_str + eta_unstr; }
};

/// Unstructured contribution of the model in eval mode, U gamma minus any
/// earlier PHO offset.
inline DenseVector unstructured_signal(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z) {
  detail::check_batch(model, X, Z);
  DenseVector zeta = latent_features(model, Z) * model.gamma;
  if (model.alpha.size() > 0) zeta -= X * model.alpha;
  return zeta;
}

/// Model prediction without any batch projection (what PHO preserves).
inline DenseVector raw_prediction(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z) {
  return X * model.beta + unstructured_signal(model, X, Z);
}

namespace detail {

inline bool layout_has_intercept(const SSNModel& model, const DenseMatrix& X) {
  if (!model.layout.terms.empty()) return model.layout.has_intercept;
  return X.cols() > 0 && X.rows() > 0 && (X.col(0).array() == 1.0).all();
}

inline PHOResult finish(const SSNModel& model, const DenseMatrix& X, const DenseVector& zeta, DenseVector alpha) {
  PHOResult r;
  r.alpha = std::move(alpha);
  r.beta_tilde = model.beta + r.alpha;
  r.eta_str = X * r.beta_tilde;
  r.eta_unstr = zeta - X * r.alpha;
  r.ortho_residual = orthogonality_residual(X, r.eta_unstr);
  r.has_intercept = layout_has_intercept(model, X);
  return r;
}

}  // namespace detail

/// Full-data PHO: alpha = X^+ (U gamma).
inline PHOResult pho_full(const SSNModel& model, const DenseMatrix& X, const DenseMatrix& Z) {
  if (X.rows() == 0) throw PreconditionError("pho_full: no observations");
  const DenseVector zeta = unstructured_signal(model, X, Z);
  return detail::finish(model, X, zeta, least_squares_solve(X, zeta));
}

// ---------------------------------------------------------------------------
// Mini-batch PHO

struct Batch {
  DenseMatrix X;
  DenseMatrix Z;
};

/// A re-readable sequence of batches. `next()` yields batches in a fixed
/// order until exhausted; `reset()` rewinds to the first batch.
template <typename S>
concept BatchSource = requires(S s) {
  s.reset();
  { s.next() } -> std::same_as<std::optional<Batch>>;
};

/// Batches cut from in-memory matrices according to a list of sizes.
class MatrixBatches {
 public:
  MatrixBatches(const DenseMatrix& X, const DenseMatrix& Z, std::vector<Index> sizes)
      : X_(X), Z_(Z), sizes_(std::move(sizes)) {
    Index total = 0;
    for (Index s : sizes_) {
      if (s < 1) throw PreconditionError("MatrixBatches: batch sizes must be positive");
      total += s;
    }
    if (total != X.rows() || X.rows() != Z.rows()) throw DimensionError("MatrixBatches: sizes do not partition data");
  }

  static MatrixBatches uniform(const DenseMatrix& X, const DenseMatrix& Z, Index batch_size) {
    if (batch_size < 1) throw PreconditionError("MatrixBatches: batch size must be positive");
    std::vector<Index> sizes;
    for (Index start = 0; start < X.rows(); start += batch_size) sizes.push_back(std::min(batch_size, X.rows() - start));
    return MatrixBatches(X, Z, std::move(sizes));
  }

  void reset() {
    k_ = 0;
    offset_ = 0;
  }

  std::optional<Batch> next() {
    if (k_ >= sizes_.size()) return std::nullopt;
    const Index len = sizes_[k_++];
    Batch b{X_.middleRows(offset_, len), Z_.middleRows(offset_, len)};
    offset_ += len;
    return b;
  }

 private:
  const DenseMatrix& X_;
  const DenseMatrix& Z_;
  std::vector<Index> sizes_;
  std::size_t k_ = 0;
  Index offset_ = 0;
};

/// How pho_minibatch solves H alpha = s. Strict rejects a singular H;
/// MinimumNorm uses pinv(H) s, which equals X^+ zeta and so matches
/// pho_full on rank-deficient designs such as intercept + B-spline.
enum class GramSolve { Strict, MinimumNorm };

/// Exact PHO from batch summaries: H = sum X_m'X_m, s = sum X_m' zeta_m,
/// alpha = H^-1 s. Only H, s and the stacked zeta persist between batches;
/// structured rows are re-read in a second pass to form eta_unstr.
template <BatchSource Source>
PHOResult pho_minibatch(const SSNModel& model, Source& batches, GramSolve solve = GramSolve::Strict) {
  const Index p = model.p();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(p);
  std::vector<DenseVector> zetas;
  Index n = 0;
  bool intercept_seen = true;
  batches.reset();
  while (auto b = batches.next()) {
    DenseVector zeta = unstructured_signal(model, b->X, b->Z);
    H.noalias() += b->X.transpose() * b->X;
    s.noalias() += b->X.transpose() * zeta;
    if (p > 0 && b->X.rows() > 0) intercept_seen = intercept_seen && (b->X.col(0).array() == 1.0).all();
    n += b->X.rows();
    zetas.push_back(std::move(zeta));
  }
  if (n == 0) throw PreconditionError("pho_minibatch: no observations");
  const DenseVector alpha =
      solve == GramSolve::Strict ? solve_normal_equations(H, s) : DenseVector(pseudoinverse(DenseMatrix(H)) * s);

  PHOResult r;
  r.alpha = alpha;
  r.beta_tilde = model.beta + alpha;
  r.eta_str.resize(n);
  r.eta_unstr.resize(n);
  Eigen::VectorXd cross = Eigen::VectorXd::Zero(p);
  double x_sq = 0.0;
  Index offset = 0;
  std::size_t m = 0;
  batches.reset();
  while (auto b = batches.next()) {
    const Index len = b->X.rows();
    r.eta_str.segment(offset, len) = b->X * r.beta_tilde;
    r.eta_unstr.segment(offset, len) = zetas[m] - b->X * alpha;
    cross.noalias() += b->X.transpose() * r.eta_unstr.segment(offset, len);
    x_sq += b->X.squaredNorm();
    offset += len;
    ++m;
  }
  const double scale = std::sqrt(x_sq) * r.eta_unstr.norm();
  r.ortho_residual = scale == 0.0 ? 0.0 : cross.cwiseAbs().maxCoeff() / scale;
  r.has_intercept = model.layout.terms.empty() ? intercept_seen : model.layout.has_intercept;
  return r;
}

// ---------------------------------------------------------------------------
// Penalized variant

struct PenalizedFit {
  DenseVector coef;
  double lambda = 0.0;
  double gcv = 0.0;
  double edf = 0.0;  // trace of the hat matrix
};

/// Log-spaced grid of `points` values from 10^lo_exp to 10^hi_exp.
inline std::vector<double> log_grid(double lo_exp = -4.0, double hi_exp = 4.0, int points = 25) {
  std::vector<double> out;
  for (int i = 0; i < points; ++i)
    out.push_back(std::pow(10.0, points == 1 ? lo_exp : lo_exp + (hi_exp - lo_exp) * i / (points - 1)));
  return out;
}

/// Penalized least squares of v on X with lambda chosen by
/// GCV(lambda) = n RSS / (n - tr H_lambda)^2 over `grid`.
inline PenalizedFit penalized_gcv_fit(const DenseMatrix& X, const DenseMatrix& K, const DenseVector& v,
                                      const std::vector<double>& grid = log_grid()) {
  detail::require_rows(X.rows(), v.size(), "penalized_gcv_fit");
  if (grid.empty()) throw PreconditionError("penalized_gcv_fit: empty lambda grid");
  const double n = static_cast<double>(X.rows());
  const Eigen::MatrixXd XtX = X.transpose() * X;
  const Eigen::VectorXd Xtv = X.transpose() * v;
  PenalizedFit best;
  best.gcv = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    const Eigen::MatrixXd A = XtX + lambda * Eigen::MatrixXd(K);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.rows(), A.cols());
    qr.setThreshold(kSolveRelativeCutoff);
    qr.compute(A);
    if (qr.rank() < A.cols()) continue;
    const DenseVector coef = qr.solve(Xtv);
    const double edf = qr.solve(XtX).trace();
    const double rss = (v - X * coef).squaredNorm();
    const double denom = n - edf;
    if (!(denom > 0.0)) continue;
    const double gcv = n * rss / (denom * denom);
    if (gcv < best.gcv) best = PenalizedFit{coef, lambda, gcv, edf};
  }
  if (!std::isfinite(best.gcv))
    throw SingularSystemError("penalized_gcv_fit: no lambda on the grid gives a solvable system");
  return best;
}

/// Penalty weight choice for PHOGAM.
struct Lambda {
  std::optional<double> value;  // nullopt: choose by GCV
  static Lambda fixed(double v) { return {v}; }
  static Lambda automatic() { return {std::nullopt}; }
};

/// PHO with the penalized projection alpha = (X'X + lambda K)^-1 X' zeta.
/// lambda = 0 reduces to pho_full. eta_unstr is not orthogonal to X for
/// lambda > 0; ortho_residual reports by how much.
inline PHOResult phogam_adjust(const SSNModel& model, const StructuredDesign& design, const DenseMatrix& Z,
                               Lambda lambda = Lambda::automatic(),
                               const std::vector<double>& grid = log_grid()) {
  const DenseMatrix& X = design.X;
  if (X.rows() == 0) throw PreconditionError("phogam_adjust: no observations");
  if (design.K.rows() != X.cols()) throw PreconditionError("phogam_adjust: design carries no penalty matrix");
  const DenseVector zeta = unstructured_signal(model, X, Z);
  if (lambda.value && *lambda.value == 0.0) {
    auto r = detail::finish(model, X, zeta, least_squares_solve(X, zeta));
    r.lambda_used = 0.0;
    return r;
  }
  const DenseMatrix K = design.identified_penalty();
  PHOResult r;
  if (lambda.value) {
    r = detail::finish(model, X, zeta, penalized_coefficients(X, K, *lambda.value, zeta));
    r.lambda_used = *lambda.value;
  } else {
    const auto fit = penalized_gcv_fit(X, K, zeta, grid);
    r = detail::finish(model, X, zeta, fit.coef);
    r.lambda_used = fit.lambda;
  }
  r.has_intercept = design.has_intercept();
  return r;
}

/// Model with the PHO result folded in: beta becomes beta_tilde and the
/// unstructured part becomes U gamma - X alpha. Predictions are unchanged.
inline SSNModel apply_pho(SSNModel model, const PHOResult& r) {
  if (r.beta_tilde.size() != model.p()) throw DimensionError("apply_pho: result does not match model");
  if (model.alpha.size() == 0) model.alpha = DenseVector::Zero(model.p());
  model.alpha += r.alpha;
  model.beta = r.beta_tilde;
  return model;
}

// ---------------------------------------------------------------------------
// Out-of-sample contributions

struct Contributions {
  DenseVector eta_str;
  DenseVector eta_unstr;
};

/// eta_str* = X* beta_tilde, eta_unstr* = U(Z*) gamma - X* alpha (with any
/// offset already stored in the model included).
inline Contributions decompose_out_of_sample(const SSNModel& model, const PHOResult& pho, const DenseMatrix& X_star,
                                             const DenseMatrix& Z_star) {
  if (X_star.cols() != model.p() || pho.beta_tilde.size() != model.p() || pho.alpha.size() != model.p())
    throw SchemaError("decompose_out_of_sample: structured columns do not match the trained design");
  if (Z_star.cols() != model.mlp_config.input_dim())
    throw SchemaError("decompose_out_of_sample: unstructured columns do not match the network input");
  Contributions c;
  c.eta_str = X_star * pho.beta_tilde;
  c.eta_unstr = unstructured_signal(model, X_star, Z_star) - X_star * pho.alpha;
  return c;
}

// ---------------------------------------------------------------------------
// Importance measures

namespace detail {

inline double sample_variance(const DenseVector& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

inline double variance_share(const PHOResult& pho, const DenseVector& part) {
  if (!pho.has_intercept)
    throw PreconditionError("importance measures require a structured design with an intercept");
  const double total = sample_variance(pho.prediction());
  if (!(total > 0.0)) throw DegenerateError("prediction has zero variance");
  return sample_variance(part) / total;
}

}  // namespace detail

/// Var(X beta_tilde) / Var(eta).
inline double ev_structured(const PHOResult& pho) { return detail::variance_share(pho, pho.eta_str); }

/// Var(eta_unstr) / Var(eta); sums with ev_structured to one after
/// unpenalized PHO.
inline double ev_unstructured(const PHOResult& pho) { return detail::variance_share(pho, pho.eta_unstr); }

/// Gaussian log-likelihood of y under mean eta and variance sigma2.
inline double gaussian_loglik(const DenseVector& y, const DenseVector& eta, double sigma2) {
  const double n = static_cast<double>(y.size());
  return -0.5 * n * std::log(2.0 * M_PI * sigma2) - 0.5 * (y - eta).squaredNorm() / sigma2;
}

/// McFadden-type importance of term `term`: 1 - l(eta) / l(eta_-j), where
/// eta_-j zeroes the term's structured contribution without refitting and
/// the variance is the full model's residual variance.
inline double mcfadden_r2(const PHOResult& pho, const StructuredDesign& design, const DenseVector& y,
                          const std::string& term) {
  const auto& t = design.layout.term(term);
  if (y.size() != design.rows() || pho.eta_str.size() != design.rows())
    throw DimensionError("mcfadden_r2: data and decomposition differ in rows");
  const DenseVector eta = pho.prediction();
  const double sigma2 = (y - eta).squaredNorm() / static_cast<double>(y.size());
  if (!(sigma2 > 0.0)) throw DegenerateError("mcfadden_r2: zero residual variance");
  const DenseVector term_part = design.X.middleCols(t.first, t.count) * pho.beta_tilde.segment(t.first, t.count);
  const DenseVector eta_minus = eta - term_part;
  const double l_full = gaussian_loglik(y, eta, sigma2);
  const double l_minus = gaussian_loglik(y, eta_minus, sigma2);
  if (l_minus == 0.0) throw DegenerateError("mcfadden_r2: reduced model log-likelihood is zero");
  return 1.0 - l_full / l_minus;
}

struct ImportanceReport {
  double ev_structured = 0.0;
  double ev_unstructured = 0.0;
  std::map<std::string, double> r2_per_term;
};

inline ImportanceReport importance(const PHOResult& pho, const StructuredDesign& design, const DenseVector& y) {
  ImportanceReport rep;
  rep.ev_structured = ev_structured(pho);
  rep.ev_unstructured = ev_unstructured(pho);
  for (const auto& t : design.layout.terms)
    if (!t.spec.is_intercept()) rep.r2_per_term[t.spec.name] = mcfadden_r2(pho, design, y, t.spec.name);
  return rep;
}

}  // namespace ssn
