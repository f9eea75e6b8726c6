#pragma once

// Simulation generators and experiment drivers. Drivers return one
// ExperimentReport per (cell, method); write_reports emits them as a long
// CSV with one metric per row.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ssn/basis.hpp"
#include "ssn/errors.hpp"
#include "ssn/linalg.hpp"
#include "ssn/pho.hpp"
#include "ssn/ssn.hpp"
#include "ssn/table.hpp"

namespace ssn {

enum class Scenario { Linear, Nonlinear, ErrorRate, Convergence, Benchmark };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Linear: return "linear";
    case Scenario::Nonlinear: return "nonlinear";
    case Scenario::ErrorRate: return "error-rate";
    case Scenario::Convergence: return "convergence";
    case Scenario::Benchmark: return "benchmark";
  }
  return "?";
}

struct SimConfig {
  Index n = 1000;
  Index p = 3;
  Index q = 20;
  bool overlap = true;  // the first p columns of Z are the columns of X
  double noise_sd = 1.0;
  std::uint64_t seed = 1;
  Scenario scenario = Scenario::Linear;

  void validate() const {
    if (n < 1) throw SpecError("n must be positive");
    if (p < 1 || q < 1) throw SpecError("p and q must be at least 1");
    if (overlap && q < p) throw SpecError("overlapping Z needs q >= p");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw SpecError("noise_sd must be finite and >= 0");
  }
};

struct SimData {
  DenseMatrix X;
  DenseMatrix Z;
  DenseVector y;
  DenseVector signal;     // noiseless target
  DenseVector beta_true;  // linear scenario only
};

/// splitmix64 of a combined with b; used to derive per-cell seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Generators

/// p equispaced values from -2.5 to 2.5, both ends included. p = 1 gives -2.5.
inline DenseVector equispaced_beta(Index p) {
  DenseVector b(p);
  for (Index j = 0; j < p; ++j) b(j) = p == 1 ? -2.5 : -2.5 + 5.0 * static_cast<double>(j) / static_cast<double>(p - 1);
  return b;
}

/// The ten additive test functions f0..f9.
inline double nonlinear_function(int j, double x) {
  switch (j) {
    case 0: return std::cos(5.0 * x);
    case 1: return std::tanh(3.0 * x);
    case 2: return -(x * x * x);
    case 3: return -3.0 * x * std::cos(3.0 * x - 2.0);
    case 4: return std::exp(0.5 * x) - 1.0;
    case 5: return x * x;
    case 6: return std::sin(x) * std::cos(x);
    case 7: return std::sqrt(std::abs(x));
    case 8: return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi) - 0.125;
    case 9: return -x * std::tanh(3.0 * x) * std::sin(4.0 * x);
  }
  throw SpecError("nonlinear_function: index " + std::to_string(j) + " outside 0..9");
}

namespace detail {

inline DenseMatrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

inline SimData features(const SimConfig& cfg, Rng& rng) {
  SimData d;
  d.X = standard_normal(cfg.n, cfg.p, rng);
  if (cfg.overlap) {
    d.Z.resize(cfg.n, cfg.q);
    d.Z.leftCols(cfg.p) = d.X;
    if (cfg.q > cfg.p) d.Z.rightCols(cfg.q - cfg.p) = standard_normal(cfg.n, cfg.q - cfg.p, rng);
  } else {
    d.Z = standard_normal(cfg.n, cfg.q, rng);
  }
  return d;
}

inline void add_noise(SimData& d, double sd, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  d.y = d.signal;
  if (sd > 0.0)
    for (Index i = 0; i < d.y.size(); ++i) d.y(i) += sd * nd(rng);
}

}  // namespace detail

/// X ~ N(0, 1), y = X beta* + eps.
inline SimData gen_linear_data(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  auto d = detail::features(cfg, rng);
  d.beta_true = equispaced_beta(cfg.p);
  d.signal = d.X * d.beta_true;
  detail::add_noise(d, cfg.noise_sd, rng);
  return d;
}

/// y = sum_{j < p} f_j(x_j) + eps.
inline SimData gen_nonlinear_data(const SimConfig& cfg) {
  if (cfg.p > 10) throw SpecError("the nonlinear scenario has ten functions; p = " + std::to_string(cfg.p));
  cfg.validate();
  Rng rng(cfg.seed);
  auto d = detail::features(cfg, rng);
  d.signal = DenseVector::Zero(cfg.n);
  for (Index i = 0; i < cfg.n; ++i)
    for (Index j = 0; j < cfg.p; ++j) d.signal(i) += nonlinear_function(static_cast<int>(j), d.X(i, j));
  detail::add_noise(d, cfg.noise_sd, rng);
  return d;
}

inline constexpr Index kErrorRateP = 10;
inline constexpr Index kErrorRateQ = 20;

/// X (n x 10) and Z (n x 20) independent N(0, 1), beta = 0,
/// y = sin(Z_1) + Z_2^2 + eps. cfg.p, cfg.q and cfg.overlap are ignored.
inline SimData gen_error_rate_data(const SimConfig& cfg) {
  SimConfig c = cfg;
  c.p = kErrorRateP;
  c.q = kErrorRateQ;
  c.overlap = false;
  c.validate();
  Rng rng(c.seed);
  auto d = detail::features(c, rng);
  d.beta_true = DenseVector::Zero(kErrorRateP);
  d.signal.resize(c.n);
  for (Index i = 0; i < c.n; ++i) d.signal(i) = std::sin(d.Z(i, 0)) + d.Z(i, 1) * d.Z(i, 1);
  detail::add_noise(d, c.noise_sd, rng);
  return d;
}

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
  std::string scenario;
  std::string method;
  int replicate = 0;  // -1 marks rows aggregated over replicates
  SimConfig config;
  std::vector<std::pair<std::string, double>> metrics;

  void add(const std::string& name, double value) {
    if (!std::isfinite(value)) throw DegenerateError("metric '" + name + "' of " + method + " is not finite");
    metrics.emplace_back(name, value);
  }
  double metric(const std::string& name) const {
    for (const auto& [k, v] : metrics)
      if (k == name) return v;
    throw SchemaError("report of " + method + " has no metric '" + name + "'");
  }
  bool has(const std::string& name) const {
    return std::any_of(metrics.begin(), metrics.end(), [&](const auto& kv) { return kv.first == name; });
  }
};

inline void write_reports(std::ostream& os, const std::vector<ExperimentReport>& reports) {
  os << "scenario,method,replicate,n,p,q,overlap,noise_sd,seed,metric,value\n";
  for (const auto& r : reports)
    for (const auto& [name, value] : r.metrics)
      os << r.scenario << ',' << r.method << ',' << r.replicate << ',' << r.config.n << ',' << r.config.p << ','
         << r.config.q << ',' << (r.config.overlap ? 1 : 0) << ',' << csv::format(r.config.noise_sd) << ','
         << r.config.seed << ',' << name << ',' << csv::format(value) << '\n';
}

/// Runs fn(0..count-1) on up to `threads` workers. Results must be written
/// to per-index slots; the first exception in index order is rethrown.
template <typename F>
void parallel_for(std::size_t count, int threads, F&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Shared training setup

struct NetSettings {
  std::vector<Index> hidden{100, 50};  // the last width is the latent dimension
  Activation activation = Activation::ReLU;
  double dropout = 0.2;
  bool bias = true;
  TrainConfig train{32, 500, 0.1, 50, 1e-3, 1};
};

/// Network whose last hidden layer gives U; the SSN head gamma is the
/// linear output layer.
inline MLPConfig latent_config(const NetSettings& net, Index input_dim) {
  if (net.hidden.empty()) throw SpecError("network needs at least one hidden layer");
  MLPConfig c;
  c.layer_sizes.push_back(input_dim);
  c.layer_sizes.insert(c.layer_sizes.end(), net.hidden.begin(), net.hidden.end());
  c.activation = net.activation;
  c.dropout_rate = net.dropout;
  c.use_bias.assign(net.hidden.size(), net.bias);
  c.activate_latent = true;
  c.validate();
  return c;
}

inline TrainResult fit_ssn(const DesignLayout& layout, const DenseMatrix& X, const DenseMatrix& Z,
                           const DenseVector& y, const NetSettings& net, TrainingMode mode, std::uint64_t seed) {
  auto model = make_ssn_model(layout, latent_config(net, Z.cols()), mode, seed);
  TrainConfig tc = net.train;
  tc.seed = seed;
  return train_ssn(std::move(model), X, Z, y, tc);
}

namespace detail {

inline DataTable feature_table(const DenseMatrix& X) {
  DataTable t;
  for (Index j = 0; j < X.cols(); ++j) {
    const auto col = X.col(j);
    t.add_numeric("x" + std::to_string(j), std::vector<double>(col.begin(), col.end()));
  }
  return t;
}

inline double rmse(const DenseVector& a, const DenseVector& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my), sxx += (x[i] - mx) * (x[i] - mx);
  if (!(sxx > 0.0)) throw DegenerateError("slope needs at least two distinct x values");
  return sxy / sxx;
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) ma += ra[i] / n, mb += rb[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

template <typename T>
std::vector<T> flatten(std::vector<std::vector<T>> parts) {
  std::vector<T> out;
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

}  // namespace detail

/// Cells of a simulation grid in a fixed order: n, then p, then q, then
/// replicate. Each cell gets its own seed.
struct SimGrid {
  std::vector<Index> n_values{1000};
  std::vector<Index> p_values{3};
  std::vector<Index> q_values{20};
  bool overlap = true;
  double noise_sd = 1.0;
  int replicates = 5;
  std::uint64_t seed = 1;
  int threads = 1;
  NetSettings net;
  int num_basis = 9;  // nonlinear scenario only

  std::vector<std::pair<SimConfig, int>> cells(Scenario s) const {
    if (replicates < 1) throw SpecError("replicates must be at least 1");
    std::vector<std::pair<SimConfig, int>> out;
    for (Index n : n_values)
      for (Index p : p_values)
        for (Index q : q_values)
          for (int r = 0; r < replicates; ++r) {
            SimConfig c{n, p, q, overlap, noise_sd, mix_seed(seed, out.size()), s};
            c.validate();
            out.emplace_back(c, r);
          }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Linear coefficient recovery

/// Structured part: intercept + one linear term per column of X.
/// rmse_beta compares the slopes (intercept excluded) with beta*.
inline std::vector<ExperimentReport> run_linear_recovery_cell(const SimConfig& cfg, int replicate,
                                                              const NetSettings& net) {
  const auto d = gen_linear_data(cfg);
  std::vector<TermSpec> terms{TermSpec::intercept()};
  for (Index j = 0; j < cfg.p; ++j) terms.push_back(TermSpec::linear("x" + std::to_string(j)));
  const auto design = build_design(detail::feature_table(d.X), terms);
  const auto slopes = [&](const DenseVector& b) { return DenseVector(b.tail(cfg.p)); };
  const auto report = [&](const std::string& method) {
    ExperimentReport r{to_string(Scenario::Linear), method, replicate, cfg, {}};
    return r;
  };

  const std::uint64_t net_seed = mix_seed(cfg.seed, 1000);
  const auto unc = fit_ssn(design.layout, design.X, d.Z, d.y, net, TrainingMode::Unconstrained, net_seed);
  const auto pho = pho_full(unc.model, design.X, d.Z);
  const auto ono = fit_ssn(design.layout, design.X, d.Z, d.y, net, TrainingMode::ONO, net_seed);

  std::vector<ExperimentReport> out;
  auto u = report("Unconstrained");
  u.add("rmse_beta", detail::rmse(slopes(unc.model.beta), d.beta_true));
  u.add("rmse_pred", detail::rmse(raw_prediction(unc.model, design.X, d.Z), d.signal));
  u.add("epochs", unc.epochs_run);
  out.push_back(std::move(u));
  auto ph = report("PHO");
  ph.add("rmse_beta", detail::rmse(slopes(pho.beta_tilde), d.beta_true));
  ph.add("rmse_pred", detail::rmse(pho.prediction(), d.signal));
  ph.add("ortho_residual", pho.ortho_residual);
  ph.add("ev_str", ev_structured(pho));
  out.push_back(std::move(ph));
  auto o = report("ONO");
  o.add("rmse_beta", detail::rmse(slopes(ono.model.beta), d.beta_true));
  o.add("rmse_pred", detail::rmse(predict(ono.model, design.X, d.Z, true, net.train.batch_size), d.signal));
  o.add("epochs", ono.epochs_run);
  out.push_back(std::move(o));
  return out;
}

inline std::vector<ExperimentReport> run_linear_recovery(const SimGrid& grid) {
  const auto cells = grid.cells(Scenario::Linear);
  std::vector<std::vector<ExperimentReport>> parts(cells.size());
  parallel_for(cells.size(), grid.threads,
               [&](std::size_t i) { parts[i] = run_linear_recovery_cell(cells[i].first, cells[i].second, grid.net); });
  return detail::flatten(std::move(parts));
}

// ---------------------------------------------------------------------------
// Nonlinear (spline) recovery

inline constexpr Index kCurveGridPoints = 200;

/// Mean-centered RMSE between the fitted spline of term `t` and f_j on an
/// equispaced grid over the term's knot range.
inline double curve_rmse(const TermLayout& t, const DenseVector& coef, int j) {
  const auto& s = std::get<BSplineTerm>(t.spec.kind);
  DenseVector g(kCurveGridPoints), truth(kCurveGridPoints);
  for (Index i = 0; i < kCurveGridPoints; ++i) {
    g(i) = t.lo + (t.hi - t.lo) * static_cast<double>(i) / static_cast<double>(kCurveGridPoints - 1);
    truth(i) = nonlinear_function(j, g(i));
  }
  const DenseMatrix B = bspline_basis(g, s.num_basis, s.degree, t.lo, t.hi);
  DenseVector fit = B * coef.segment(t.first, t.count);
  fit.array() -= fit.mean();
  truth.array() -= truth.mean();
  return detail::rmse(fit, truth);
}

/// Structured part: intercept + one B-spline per column of X.
/// Methods: Unconstrained, PHO, PHOGAM (GCV lambda), ONO and a penalized
/// least-squares GAM fitted directly to y.
inline std::vector<ExperimentReport> run_nonlinear_recovery_cell(const SimConfig& cfg, int replicate,
                                                                 const NetSettings& net, int num_basis) {
  const auto d = gen_nonlinear_data(cfg);
  std::vector<TermSpec> terms{TermSpec::intercept()};
  for (Index j = 0; j < cfg.p; ++j) terms.push_back(TermSpec::bspline("x" + std::to_string(j), num_basis));
  const auto design = build_design(detail::feature_table(d.X), terms);

  std::vector<ExperimentReport> out;
  const auto report = [&](const std::string& method, const DenseVector& coef) {
    ExperimentReport r{to_string(Scenario::Nonlinear), method, replicate, cfg, {}};
    double total = 0.0;
    for (Index j = 0; j < cfg.p; ++j) {
      const double e = curve_rmse(design.layout.terms[static_cast<std::size_t>(j + 1)], coef, static_cast<int>(j));
      r.add("rmse_f" + std::to_string(j), e);
      total += e;
    }
    r.add("rmse_mean", total / static_cast<double>(cfg.p));
    return r;
  };

  const std::uint64_t net_seed = mix_seed(cfg.seed, 1000);
  const auto unc = fit_ssn(design.layout, design.X, d.Z, d.y, net, TrainingMode::Unconstrained, net_seed);
  out.push_back(report("Unconstrained", unc.model.beta));
  out.back().add("epochs", unc.epochs_run);

  const auto pho = pho_full(unc.model, design.X, d.Z);
  out.push_back(report("PHO", pho.beta_tilde));
  out.back().add("ortho_residual", pho.ortho_residual);

  const auto gam_adj = phogam_adjust(unc.model, design, d.Z);
  out.push_back(report("PHOGAM", gam_adj.beta_tilde));
  out.back().add("lambda", *gam_adj.lambda_used);
  out.back().add("ortho_residual", gam_adj.ortho_residual);

  const auto ono = fit_ssn(design.layout, design.X, d.Z, d.y, net, TrainingMode::ONO, net_seed);
  out.push_back(report("ONO", ono.model.beta));
  out.back().add("epochs", ono.epochs_run);

  const auto oracle = penalized_gcv_fit(design.X, design.identified_penalty(), d.y);
  out.push_back(report("GAMOracle", oracle.coef));
  out.back().add("lambda", oracle.lambda);
  return out;
}

inline std::vector<ExperimentReport> run_nonlinear_recovery(const SimGrid& grid) {
  const auto cells = grid.cells(Scenario::Nonlinear);
  std::vector<std::vector<ExperimentReport>> parts(cells.size());
  parallel_for(cells.size(), grid.threads, [&](std::size_t i) {
    parts[i] = run_nonlinear_recovery_cell(cells[i].first, cells[i].second, grid.net, grid.num_basis);
  });
  return detail::flatten(std::move(parts));
}

// ---------------------------------------------------------------------------
// Prediction error of ONO with the projection active at test time

struct ErrorRateConfig {
  std::vector<Index> n_values{100000};
  std::vector<Index> batch_sizes{1, 10, 100, 1000, 10000};
  double noise_sd = 1.0;
  int replicates = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  NetSettings net{{10}, Activation::ReLU, 0.0, false, TrainConfig{32, 500, 0.2, 50, 1e-3, 1}};
};

/// Trains an ONO model (structured part: the ten columns of X, no
/// intercept) and predicts a fresh test set of the same size with the
/// projection active per batch size and once inactive. The extra term is
/// active minus inactive prediction; its mean square per batch size gives
/// a log-log slope over the batch sizes larger than p.
inline ExperimentReport run_prediction_error_cell(const SimConfig& cfg, int replicate, const ErrorRateConfig& ec) {
  const auto train = gen_error_rate_data(cfg);
  SimConfig test_cfg = cfg;
  test_cfg.seed = mix_seed(cfg.seed, 2000);
  const auto test = gen_error_rate_data(test_cfg);

  DesignLayout layout;
  layout.cols = kErrorRateP;
  const auto fit = fit_ssn(layout, train.X, train.Z, train.y, ec.net, TrainingMode::ONO, mix_seed(cfg.seed, 1000));

  SimConfig shown = cfg;
  shown.p = kErrorRateP;
  shown.q = kErrorRateQ;
  shown.overlap = false;
  ExperimentReport r{to_string(Scenario::ErrorRate), "ONO", replicate, shown, {}};
  const DenseVector inactive = predict(fit.model, test.X, test.Z, false);
  r.add("rmse_inactive", detail::rmse(inactive, test.y));
  std::vector<double> log_b, log_var, log_b_all, log_var_all, rmse_active, bs;
  for (Index b : ec.batch_sizes) {
    const DenseVector active = predict(fit.model, test.X, test.Z, true, b);
    const double e = detail::rmse(active, test.y);
    const double var = (active - inactive).squaredNorm() / static_cast<double>(active.size());
    r.add("rmse_active_b" + std::to_string(b), e);
    r.add("extra_var_b" + std::to_string(b), var);
    rmse_active.push_back(e);
    bs.push_back(static_cast<double>(b));
    if (var > 0.0) {
      log_b_all.push_back(std::log(static_cast<double>(b)));
      log_var_all.push_back(std::log(var));
      if (b > kErrorRateP) {
        log_b.push_back(log_b_all.back());
        log_var.push_back(log_var_all.back());
      }
    }
  }
  if (log_b.size() >= 2) r.add("slope", detail::ols_slope(log_b, log_var));
  if (log_b_all.size() >= 2) r.add("slope_all", detail::ols_slope(log_b_all, log_var_all));
  if (bs.size() >= 2) r.add("spearman_active", detail::spearman(bs, rmse_active));
  r.add("epochs", fit.epochs_run);
  return r;
}

inline std::vector<ExperimentReport> run_prediction_error(const ErrorRateConfig& ec) {
  for (Index b : ec.batch_sizes)
    if (b < 1) throw SpecError("batch sizes must be positive");
  if (ec.replicates < 1) throw SpecError("replicates must be at least 1");
  std::vector<std::pair<SimConfig, int>> cells;
  for (Index n : ec.n_values)
    for (int r = 0; r < ec.replicates; ++r) {
      SimConfig c{n, kErrorRateP, kErrorRateQ, false, ec.noise_sd, mix_seed(ec.seed, cells.size()),
                  Scenario::ErrorRate};
      c.validate();
      cells.emplace_back(c, r);
    }
  std::vector<ExperimentReport> out(cells.size());
  parallel_for(cells.size(), ec.threads,
               [&](std::size_t i) { out[i] = run_prediction_error_cell(cells[i].first, cells[i].second, ec); });
  return out;
}

// ---------------------------------------------------------------------------
// Convergence

/// Epochs until early stopping for ONO and Unconstrained training from the
/// same initialization on linear data; "Difference" holds ONO minus
/// Unconstrained.
inline std::vector<ExperimentReport> run_convergence_cell(const SimConfig& cfg, int replicate,
                                                          const NetSettings& net) {
  const auto d = gen_linear_data(cfg);
  std::vector<TermSpec> terms{TermSpec::intercept()};
  for (Index j = 0; j < cfg.p; ++j) terms.push_back(TermSpec::linear("x" + std::to_string(j)));
  const auto design = build_design(detail::feature_table(d.X), terms);
  const std::uint64_t net_seed = mix_seed(cfg.seed, 1000);
  const auto unc = fit_ssn(design.layout, design.X, d.Z, d.y, net, TrainingMode::Unconstrained, net_seed);
  const auto ono = fit_ssn(design.layout, design.X, d.Z, d.y, net, TrainingMode::ONO, net_seed);
  const std::string sc = to_string(Scenario::Convergence);
  std::vector<ExperimentReport> out;
  out.push_back({sc, "Unconstrained", replicate, cfg, {}});
  out.back().add("epochs", unc.epochs_run);
  out.back().add("best_epoch", unc.best_epoch);
  out.push_back({sc, "ONO", replicate, cfg, {}});
  out.back().add("epochs", ono.epochs_run);
  out.back().add("best_epoch", ono.best_epoch);
  out.push_back({sc, "Difference", replicate, cfg, {}});
  out.back().add("epoch_diff", ono.epochs_run - unc.epochs_run);
  return out;
}

inline std::vector<ExperimentReport> run_convergence(const SimGrid& grid) {
  const auto cells = grid.cells(Scenario::Convergence);
  std::vector<std::vector<ExperimentReport>> parts(cells.size());
  parallel_for(cells.size(), grid.threads,
               [&](std::size_t i) { parts[i] = run_convergence_cell(cells[i].first, cells[i].second, grid.net); });
  return detail::flatten(std::move(parts));
}

// ---------------------------------------------------------------------------
// Benchmark on a CSV data set

inline const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> all{"GAM", "DNNOnly", "Unconstrained", "ONO", "PHO", "PHOGAM"};
  return all;
}

struct BenchmarkConfig {
  std::string target;
  std::vector<TermSpec> terms;
  std::vector<std::string> z_columns;  // empty: every numeric column except the target
  std::vector<std::string> methods = benchmark_methods();
  int splits = 10;
  double test_fraction = 0.1;
  std::uint64_t seed = 1;
  int threads = 1;
  NetSettings net{{20}, Activation::ReLU, 0.1, true, TrainConfig{32, 500, 0.1, 50, 1e-3, 1}};
};

/// Test MSE of every method on `splits` seeded train/test splits, plus
/// mse_mean / mse_sd rows (replicate -1) per method. PHO and PHOGAM adjust
/// the Unconstrained model of the same split; ONO predicts with the
/// projection active in training-size batches.
inline std::vector<ExperimentReport> run_benchmark(const DataTable& data, const BenchmarkConfig& cfg) {
  if (cfg.splits < 1) throw SpecError("benchmark needs at least one split");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) throw SpecError("test_fraction must be in (0, 1)");
  for (const auto& m : cfg.methods)
    if (std::find(benchmark_methods().begin(), benchmark_methods().end(), m) == benchmark_methods().end())
      throw SpecError("unknown benchmark method '" + m + "'");
  if (!data.has(cfg.target)) throw SchemaError("missing target column '" + cfg.target + "'");
  if (!data.is_numeric(cfg.target)) throw DataError("target column '" + cfg.target + "' is not numeric");
  std::vector<std::string> zcols = cfg.z_columns;
  if (zcols.empty())
    for (const auto& name : data.names())
      if (name != cfg.target && data.is_numeric(name)) zcols.push_back(name);
  if (zcols.empty()) throw DataError("benchmark data has no numeric feature columns");
  const Index n = static_cast<Index>(data.rows());
  const Index n_test = std::clamp<Index>(static_cast<Index>(std::llround(cfg.test_fraction * static_cast<double>(n))), 1, n - 2);
  if (n < 4) throw DataError("benchmark needs at least four rows");
  const auto wants = [&](const char* m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end(); };

  SimConfig shown{n, 0, static_cast<Index>(zcols.size()), false, 0.0, cfg.seed, Scenario::Benchmark};
  std::vector<std::vector<std::pair<std::string, double>>> per_split(static_cast<std::size_t>(cfg.splits));
  parallel_for(per_split.size(), cfg.threads, [&](std::size_t s) {
    Rng rng(mix_seed(cfg.seed, s));
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<Index> train_rows(order.begin(), order.end() - n_test);
    const std::vector<Index> test_rows(order.end() - n_test, order.end());
    const DataTable train = data.subset(train_rows), test = data.subset(test_rows);
    const auto design = build_design(train, cfg.terms);
    const DenseMatrix X_test = evaluate_design(design.layout, test).X;
    const DenseMatrix Z = train.matrix(zcols), Z_test = test.matrix(zcols);
    const DenseVector y = train.vector(cfg.target), y_test = test.vector(cfg.target);
    require_finite(Z, "benchmark features");
    require_finite(y, "benchmark target");
    const auto mse = [&](const DenseVector& pred) { return (pred - y_test).squaredNorm() / static_cast<double>(n_test); };
    const std::uint64_t net_seed = mix_seed(cfg.seed, 1000 + s);
    auto& res = per_split[s];

    if (wants("GAM")) {
      const auto fit = penalized_gcv_fit(design.X, design.identified_penalty(), y);
      res.emplace_back("GAM", mse(X_test * fit.coef));
    }
    if (wants("DNNOnly")) {
      const auto ds = build_design(train, {TermSpec::intercept()});
      const auto fit = fit_ssn(ds.layout, ds.X, Z, y, cfg.net, TrainingMode::Unconstrained, net_seed);
      res.emplace_back("DNNOnly", mse(predict(fit.model, DenseMatrix::Ones(n_test, 1), Z_test)));
    }
    if (wants("Unconstrained") || wants("PHO") || wants("PHOGAM")) {
      const auto fit = fit_ssn(design.layout, design.X, Z, y, cfg.net, TrainingMode::Unconstrained, net_seed);
      if (wants("Unconstrained")) res.emplace_back("Unconstrained", mse(predict(fit.model, X_test, Z_test)));
      if (wants("PHO")) {
        const auto pho = pho_full(fit.model, design.X, Z);
        const auto c = decompose_out_of_sample(fit.model, pho, X_test, Z_test);
        res.emplace_back("PHO", mse(c.eta_str + c.eta_unstr));
      }
      if (wants("PHOGAM")) {
        const auto pho = phogam_adjust(fit.model, design, Z);
        const auto c = decompose_out_of_sample(fit.model, pho, X_test, Z_test);
        res.emplace_back("PHOGAM", mse(c.eta_str + c.eta_unstr));
      }
    }
    if (wants("ONO")) {
      const auto fit = fit_ssn(design.layout, design.X, Z, y, cfg.net, TrainingMode::ONO, net_seed);
      res.emplace_back("ONO", mse(predict(fit.model, X_test, Z_test, true, cfg.net.train.batch_size)));
    }
  });

  std::vector<ExperimentReport> out;
  const std::string sc = to_string(Scenario::Benchmark);
  for (const auto& method : benchmark_methods()) {
    if (!wants(method.c_str())) continue;
    std::vector<double> values;
    for (int s = 0; s < cfg.splits; ++s)
      for (const auto& [m, v] : per_split[static_cast<std::size_t>(s)])
        if (m == method) {
          ExperimentReport r{sc, method, s, shown, {}};
          r.add("mse", v);
          out.push_back(std::move(r));
          values.push_back(v);
        }
    double mean = 0.0, ss = 0.0;
    for (double v : values) mean += v / static_cast<double>(values.size());
    for (double v : values) ss += (v - mean) * (v - mean);
    ExperimentReport agg{sc, method, -1, shown, {}};
    agg.add("mse_mean", mean);
    agg.add("mse_sd", values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0);
    out.push_back(std::move(agg));
  }
  return out;
}

inline std::vector<ExperimentReport> run_benchmark(const std::string& csv_path, const BenchmarkConfig& cfg) {
  return run_benchmark(csv::read_file(csv_path), cfg);
}

}  // namespace ssn
