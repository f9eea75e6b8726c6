#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "ssn/experiments.hpp"

using namespace ssn;
using ssn::oracle::max_abs;

namespace {

NetSettings tiny_net(int epochs = 20) {
  NetSettings n;
  n.hidden = {8, 4};
  n.dropout = 0.0;
  n.train.max_epochs = epochs;
  n.train.patience = 5;
  return n;
}

}  // namespace

TEST(Generators, EquispacedBeta) {
  const DenseVector b3 = equispaced_beta(3);
  EXPECT_DOUBLE_EQ(b3(0), -2.5);
  EXPECT_DOUBLE_EQ(b3(1), 0.0);
  EXPECT_DOUBLE_EQ(b3(2), 2.5);
  const DenseVector b10 = equispaced_beta(10);
  for (Index j = 1; j < 10; ++j) EXPECT_NEAR(b10(j) - b10(j - 1), 5.0 / 9.0, 1e-15);
  EXPECT_DOUBLE_EQ(equispaced_beta(1)(0), -2.5);
}

TEST(Generators, NonlinearFunctionValues) {
  EXPECT_DOUBLE_EQ(nonlinear_function(5, 2.0), 4.0);
  EXPECT_DOUBLE_EQ(nonlinear_function(0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(nonlinear_function(1, 0.0), 0.0);
  EXPECT_NEAR(nonlinear_function(8, 0.0), 1.0 / std::sqrt(2.0 * std::numbers::pi) - 0.125, 1e-15);
  EXPECT_NEAR(nonlinear_function(8, 0.0), 0.2739423, 1e-7);
  EXPECT_DOUBLE_EQ(nonlinear_function(2, 2.0), -8.0);
  EXPECT_DOUBLE_EQ(nonlinear_function(7, -4.0), 2.0);
  EXPECT_NEAR(nonlinear_function(3, 1.0), -3.0 * std::cos(1.0), 1e-15);
  EXPECT_NEAR(nonlinear_function(4, 2.0), std::exp(1.0) - 1.0, 1e-15);
  EXPECT_NEAR(nonlinear_function(6, 0.7), 0.5 * std::sin(1.4), 1e-15);
  EXPECT_NEAR(nonlinear_function(9, 0.5), -0.5 * std::tanh(1.5) * std::sin(2.0), 1e-15);
  EXPECT_THROW(nonlinear_function(10, 0.0), SpecError);
}

TEST(Generators, LinearData) {
  SimConfig c{200, 3, 5, true, 0.0, 11, Scenario::Linear};
  const auto d = gen_linear_data(c);
  EXPECT_EQ(d.X.rows(), 200);
  EXPECT_EQ(d.Z.cols(), 5);
  EXPECT_EQ(max_abs(d.Z.leftCols(3) - d.X), 0.0);
  EXPECT_LT(max_abs(d.y - d.X * d.beta_true), 1e-14);
  c.overlap = false;
  const auto e = gen_linear_data(c);
  EXPECT_GT(max_abs(e.Z.leftCols(3) - e.X), 0.1);
}

TEST(Generators, DeterministicBySeed) {
  SimConfig c{50, 2, 4, true, 1.0, 5, Scenario::Linear};
  const auto a = gen_linear_data(c), b = gen_linear_data(c);
  EXPECT_EQ(max_abs(a.y - b.y), 0.0);
  c.seed = 6;
  EXPECT_GT(max_abs(gen_linear_data(c).y - a.y), 0.0);
}

TEST(Generators, NonlinearData) {
  SimConfig c{100, 3, 3, true, 0.0, 12, Scenario::Nonlinear};
  const auto d = gen_nonlinear_data(c);
  for (Index i = 0; i < 5; ++i) {
    double expect = 0;
    for (int j = 0; j < 3; ++j) expect += nonlinear_function(j, d.X(i, j));
    EXPECT_NEAR(d.y(i), expect, 1e-14);
  }
  c.p = 11;
  c.q = 11;
  EXPECT_THROW(gen_nonlinear_data(c), SpecError);
}

TEST(Generators, ErrorRateData) {
  SimConfig c{100000, 1, 1, true, 0.0, 13, Scenario::ErrorRate};
  const auto d = gen_error_rate_data(c);
  EXPECT_EQ(d.X.cols(), 10);
  EXPECT_EQ(d.Z.cols(), 20);
  for (Index i = 0; i < 5; ++i) EXPECT_NEAR(d.y(i), std::sin(d.Z(i, 0)) + d.Z(i, 1) * d.Z(i, 1), 1e-14);
  EXPECT_NEAR(d.Z.col(1).array().square().mean(), 1.0, 0.02);
  EXPECT_EQ(max_abs(d.beta_true), 0.0);
  // noiseless target at Z1 = pi/2, Z2 = 2
  EXPECT_NEAR(std::sin(std::numbers::pi / 2) + 4.0, 5.0, 1e-15);
}

TEST(Generators, ConfigValidation) {
  EXPECT_THROW((SimConfig{0, 1, 1, false, 1.0, 1, Scenario::Linear}).validate(), SpecError);
  EXPECT_THROW((SimConfig{10, 3, 2, true, 1.0, 1, Scenario::Linear}).validate(), SpecError);
  EXPECT_THROW((SimConfig{10, 1, 1, false, -1.0, 1, Scenario::Linear}).validate(), SpecError);
}

TEST(Helpers, SlopeAndSpearman) {
  EXPECT_NEAR(detail::ols_slope({0, 1, 2}, {1, -1, -3}), -2.0, 1e-15);
  EXPECT_NEAR(detail::spearman({1, 2, 3, 4}, {10, 9, 8, 1}), -1.0, 1e-15);
  EXPECT_NEAR(detail::spearman({1, 2, 3}, {1, 3, 2}), 0.5, 1e-15);
}

TEST(Helpers, ParallelForMatchesSerial) {
  std::vector<double> a(37), b(37);
  parallel_for(a.size(), 1, [&](std::size_t i) { a[i] = std::sin(static_cast<double>(i)); });
  parallel_for(b.size(), 4, [&](std::size_t i) { b[i] = std::sin(static_cast<double>(i)); });
  EXPECT_EQ(a, b);
  EXPECT_THROW(parallel_for(5, 3, [](std::size_t i) { if (i == 3) throw DataError("x"); }), DataError);
}

TEST(Reports, CsvLayoutAndFiniteness) {
  ExperimentReport r{"linear", "PHO", 2, SimConfig{}, {}};
  r.add("rmse_beta", 0.25);
  EXPECT_THROW(r.add("bad", std::nan("")), DegenerateError);
  std::ostringstream os;
  write_reports(os, {r});
  EXPECT_EQ(os.str(),
            "scenario,method,replicate,n,p,q,overlap,noise_sd,seed,metric,value\n"
            "linear,PHO,2,1000,3,20,1,1,1,rmse_beta,0.25\n");
}

TEST(Drivers, LinearRecoveryRowsAndPhoInvariance) {
  SimGrid g;
  g.n_values = {200};
  g.replicates = 2;
  g.net = tiny_net();
  const auto reps = run_linear_recovery(g);
  ASSERT_EQ(reps.size(), 6u);
  EXPECT_EQ(reps[0].method, "Unconstrained");
  EXPECT_EQ(reps[1].method, "PHO");
  // PHO reproduces the parent model's predictions
  EXPECT_NEAR(reps[0].metric("rmse_pred"), reps[1].metric("rmse_pred"), 1e-9);
  EXPECT_LE(reps[1].metric("ortho_residual"), 1e-8);
  const auto again = run_linear_recovery(g);
  for (std::size_t i = 0; i < reps.size(); ++i) EXPECT_EQ(reps[i].metrics, again[i].metrics);
}

TEST(Drivers, ThreadCountDoesNotChangeResults) {
  SimGrid g;
  g.n_values = {150};
  g.replicates = 3;
  g.net = tiny_net(5);
  const auto serial = run_convergence(g);
  g.threads = 3;
  const auto threaded = run_convergence(g);
  ASSERT_EQ(serial.size(), threaded.size());
  for (std::size_t i = 0; i < serial.size(); ++i) EXPECT_EQ(serial[i].metrics, threaded[i].metrics);
}

TEST(Drivers, ConvergenceZeroEpochs) {
  SimGrid g;
  g.n_values = {100};
  g.replicates = 1;
  g.net = tiny_net(0);
  const auto reps = run_convergence(g);
  ASSERT_EQ(reps.size(), 3u);
  EXPECT_EQ(reps[2].metric("epoch_diff"), 0.0);
}

TEST(Drivers, NonlinearRowsPerMethod) {
  SimGrid g;
  g.n_values = {300};
  g.p_values = {2};
  g.q_values = {2};
  g.replicates = 1;
  g.net = tiny_net();
  const auto reps = run_nonlinear_recovery(g);
  ASSERT_EQ(reps.size(), 5u);
  const char* methods[] = {"Unconstrained", "PHO", "PHOGAM", "ONO", "GAMOracle"};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(reps[i].method, methods[i]);
    EXPECT_TRUE(reps[i].has("rmse_f1"));
  }
}

TEST(Drivers, CurveRmseIsCenteredAndZeroForExactFit) {
  // f5 = x^2 lies in the cubic spline space
  DataTable t;
  std::vector<double> x(50);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = -2.0 + 4.0 * static_cast<double>(i) / 49.0;
  t.add_numeric("x5", x);
  const auto design = build_design(t, {TermSpec::intercept(), TermSpec::bspline("x5", 7)});
  DenseVector y(50);
  for (Index i = 0; i < 50; ++i) y(i) = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)] + 3.0;
  const DenseVector coef = least_squares_solve(design.X, y);
  EXPECT_LT(curve_rmse(design.layout.terms[1], coef, 5), 1e-10);
}

TEST(Drivers, ErrorRateSmall) {
  ErrorRateConfig e;
  e.n_values = {2000};
  e.batch_sizes = {1, 10, 100, 1000};
  e.net.train.max_epochs = 10;
  const auto reps = run_prediction_error(e);
  ASSERT_EQ(reps.size(), 1u);
  const auto& r = reps[0];
  EXPECT_TRUE(r.has("slope"));
  // b <= p: the projection removes the whole unstructured part
  EXPECT_GE(r.metric("extra_var_b1"), r.metric("extra_var_b100"));
  EXPECT_NEAR(r.metric("extra_var_b1"), r.metric("extra_var_b10"), 1e-12);
}

TEST(Drivers, BenchmarkPhoMatchesParent) {
  Rng rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> a(150), b(150), y(150);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = nd(rng);
    b[i] = nd(rng);
    y[i] = 2 * a[i] - b[i] + 0.3 * nd(rng);
  }
  DataTable t;
  t.add_numeric("a", a);
  t.add_numeric("b", b);
  t.add_numeric("y", y);
  BenchmarkConfig c;
  c.target = "y";
  c.terms = {TermSpec::intercept(), TermSpec::linear("a"), TermSpec::linear("b")};
  c.splits = 3;
  c.net = tiny_net(30);
  const auto reps = run_benchmark(t, c);
  const auto find = [&](const std::string& m, int rep, const std::string& metric) {
    for (const auto& r : reps)
      if (r.method == m && r.replicate == rep) return r.metric(metric);
    throw std::runtime_error("missing row");
  };
  for (int s = 0; s < 3; ++s) {
    EXPECT_NEAR(find("PHO", s, "mse"), find("Unconstrained", s, "mse"), 1e-9);
    EXPECT_NEAR(find("PHOGAM", s, "mse"), find("Unconstrained", s, "mse"), 1e-9);
  }
  // GAM on a linear truth sits near the noise variance
  EXPECT_NEAR(find("GAM", -1, "mse_mean"), 0.09, 0.09 * 0.6);
  c.methods = {"Nope"};
  EXPECT_THROW(run_benchmark(t, c), SpecError);
  c.methods = {"GAM"};
  c.target = "missing";
  EXPECT_THROW(run_benchmark(t, c), SchemaError);
}
