#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ssn/pho.hpp"

using namespace ssn;
using namespace ssn::fixture;
using ssn::oracle::max_abs;

namespace {

struct Setup {
  StructuredDesign design;
  DenseMatrix Z;
  DenseVector y;
};

// intercept + linear x1 + spline of x2 + null linear x3; y depends on x1, x2 and z.
Setup gam_setup(Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> x1(n), x2(n), x3(n);
  DenseMatrix Z(n, 2);
  DenseVector y(n);
  for (Index i = 0; i < n; ++i) {
    x1[i] = u(rng);
    x2[i] = u(rng);
    x3[i] = u(rng);
    Z(i, 0) = u(rng);
    Z(i, 1) = x1[i] + 0.3 * u(rng);
    y(i) = 2.0 * x1[i] + std::sin(3.0 * x2[i]) + std::cos(2.0 * Z(i, 0)) + nd(rng);
  }
  DataTable t;
  t.add_numeric("x1", x1);
  t.add_numeric("x2", x2);
  t.add_numeric("x3", x3);
  auto design = build_design(t, {TermSpec::intercept(), TermSpec::linear("x1"), TermSpec::bspline("x2", 7),
                                 TermSpec::linear("x3")});
  return {design, Z, y};
}

SSNModel model_for(const StructuredDesign& design, Index d, std::uint64_t seed) {
  auto m = small_model(design.cols(), d, {8}, 5, TrainingMode::Unconstrained, seed);
  m.layout = design.layout;
  return m;
}

std::vector<Index> random_partition(Index n, Index max_size, Rng& rng) {
  std::uniform_int_distribution<Index> len(1, max_size);
  std::vector<Index> sizes;
  for (Index left = n; left > 0;) {
    const Index s = std::min(left, len(rng));
    sizes.push_back(s);
    left -= s;
  }
  return sizes;
}

}  // namespace

TEST(PhoFull, ZeroHeadLeavesBetaUnchanged) {
  auto m = small_model(3, 2, {4}, 3, TrainingMode::Unconstrained, 1);
  m.gamma.setZero();
  const auto d = sample_data(20, 3, 2, 2);
  const auto r = pho_full(m, d.X, d.Z);
  EXPECT_LT(max_abs(r.alpha), 1e-14);
  EXPECT_LT(max_abs(r.beta_tilde - m.beta), 1e-14);
  EXPECT_LT(max_abs(r.eta_unstr), 1e-14);
}

TEST(PhoFull, UnstructuredInColumnSpaceIsFullyAbsorbed) {
  auto m = small_model(2, 2, {3}, 1, TrainingMode::Unconstrained, 3);
  m.mlp.layers.back().W.setZero();
  m.mlp.layers.back().b << 1.0;  // U = relu(1) = 1 for every row
  m.gamma << 0.7;
  auto d = sample_data(15, 2, 2, 4);
  d.X.col(0).setOnes();
  const auto r = pho_full(m, d.X, d.Z);
  EXPECT_NEAR(r.alpha(0), 0.7, 1e-12);
  EXPECT_NEAR(r.alpha(1), 0.0, 1e-12);
  EXPECT_LT(max_abs(r.eta_unstr), 1e-12);
}

TEST(PhoFull, MatchesNormalEquationsOracle) {
  auto m = small_model(4, 3, {6}, 5, TrainingMode::Unconstrained, 5);
  const auto d = sample_data(60, 4, 3, 6);
  const auto r = pho_full(m, d.X, d.Z);
  const DenseVector zeta = latent_features(m, d.Z) * m.gamma;
  EXPECT_LT(max_abs(r.alpha - oracle::normal_equations_fit(d.X, zeta)), 1e-10);
}

TEST(PhoFull, PropertiesOverRandomModels) {
  for (std::uint64_t s = 0; s < 25; ++s) {
    auto m = small_model(4, 3, {6}, 5, s % 2 ? TrainingMode::ONO : TrainingMode::Unconstrained, 100 + s);
    const auto d = sample_data(50 + static_cast<Index>(s), 4, 3, 200 + s);
    const auto r = pho_full(m, d.X, d.Z);
    const DenseVector raw = raw_prediction(m, d.X, d.Z);
    EXPECT_LE(max_abs(r.prediction() - raw), 1e-9 * std::max(1.0, max_abs(raw)));
    EXPECT_LE(r.ortho_residual, 1e-8);
    EXPECT_LE(max_abs(oracle::normal_equations_fit(d.X, r.eta_unstr)), 1e-7);
    // idempotence: a second pass on the adjusted model moves nothing
    const auto again = pho_full(apply_pho(m, r), d.X, d.Z);
    EXPECT_LE(max_abs(again.beta_tilde - r.beta_tilde), 1e-9);
    EXPECT_LE(max_abs(again.eta_unstr - r.eta_unstr), 1e-9);
  }
}

TEST(PhoFull, RankDeficientDesignUsesMinimumNormSolution) {
  auto m = small_model(3, 2, {4}, 3, TrainingMode::Unconstrained, 7);
  auto d = sample_data(30, 3, 2, 8);
  d.X.col(2) = d.X.col(0) + d.X.col(1);
  const auto r = pho_full(m, d.X, d.Z);
  EXPECT_LE(r.ortho_residual, 1e-8);
  EXPECT_LT(max_abs(r.prediction() - raw_prediction(m, d.X, d.Z)), 1e-9);
  EXPECT_LT(max_abs(r.alpha - pseudoinverse(d.X) * (latent_features(m, d.Z) * m.gamma)), 1e-9);
}

TEST(PhoMinibatch, EqualsFullOverRandomPartitions) {
  auto m = small_model(5, 3, {7}, 4, TrainingMode::Unconstrained, 9);
  const auto d = sample_data(120, 5, 3, 10);
  const auto full = pho_full(m, d.X, d.Z);
  Rng rng(11);
  for (int k = 0; k < 25; ++k) {
    // max sizes from 2 (all batches smaller than p) to 60
    auto batches = MatrixBatches(d.X, d.Z, random_partition(120, k < 5 ? 2 + k % 3 : 60, rng));
    const auto mb = pho_minibatch(m, batches);
    EXPECT_LE(max_abs(mb.alpha - full.alpha), 1e-8);
    EXPECT_LE(max_abs(mb.eta_unstr - full.eta_unstr), 1e-8);
    EXPECT_LE(max_abs(mb.eta_str - full.eta_str), 1e-8);
    EXPECT_NEAR(mb.ortho_residual, full.ortho_residual, 1e-10);
  }
}

TEST(PhoMinibatch, SingleBatchAndSingleRowBatches) {
  auto m = small_model(3, 2, {5}, 3, TrainingMode::Unconstrained, 12);
  const auto d = sample_data(40, 3, 2, 13);
  const auto full = pho_full(m, d.X, d.Z);
  auto one = MatrixBatches::uniform(d.X, d.Z, 40);
  auto rows = MatrixBatches::uniform(d.X, d.Z, 1);
  EXPECT_LE(max_abs(pho_minibatch(m, one).alpha - full.alpha), 1e-10);
  EXPECT_LE(max_abs(pho_minibatch(m, rows).alpha - full.alpha), 1e-8);
}

TEST(PhoMinibatch, SingularGramThrowsWithRank) {
  auto m = small_model(3, 2, {4}, 3, TrainingMode::Unconstrained, 14);
  auto d = sample_data(30, 3, 2, 15);
  d.X.col(2) = 2.0 * d.X.col(1);
  auto b = MatrixBatches::uniform(d.X, d.Z, 7);
  try {
    pho_minibatch(m, b);
    FAIL() << "expected SingularSystemError";
  } catch (const SingularSystemError& e) {
    EXPECT_EQ(e.rank(), 2);
  }
}

TEST(Phogam, ZeroLambdaEqualsPho) {
  const auto s = gam_setup(300, 20);
  const auto m = model_for(s.design, 2, 21);
  const auto pho = pho_full(m, s.design.X, s.Z);
  const auto gam = phogam_adjust(m, s.design, s.Z, Lambda::fixed(0.0));
  EXPECT_LE(max_abs(gam.beta_tilde - pho.beta_tilde), 1e-9);
  ASSERT_TRUE(gam.lambda_used.has_value());
  EXPECT_EQ(*gam.lambda_used, 0.0);
}

TEST(Phogam, FixedLambdaMatchesExplicitInverse) {
  const auto s = gam_setup(200, 22);
  const auto m = model_for(s.design, 2, 23);
  const auto gam = phogam_adjust(m, s.design, s.Z, Lambda::fixed(3.0));
  const DenseMatrix& X = s.design.X;
  const DenseMatrix K = s.design.identified_penalty();
  const DenseVector zeta = latent_features(m, s.Z) * m.gamma;
  const DenseVector expected =
      oracle::explicit_inverse(X.transpose() * X + 3.0 * K) * (X.transpose() * zeta);
  EXPECT_LE(max_abs(gam.alpha - expected), 1e-9);
  EXPECT_LE(max_abs(gam.prediction() - raw_prediction(m, X, s.Z)), 1e-9);
}

TEST(Phogam, AutomaticLambdaMinimizesGcvOnGrid) {
  const auto s = gam_setup(250, 24);
  const auto m = model_for(s.design, 2, 25);
  const auto gam = phogam_adjust(m, s.design, s.Z);
  ASSERT_TRUE(gam.lambda_used.has_value());
  const auto grid = log_grid();
  EXPECT_NE(std::find(grid.begin(), grid.end(), *gam.lambda_used), grid.end());
  // independent GCV over the grid
  const DenseMatrix& X = s.design.X;
  const DenseMatrix K = s.design.identified_penalty();
  const DenseVector zeta = latent_features(m, s.Z) * m.gamma;
  const double n = static_cast<double>(X.rows());
  double best = 1e300, best_lambda = 0;
  for (double l : grid) {
    const DenseMatrix inv = oracle::explicit_inverse(X.transpose() * X + l * K);
    const DenseMatrix H = X * inv * X.transpose();
    const double rss = (zeta - H * zeta).squaredNorm();
    const double g = n * rss / std::pow(n - H.trace(), 2);
    if (g < best) best = g, best_lambda = l;
  }
  EXPECT_EQ(*gam.lambda_used, best_lambda);
}

TEST(Phogam, LargeLambdaShrinksSplineTowardPolynomial) {
  const auto s = gam_setup(300, 26);
  const auto m = model_for(s.design, 2, 27);
  const auto& t = s.design.layout.term("s(x2)");
  const auto small = phogam_adjust(m, s.design, s.Z, Lambda::fixed(1e-4));
  const auto large = phogam_adjust(m, s.design, s.Z, Lambda::fixed(1e6));
  const DenseMatrix D = difference_penalty(7, 2);
  const auto rough = [&](const DenseVector& a) { return a.segment(t.first, t.count).dot(D * a.segment(t.first, t.count)); };
  EXPECT_LT(rough(large.alpha), 1e-3 * rough(small.alpha));
}

TEST(Phogam, RequiresPenalty) {
  auto m = small_model(3, 2, {4}, 3, TrainingMode::Unconstrained, 28);
  StructuredDesign d;
  d.X = sample_data(10, 3, 2, 29).X;
  d.layout.cols = 3;
  EXPECT_THROW(phogam_adjust(m, d, DenseMatrix::Zero(10, 2), Lambda::fixed(1.0)), PreconditionError);
}

TEST(Decompose, InSampleReproducesPho) {
  const auto s = gam_setup(150, 30);
  const auto m = model_for(s.design, 2, 31);
  const auto r = pho_full(m, s.design.X, s.Z);
  const auto c = decompose_out_of_sample(m, r, s.design.X, s.Z);
  EXPECT_LE(max_abs(c.eta_str - r.eta_str), 1e-12);
  EXPECT_LE(max_abs(c.eta_unstr - r.eta_unstr), 1e-12);
}

TEST(Decompose, FreshDataAddsUpToRawPrediction) {
  const auto s = gam_setup(200, 32);
  const auto m = model_for(s.design, 2, 33);
  const auto r = pho_full(m, s.design.X, s.Z);
  const auto test = gam_setup(100, 34);
  const auto c = decompose_out_of_sample(m, r, test.design.X, test.Z);
  const DenseVector raw = raw_prediction(m, test.design.X, test.Z);
  EXPECT_LE(max_abs(c.eta_str + c.eta_unstr - raw), 1e-9 * std::max(1.0, max_abs(raw)));
  // same result after folding the adjustment into the model
  const auto folded = apply_pho(m, r);
  EXPECT_LE(max_abs(raw_prediction(folded, test.design.X, test.Z) - raw), 1e-9);
}

TEST(Decompose, ZeroHeadAndSchemaErrors) {
  const auto s = gam_setup(100, 35);
  auto m = model_for(s.design, 2, 36);
  m.gamma.setZero();
  const auto r = pho_full(m, s.design.X, s.Z);
  const auto c = decompose_out_of_sample(m, r, s.design.X, s.Z);
  EXPECT_LT(max_abs(c.eta_unstr), 1e-14);
  EXPECT_LT(max_abs(c.eta_str - s.design.X * m.beta), 1e-12);
  EXPECT_THROW(decompose_out_of_sample(m, r, s.design.X.leftCols(3), s.Z), SchemaError);
  EXPECT_THROW(decompose_out_of_sample(m, r, s.design.X, s.Z.leftCols(1)), SchemaError);
}

TEST(Importance, ExplainedVarianceExamples) {
  const auto s = gam_setup(200, 40);
  auto m = model_for(s.design, 2, 41);
  for (std::uint64_t k = 0; k < 10; ++k) {
    m = model_for(s.design, 2, 42 + k);
    const auto r = pho_full(m, s.design.X, s.Z);
    const double ev = ev_structured(r);
    EXPECT_GE(ev, -1e-9);
    EXPECT_LE(ev, 1.0 + 1e-9);
    EXPECT_NEAR(ev + ev_unstructured(r), 1.0, 1e-9);
  }
  m.gamma.setZero();
  EXPECT_NEAR(ev_structured(pho_full(m, s.design.X, s.Z)), 1.0, 1e-12);
  // only the intercept is structured
  auto flat = pho_full(model_for(s.design, 2, 60), s.design.X, s.Z);
  flat.beta_tilde.tail(flat.beta_tilde.size() - 1).setZero();
  flat.eta_str = s.design.X * flat.beta_tilde;
  EXPECT_NEAR(ev_structured(flat), 0.0, 1e-12);
}

TEST(Importance, ExplainedVarianceErrors) {
  auto m = small_model(3, 2, {4}, 3, TrainingMode::Unconstrained, 61);
  const auto d = sample_data(20, 3, 2, 62);
  const auto r = pho_full(m, d.X, d.Z);
  EXPECT_THROW(ev_structured(r), PreconditionError);
  PHOResult flat;
  flat.has_intercept = true;
  flat.eta_str = DenseVector::Constant(5, 2.0);
  flat.eta_unstr = DenseVector::Zero(5);
  EXPECT_THROW(ev_structured(flat), DegenerateError);
}

TEST(Importance, McFaddenAgainstHandLikelihoods) {
  const auto s = gam_setup(400, 70);
  const auto m = model_for(s.design, 2, 71);
  const auto r = pho_full(m, s.design.X, s.Z);
  const auto& t = s.design.layout.term("x1");
  const DenseVector eta = r.prediction();
  const double n = static_cast<double>(eta.size());
  const double sigma2 = (s.y - eta).squaredNorm() / n;
  const auto ll = [&](const DenseVector& e) {
    double acc = 0;
    for (Index i = 0; i < e.size(); ++i)
      acc += -0.5 * std::log(2 * M_PI * sigma2) - 0.5 * std::pow(s.y(i) - e(i), 2) / sigma2;
    return acc;
  };
  const DenseVector minus = eta - s.design.X.col(t.first) * r.beta_tilde(t.first);
  EXPECT_NEAR(mcfadden_r2(r, s.design, s.y, "x1"), 1.0 - ll(eta) / ll(minus), 1e-12);

  auto zeroed = r;
  zeroed.beta_tilde.segment(t.first, t.count).setZero();
  zeroed.eta_str = s.design.X * zeroed.beta_tilde;
  EXPECT_EQ(mcfadden_r2(zeroed, s.design, s.y, "x1"), 0.0);
  EXPECT_THROW(mcfadden_r2(r, s.design, s.y, "nope"), SchemaError);
}

TEST(Importance, ReportCoversNonInterceptTerms) {
  const auto s = gam_setup(200, 80);
  const auto m = model_for(s.design, 2, 81);
  const auto rep = importance(pho_full(m, s.design.X, s.Z), s.design, s.y);
  EXPECT_EQ(rep.r2_per_term.size(), 3u);
  EXPECT_TRUE(rep.r2_per_term.count("s(x2)"));
  EXPECT_NEAR(rep.ev_structured + rep.ev_unstructured, 1.0, 1e-9);
}

TEST(PhoMinibatch, MinimumNormSolveMatchesFullOnSplineDesign) {
  const auto s = gam_setup(200, 90);
  const auto m = model_for(s.design, 2, 91);
  const auto full = pho_full(m, s.design.X, s.Z);
  auto batches = MatrixBatches::uniform(s.design.X, s.Z, 9);
  EXPECT_THROW(pho_minibatch(m, batches), SingularSystemError);
  const auto mb = pho_minibatch(m, batches, GramSolve::MinimumNorm);
  EXPECT_LE(max_abs(mb.alpha - full.alpha), 1e-8);
  EXPECT_LE(max_abs(mb.eta_unstr - full.eta_unstr), 1e-8);
}
