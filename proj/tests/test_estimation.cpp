#include "test_support.hpp"

namespace cast {
namespace {

using test::random_matrix;

double soft(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

/// Cyclic coordinate descent for the elastic-net objective, run to a fixed
/// point. Independent of the ISTA solver under test.
Matrix coordinate_descent(const Matrix& x, const Matrix& y, double l1, double l2) {
  Matrix t = Matrix::Zero(x.cols(), y.cols());
  for (Index c = 0; c < y.cols(); ++c) {
    Vector r = y.col(c);
    for (int sweep = 0; sweep < 200000; ++sweep) {
      double moved = 0.0;
      for (Index j = 0; j < x.cols(); ++j) {
        const double old = t(j, c);
        const double z = x.col(j).dot(r) + x.col(j).squaredNorm() * old;
        const double updated = soft(z, l1) / (x.col(j).squaredNorm() + l2);
        if (updated != old) {
          r -= x.col(j) * (updated - old);
          t(j, c) = updated;
          moved = std::max(moved, std::abs(updated - old));
        }
      }
      if (moved < 1e-15) break;
    }
  }
  return t;
}

TEST(Center, IdenticalRowsGiveZero) {
  Matrix h(4, 3);
  for (Index r = 0; r < 4; ++r) h.row(r) << 1.5, -2.0, 7.0;
  const auto p = center(h, h);
  EXPECT_EQ(p.in.norm(), 0.0);
  EXPECT_TRUE(p.mean_in.isApprox(test::vec({1.5, -2.0, 7.0})));
}

TEST(Center, AlreadyCentered) {
  Matrix h(2, 3);
  h << 1, -1, 1, -1, 1, -1;
  const auto p = center(h, h);
  EXPECT_EQ(p.mean_in.norm(), 0.0);
  EXPECT_EQ(p.in, h);
}

TEST(Center, ColumnSumsVanish) {
  const Matrix h = random_matrix(100, 8, 3).array() + 5.0;
  const auto p = center(h, h * 2.0);
  EXPECT_LE(p.in.colwise().sum().cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(p.out.colwise().sum().cwiseAbs().maxCoeff(), 1e-10);
  const auto again = center(p.in, p.out);
  EXPECT_LE(again.mean_in.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Center, ShapeMismatchAndWarning) {
  EXPECT_CAST_ERROR(center(Matrix::Zero(3, 2), Matrix::Zero(4, 2)), ErrorCode::ShapeMismatch);
  EXPECT_CAST_ERROR(center(Matrix::Zero(3, 2), Matrix::Zero(3, 3)), ErrorCode::ShapeMismatch);
  test::WarningCapture w;
  (void)center(random_matrix(3, 5, 1), random_matrix(3, 5, 2));
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(Pinv, IdentityTransition) {
  const Matrix h = random_matrix(80, 10, 4);
  const auto e = estimate_pinv(center(h, h));
  EXPECT_LE((e.transform - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(e.fit_residual, 1e-8);
  EXPECT_EQ(e.estimator, Estimator::pinv);
  EXPECT_TRUE(e.hyperparams.count("rcond"));
}

TEST(Pinv, MinimumNormOnRankDeficientInput) {
  const Matrix in = random_matrix(50, 3, 5) * random_matrix(3, 6, 6);
  const Matrix t_true = random_matrix(6, 6, 7);
  const auto pair = center(in, in * t_true);
  const auto e = estimate_pinv(pair);
  EXPECT_LT(e.fit_residual, 1e-10);
  // t_true is another exact solution; pinv must not be longer.
  EXPECT_LT(residual_norm(pair, t_true), 1e-10);
  EXPECT_LE(e.transform.norm(), t_true.norm());
  EXPECT_LT(e.transform.norm(), t_true.norm() - 1e-6);
}

TEST(Pinv, BiasConsistencyAndAffineInvariance) {
  const Matrix in = random_matrix(60, 5, 8);
  const Matrix out = in * random_matrix(5, 5, 9) + 0.1 * random_matrix(60, 5, 10);
  const auto pair = center(in, out);
  const auto e = estimate_pinv(pair);
  const Matrix uncentered = (in * e.transform).rowwise() + e.bias.transpose();
  const Matrix centered = (pair.in * e.transform).rowwise() + pair.mean_out.transpose();
  EXPECT_LE((uncentered - centered).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(residual_norm_uncentered(in, out, e), (out - uncentered).norm() / out.norm(), 1e-14);

  const Vector shift_in = test::vec({1, 2, 3, 4, 5}), shift_out = test::vec({-3, 0, 3, 9, 1});
  const Matrix in2 = in.rowwise() + shift_in.transpose();
  const Matrix out2 = out.rowwise() + shift_out.transpose();
  const auto e2 = estimate_pinv(center(in2, out2));
  EXPECT_LE((e2.transform - e.transform).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT((e2.bias - e.bias).norm(), 1.0);
}

TEST(ResidualNorm, ClosedCases) {
  const Matrix in = random_matrix(40, 4, 11);
  const Matrix t = random_matrix(4, 4, 12);
  const auto pair = center(in, in * t);
  EXPECT_LT(residual_norm(pair, t), 1e-9);
  EXPECT_EQ(residual_norm(pair, Matrix::Zero(4, 4)), 1.0);
  const Matrix constant = Matrix::Ones(40, 4);
  EXPECT_CAST_ERROR(residual_norm(center(in, constant), t), ErrorCode::ZeroDenominator);
  EXPECT_CAST_ERROR(residual_norm(pair, Matrix::Zero(3, 4)), ErrorCode::ShapeMismatch);
}

TEST(ResidualNorm, TracksSyntheticNoise) {
  SyntheticSpec spec;
  spec.dim = 16;
  spec.rows = 4000;
  spec.num_layers = 2;
  spec.noise_scale = 0.1;
  const auto s = generate_synthetic(spec);
  const auto e = estimate_pinv(center(s.bundle.layer(0), s.bundle.layer(1)));
  EXPECT_NEAR(e.fit_residual, 0.1, 0.01);
}

TEST(Ridge, VanishingLambdaMatchesPinv) {
  const auto pair = center(random_matrix(70, 6, 13), random_matrix(70, 6, 14));
  const auto p = estimate_pinv(pair);
  const auto r = estimate_ridge(pair, 1e-12);
  EXPECT_LT((r.transform - p.transform).norm() / p.transform.norm(), 1e-6);
  EXPECT_GE(r.fit_residual, p.fit_residual - 1e-12);
}

TEST(Ridge, HugeLambdaShrinksToZero) {
  const Matrix in = random_matrix(70, 6, 15);
  const auto pair = center(in, in * random_matrix(6, 6, 16));
  const auto p = estimate_pinv(pair);
  const auto r = estimate_ridge(pair, 1e9);
  EXPECT_LT(r.transform.norm(), 1e-6 * p.transform.norm());
}

TEST(Ridge, MatchesNormalEquations) {
  const auto pair = center(random_matrix(30, 5, 17), random_matrix(30, 5, 18));
  const double lambda = 0.7;
  const Matrix expected =
      (pair.in.transpose() * pair.in + lambda * Matrix::Identity(5, 5)).ldlt().solve(pair.in.transpose() * pair.out);
  EXPECT_LE((estimate_ridge(pair, lambda).transform - expected).norm(), 1e-10 * expected.norm());
}

TEST(Ridge, RejectsNonPositiveLambda) {
  const auto pair = center(random_matrix(10, 2, 1), random_matrix(10, 2, 2));
  EXPECT_CAST_ERROR(estimate_ridge(pair, 0.0), ErrorCode::InvalidArgument);
  EXPECT_CAST_ERROR(estimate_ridge(pair, -1.0), ErrorCode::InvalidArgument);
}

TEST(ElasticNet, NoL1ReducesToRidge) {
  const auto pair = center(random_matrix(50, 5, 19), random_matrix(50, 5, 20));
  ElasticNetOptions opt;
  opt.l1 = 0.0;
  opt.l2 = 0.5;
  opt.max_iter = 100000;
  opt.tol = 1e-13;
  const auto en = estimate_elastic_net(pair, opt);
  const auto r = estimate_ridge(pair, 0.5);
  EXPECT_TRUE(en.converged);
  EXPECT_LT((en.transform - r.transform).norm() / r.transform.norm(), 1e-5);
}

TEST(ElasticNet, LargeL1KillsEverything) {
  const auto pair = center(random_matrix(20, 4, 21), random_matrix(20, 4, 22));
  ElasticNetOptions opt;
  opt.l1 = 1e6;
  const auto en = estimate_elastic_net(pair, opt);
  EXPECT_EQ(en.transform.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(en.converged);
}

TEST(ElasticNet, ObjectiveMatchesCoordinateDescentOracle) {
  const Matrix x = random_matrix(6, 3, 23);
  const Matrix y = random_matrix(6, 3, 24);
  const auto pair = center(x, y);
  const double l1 = 0.3, l2 = 0.1;
  ElasticNetOptions opt;
  opt.l1 = l1;
  opt.l2 = l2;
  opt.max_iter = 200000;
  opt.tol = 1e-14;
  const auto en = estimate_elastic_net(pair, opt);
  const Matrix ref = coordinate_descent(pair.in, pair.out, l1, l2);
  EXPECT_NEAR(elastic_net_objective(pair, en.transform, l1, l2), elastic_net_objective(pair, ref, l1, l2), 1e-6);
  EXPECT_LE((en.transform - ref).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ElasticNet, ObjectiveNonIncreasing) {
  const auto pair = center(random_matrix(40, 6, 25), random_matrix(40, 6, 26));
  ElasticNetOptions opt;
  opt.l1 = 0.05;
  opt.l2 = 0.01;
  opt.record_objective = true;
  opt.max_iter = 300;
  test::WarningCapture w;
  const auto en = estimate_elastic_net(pair, opt);
  ASSERT_GE(en.objective_history.size(), 2u);
  for (std::size_t k = 1; k < en.objective_history.size(); ++k) {
    EXPECT_LE(en.objective_history[k], en.objective_history[k - 1] + 1e-12 * std::abs(en.objective_history[k - 1]));
  }
}

TEST(ElasticNet, NonConvergenceIsFlagged) {
  const auto pair = center(random_matrix(40, 6, 27), random_matrix(40, 6, 28));
  ElasticNetOptions opt;
  opt.max_iter = 2;
  opt.tol = 1e-15;
  test::WarningCapture w;
  const auto en = estimate_elastic_net(pair, opt);
  EXPECT_FALSE(en.converged);
  EXPECT_EQ(en.iterations, 2);
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(ElasticNet, RejectsBadPenalties) {
  const auto pair = center(random_matrix(10, 2, 1), random_matrix(10, 2, 2));
  ElasticNetOptions opt;
  opt.l1 = 0.0;
  opt.l2 = 0.0;
  EXPECT_CAST_ERROR(estimate_elastic_net(pair, opt), ErrorCode::InvalidArgument);
  opt.l1 = -1.0;
  opt.l2 = 1.0;
  EXPECT_CAST_ERROR(estimate_elastic_net(pair, opt), ErrorCode::InvalidArgument);
}

TEST(TruncatedSvd, FullRankEqualsPinv) {
  const Matrix in = random_matrix(50, 3, 29) * random_matrix(3, 7, 30);
  const auto pair = center(in, random_matrix(50, 7, 31));
  const auto p = estimate_pinv(pair);
  const auto t = estimate_truncated_svd(pair, 3);
  EXPECT_LE((t.transform - p.transform).cwiseAbs().maxCoeff(), 1e-8);
  const auto dflt = estimate_truncated_svd(pair);
  EXPECT_EQ(dflt.hyperparams.at("k"), 3.0);
}

TEST(TruncatedSvd, ResidualNonIncreasingInK) {
  const Matrix in = random_matrix(80, 3, 32) * random_matrix(3, 8, 33);
  const auto pair = center(in, in * random_matrix(8, 8, 34));
  const double pinv_res = estimate_pinv(pair).fit_residual;
  EXPECT_GT(estimate_truncated_svd(pair, 1).fit_residual, pinv_res + 1e-3);
  double prev = std::numeric_limits<double>::infinity();
  for (Index k = 1; k <= 8; ++k) {
    const double r = estimate_truncated_svd(pair, k).fit_residual;
    EXPECT_LE(r, prev + 1e-12) << "k=" << k;
    prev = r;
  }
}

TEST(TruncatedSvd, InvalidK) {
  const auto pair = center(random_matrix(10, 4, 1), random_matrix(10, 4, 2));
  EXPECT_CAST_ERROR(estimate_truncated_svd(pair, 0), ErrorCode::InvalidK);
  EXPECT_CAST_ERROR(estimate_truncated_svd(pair, 5), ErrorCode::InvalidK);
}

TEST(Estimators, PinvIsOptimalAcrossEstimators) {
  SyntheticSpec spec;
  spec.num_layers = 2;
  spec.rows = 400;
  spec.noise_scale = 0.2;
  spec.ranks = {8};
  const auto s = generate_synthetic(spec);
  const auto pair = center(s.bundle.layer(0), s.bundle.layer(1));
  const double best = estimate_pinv(pair).fit_residual;
  EstimatorConfig cfg;
  for (auto kind : {Estimator::ridge, Estimator::elastic_net, Estimator::truncated_svd}) {
    cfg.kind = kind;
    cfg.k = kind == Estimator::truncated_svd ? std::optional<Index>(4) : std::nullopt;
    test::WarningCapture w;
    EXPECT_LE(best, estimate(pair, cfg).fit_residual + 1e-9) << to_string(kind);
  }
}

TEST(Estimators, NameRoundTrip) {
  for (auto kind : {Estimator::pinv, Estimator::ridge, Estimator::elastic_net, Estimator::truncated_svd}) {
    EXPECT_EQ(estimator_from_string(to_string(kind)), kind);
  }
  EXPECT_EQ(estimator_from_string("enet"), Estimator::elastic_net);
  EXPECT_EQ(estimator_from_string("tsvd"), Estimator::truncated_svd);
  EXPECT_CAST_ERROR(estimator_from_string("lasso"), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace cast
