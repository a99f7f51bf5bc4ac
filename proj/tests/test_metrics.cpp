#include "test_support.hpp"

namespace cast {
namespace {

using test::vec;

TEST(EffectiveRank, ThresholdRule) {
  EXPECT_EQ(effective_rank(vec({1, 0.5, 1e-9}), 1e-5), 2);
  EXPECT_EQ(effective_rank(vec({1, 1, 1, 1}), 0.999), 4);
  EXPECT_EQ(effective_rank(vec({0, 0}), 1e-5), 0);
  EXPECT_EQ(effective_rank(vec({2, 1}), 0.5), 1);  // strict inequality
}

TEST(EffectiveRank, Errors) {
  EXPECT_CAST_ERROR(effective_rank(Vector(0), 1e-5), ErrorCode::EmptySpectrum);
  EXPECT_CAST_ERROR(effective_rank(vec({1}), 0.0), ErrorCode::InvalidArgument);
}

TEST(EffectiveRank, NonIncreasingInThreshold) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-9.0, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector s(30);
    for (Index j = 0; j < 30; ++j) s(j) = std::pow(10.0, u(rng));
    std::sort(s.data(), s.data() + s.size(), std::greater<>());
    Index prev = s.size();
    for (double eps : default_threshold_grid()) {
      const Index r = effective_rank(s, eps);
      EXPECT_LE(r, prev);
      prev = r;
    }
  }
}

TEST(DecayRate, ExactExponential) {
  Vector s(100);
  for (Index j = 0; j < 100; ++j) s(j) = std::exp(-0.1 * static_cast<double>(j + 1));
  const auto fit = spectral_decay_rate(s);
  EXPECT_NEAR(fit.alpha, 0.1, 1e-12);
  EXPECT_NEAR(fit.beta, 0.0, 1e-10);
}

TEST(DecayRate, FlatAndThreePoint) {
  EXPECT_EQ(spectral_decay_rate(vec({2, 2, 2})).alpha, 0.0);
  const auto fit = spectral_decay_rate(vec({4, 2, 1}));
  EXPECT_NEAR(fit.alpha, std::log(2.0), 1e-9);
  EXPECT_NEAR(fit.beta, std::log(8.0), 1e-9);
}

TEST(DecayRate, ExcludesNumericalZeros) {
  const auto fit = spectral_decay_rate(vec({4, 2, 1, 1e-14, 0}));
  EXPECT_NEAR(fit.alpha, std::log(2.0), 1e-9);
  EXPECT_CAST_ERROR(spectral_decay_rate(vec({1, 0, 0})), ErrorCode::InsufficientPoints);
  EXPECT_CAST_ERROR(spectral_decay_rate(vec({1})), ErrorCode::InsufficientPoints);
}

TEST(Entropy, ClosedForms) {
  EXPECT_NEAR(transformation_entropy(vec({1, 1})), std::log(2.0), 1e-15);
  EXPECT_EQ(transformation_entropy(vec({1, 0, 0})), 0.0);
  EXPECT_NEAR(transformation_entropy(vec({3, 1})), -0.75 * std::log(0.75) - 0.25 * std::log(0.25), 1e-15);
  EXPECT_NEAR(transformation_entropy(vec({3, 1})), 0.562335, 1e-6);
  EXPECT_CAST_ERROR(transformation_entropy(vec({0, 0})), ErrorCode::AllZeroSpectrum);
}

TEST(Entropy, BoundedByLogCount) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector s(12);
    for (Index j = 0; j < 12; ++j) s(j) = u(rng);
    const double te = transformation_entropy(s);
    EXPECT_GE(te, 0.0);
    EXPECT_LT(te, std::log(12.0));
  }
  EXPECT_NEAR(transformation_entropy(Vector::Constant(12, 0.3)), std::log(12.0), 1e-12);
}

TEST(Anisotropy, ClosedForms) {
  EXPECT_DOUBLE_EQ(anisotropy_index(vec({3, 2, 1})), 1.0);
  EXPECT_EQ(anisotropy_index(vec({5, 5, 5})), 0.0);
  EXPECT_EQ(anisotropy_index(vec({10, 1, 1})), 2.25);
  EXPECT_CAST_ERROR(anisotropy_index(vec({0, 0})), ErrorCode::AllZeroSpectrum);
}

TEST(Concentration, ClosedForms) {
  EXPECT_NEAR(information_concentration(Vector::Constant(7, 2.0)), 0.0, 1e-15);
  EXPECT_NEAR(information_concentration(vec({2, 1, 1})), -1.0 / 6.0, 1e-9);
  EXPECT_NEAR(information_concentration(vec({1, 0, 0})), -2.0 / 3.0, 1e-9);
  EXPECT_CAST_ERROR(information_concentration(vec({0, 0, 0})), ErrorCode::AllZeroSpectrum);
}

TEST(Concentration, DecreasesAsMassMovesToTop) {
  // sigma = [1 + t, 1 - t/3, 1 - t/3, 1 - t/3]: total fixed, mass shifts to sigma_1.
  double prev = information_concentration(Vector::Constant(4, 1.0));
  for (double t = 0.25; t <= 3.0; t += 0.25) {
    const double ic = information_concentration(vec({1 + t, 1 - t / 3, 1 - t / 3, 1 - t / 3}));
    EXPECT_LT(ic, prev);
    EXPECT_GE(ic, -0.75 - 1e-12);
    prev = ic;
  }
}

TEST(ConditionNumber, Cases) {
  EXPECT_EQ(condition_number(vec({4, 2})), 2.0);
  EXPECT_TRUE(std::isinf(condition_number(vec({1, 0}))));
  EXPECT_DOUBLE_EQ(condition_number(vec({1e4, 1, 1e-13})), 1e4);
  EXPECT_CAST_ERROR(condition_number(Vector(0)), ErrorCode::EmptySpectrum);
}

TEST(Metrics, ScaleInvariance) {
  const Vector s = vec({5, 3, 2, 0.5, 0.1, 0.01});
  const double c = 37.5;
  const Vector t = c * s;
  EXPECT_EQ(effective_rank(s, 1e-2), effective_rank(t, 1e-2));
  EXPECT_NEAR(transformation_entropy(s), transformation_entropy(t), 1e-10);
  EXPECT_NEAR(anisotropy_index(s), anisotropy_index(t), 1e-10);
  EXPECT_NEAR(information_concentration(s), information_concentration(t), 1e-10);
  const auto fs = spectral_decay_rate(s), ft = spectral_decay_rate(t);
  EXPECT_NEAR(fs.alpha, ft.alpha, 1e-10);
  EXPECT_NEAR(ft.beta - fs.beta, std::log(c), 1e-10);
  EXPECT_NEAR(condition_number(s), condition_number(t), 1e-8);
}

TEST(LayerMetrics, IdentityTransition) {
  const Matrix h = test::random_matrix(200, 64, 7);
  const auto pair = center(h, h);
  const LayerMetrics m = layer_metrics(Matrix::Identity(64, 64), pair, 3);
  EXPECT_EQ(m.layer_index, 3);
  EXPECT_EQ(m.effective_rank, 64);
  EXPECT_NEAR(m.spectral_decay_rate, 0.0, 1e-10);
  EXPECT_NEAR(m.transformation_entropy, std::log(64.0), 1e-10);
  EXPECT_NEAR(m.anisotropy_index, 0.0, 1e-10);
  EXPECT_NEAR(m.information_concentration, 0.0, 1e-10);
  EXPECT_LT(m.residual_norm, 1e-8);
  EXPECT_EQ(m.reconstruction_error, m.residual_norm);
  EXPECT_EQ(m.rank_ratio, 1.0);
  EXPECT_EQ(m.threshold_used, 1e-5);
}

TEST(LayerMetrics, RankThreeSynthetic) {
  SyntheticSpec spec;
  spec.num_layers = 2;
  spec.rows = 200;
  spec.ranks = {3};
  spec.decays = {0.3};
  const auto s = generate_synthetic(spec);
  const auto pair = center(s.bundle.layer(0), s.bundle.layer(1));
  const auto e = estimate_pinv(pair);
  const LayerMetrics m = layer_metrics(e.transform, pair, 0);
  EXPECT_EQ(m.effective_rank, 3);
  EXPECT_LT(m.information_concentration, 0.0);
  EXPECT_DOUBLE_EQ(m.rank_ratio, 3.0 / 16.0);
}

TEST(Summarize, RetainedValuesByDefault) {
  const Vector s = vec({2, 1, 1, 0, 0});
  const LayerMetrics kept = summarize_spectrum(s, 5, 0.1, 0);
  EXPECT_NEAR(kept.information_concentration, -1.0 / 6.0, 1e-12);
  EXPECT_DOUBLE_EQ(kept.anisotropy_index, 0.75);
  EXPECT_EQ(kept.effective_rank, 3);
  EXPECT_DOUBLE_EQ(kept.rank_ratio, 0.6);
  EXPECT_TRUE(std::isfinite(kept.condition_number));

  MetricOptions all;
  all.include_zeros = true;
  const LayerMetrics with_zeros = summarize_spectrum(s, 5, 0.1, 0, all);
  EXPECT_NEAR(with_zeros.information_concentration, information_concentration(s), 1e-15);
  EXPECT_DOUBLE_EQ(with_zeros.anisotropy_index, 2.5);
  EXPECT_DOUBLE_EQ(with_zeros.transformation_entropy, kept.transformation_entropy);
}

TEST(Summarize, MetricNameLookup) {
  const LayerMetrics m = summarize_spectrum(vec({4, 2, 1}), 3, 0.25, 1);
  EXPECT_EQ(metric_value(m, "effective_rank"), 3.0);
  EXPECT_EQ(metric_value(m, "residual_norm"), 0.25);
  EXPECT_EQ(metric_value(m, "condition_number"), 4.0);
  for (auto name : kMetricNames) EXPECT_TRUE(is_metric_name(name));
  EXPECT_FALSE(is_metric_name("gini"));
  EXPECT_CAST_ERROR(metric_value(m, "gini"), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace cast
