#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "cast/common.hpp"
#include "cast/error.hpp"
#include "cast/estimation.hpp"
#include "cast/linalg.hpp"

namespace cast {

inline constexpr double kDefaultRankThreshold = 1e-5;
/// Relative cutoff below which a singular value is treated as numerically zero.
inline constexpr double kPositivityCutoff = 1e-12;

// The scalar metrics below evaluate their formula on exactly the values they
// are given (descending order assumed). Dropping numerically-zero values is a
// separate step, see retained_values() and MetricOptions::include_zeros.

inline Index effective_rank(const Vector& sv, double eps) {
  if (sv.size() == 0) throw Error(ErrorCode::EmptySpectrum, "effective_rank of an empty spectrum");
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "effective_rank threshold must be positive");
  const double top = sv(0);
  if (top <= 0.0) return 0;
  Index count = 0;
  for (Index j = 0; j < sv.size(); ++j)
    if (sv(j) > eps * top) ++count;
  return count;
}

inline Vector retained_values(const Vector& sv, double cutoff = kPositivityCutoff) {
  if (sv.size() == 0 || sv(0) <= 0.0) return Vector(0);
  Index n = 0;
  while (n < sv.size() && sv(n) > cutoff * sv(0)) ++n;
  return sv.head(n);
}

struct DecayFit {
  double alpha = 0.0;  // decay rate: log(sigma_j) ~ -alpha * j + beta
  double beta = 0.0;
};

/// OLS fit of log(sigma_j) = -alpha * j + beta over j = 1..p', where p'
/// counts the values above positivity * sigma_1.
inline DecayFit spectral_decay_rate(const Vector& sv, double positivity = kPositivityCutoff) {
  const Vector kept = retained_values(sv, positivity);
  const Index n = kept.size();
  if (n < 2) {
    throw Error(ErrorCode::InsufficientPoints,
                "spectral decay fit needs at least 2 positive singular values, have " + std::to_string(n));
  }
  double mean_x = 0.0, mean_y = 0.0;
  for (Index j = 0; j < n; ++j) {
    mean_x += static_cast<double>(j + 1);
    mean_y += std::log(kept(j));
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (Index j = 0; j < n; ++j) {
    const double dx = static_cast<double>(j + 1) - mean_x;
    sxy += dx * (std::log(kept(j)) - mean_y);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  return {-slope, mean_y - slope * mean_x};
}

/// Shannon entropy (nats) of p_j = sigma_j / sum(sigma).
inline double transformation_entropy(const Vector& sv) {
  const double total = sv.sum();
  if (sv.size() == 0 || !(total > 0.0)) throw Error(ErrorCode::AllZeroSpectrum, "entropy of an all-zero spectrum");
  double h = 0.0;
  for (Index j = 0; j < sv.size(); ++j) {
    const double p = sv(j) / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

/// (sigma_max - sigma_min) / sigma_mean.
inline double anisotropy_index(const Vector& sv) {
  if (sv.size() == 0 || !(sv.mean() > 0.0)) {
    throw Error(ErrorCode::AllZeroSpectrum, "anisotropy of an all-zero spectrum");
  }
  return (sv.maxCoeff() - sv.minCoeff()) / sv.mean();
}

/// Gini-style concentration 2 sum(j sigma_j) / (n sum(sigma)) - (n+1)/n with
/// j = 1..n over the values as given. On descending input this lies in
/// [-(n-1)/n, 0], more negative meaning more concentrated.
inline double information_concentration(const Vector& sv) {
  const double total = sv.sum();
  const auto n = static_cast<double>(sv.size());
  if (sv.size() == 0 || !(total > 0.0)) {
    throw Error(ErrorCode::AllZeroSpectrum, "information concentration of an all-zero spectrum");
  }
  double weighted = 0.0;
  for (Index j = 0; j < sv.size(); ++j) weighted += static_cast<double>(j + 1) * sv(j);
  return 2.0 * weighted / (n * total) - (n + 1.0) / n;
}

/// sigma_1 / smallest retained value; +inf when fewer than two values survive
/// the positivity cutoff.
inline double condition_number(const Vector& sv, double positivity = kPositivityCutoff) {
  if (sv.size() == 0) throw Error(ErrorCode::EmptySpectrum, "condition number of an empty spectrum");
  const Vector kept = retained_values(sv, positivity);
  if (kept.size() < 2) return std::numeric_limits<double>::infinity();
  return kept(0) / kept(kept.size() - 1);
}

// Spectrum overloads.
inline Index effective_rank(const Spectrum& s, double eps) { return effective_rank(s.singular_values, eps); }
inline DecayFit spectral_decay_rate(const Spectrum& s) { return spectral_decay_rate(s.singular_values); }
inline double transformation_entropy(const Spectrum& s) { return transformation_entropy(s.singular_values); }
inline double anisotropy_index(const Spectrum& s) { return anisotropy_index(s.singular_values); }
inline double information_concentration(const Spectrum& s) { return information_concentration(s.singular_values); }
inline double condition_number(const Spectrum& s, double positivity = kPositivityCutoff) {
  return condition_number(s.singular_values, positivity);
}

// ---------------------------------------------------------------------------

struct MetricOptions {
  double threshold = kDefaultRankThreshold;
  /// Evaluate TE / AI / IC over every singular value, trailing zeros included.
  bool include_zeros = false;
};

struct LayerMetrics {
  int layer_index = 0;
  Index effective_rank = 0;
  double spectral_decay_rate = 0.0;
  double decay_intercept = 0.0;
  double transformation_entropy = 0.0;
  double anisotropy_index = 0.0;
  double information_concentration = 0.0;
  double residual_norm = 0.0;
  double condition_number = 0.0;
  double reconstruction_error = 0.0;
  double rank_ratio = 0.0;
  double threshold_used = kDefaultRankThreshold;
};

inline constexpr std::array<std::string_view, 9> kMetricNames = {
    "effective_rank",  "spectral_decay_rate", "transformation_entropy",
    "anisotropy_index", "information_concentration", "residual_norm",
    "condition_number", "reconstruction_error", "rank_ratio"};

inline constexpr std::array<std::string_view, 6> kCoreMetricNames = {
    "effective_rank", "spectral_decay_rate", "transformation_entropy",
    "anisotropy_index", "information_concentration", "residual_norm"};

inline bool is_metric_name(std::string_view name) {
  for (auto n : kMetricNames)
    if (n == name) return true;
  return false;
}

inline double metric_value(const LayerMetrics& m, std::string_view name) {
  if (name == "effective_rank") return static_cast<double>(m.effective_rank);
  if (name == "spectral_decay_rate") return m.spectral_decay_rate;
  if (name == "transformation_entropy") return m.transformation_entropy;
  if (name == "anisotropy_index") return m.anisotropy_index;
  if (name == "information_concentration") return m.information_concentration;
  if (name == "residual_norm") return m.residual_norm;
  if (name == "condition_number") return m.condition_number;
  if (name == "reconstruction_error") return m.reconstruction_error;
  if (name == "rank_ratio") return m.rank_ratio;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

/// All metrics from a descending singular-value list. `dim` is the side of the
/// (square) transformation, used for rank_ratio. The linear and kernel paths
/// both go through here.
inline LayerMetrics summarize_spectrum(const Vector& sv, Index dim, double residual, int layer_index,
                                       const MetricOptions& opt = {}) {
  LayerMetrics m;
  m.layer_index = layer_index;
  m.threshold_used = opt.threshold;
  m.effective_rank = effective_rank(sv, opt.threshold);
  m.rank_ratio = static_cast<double>(m.effective_rank) / static_cast<double>(dim);
  const DecayFit fit = spectral_decay_rate(sv);
  m.spectral_decay_rate = fit.alpha;
  m.decay_intercept = fit.beta;
  const Vector values = opt.include_zeros ? sv : retained_values(sv);
  m.transformation_entropy = transformation_entropy(values);
  m.anisotropy_index = anisotropy_index(values);
  m.information_concentration = information_concentration(values);
  m.condition_number = condition_number(sv);
  m.residual_norm = residual;
  m.reconstruction_error = residual;
  return m;
}

inline LayerMetrics layer_metrics(const Eigen::Ref<const Matrix>& t, const CenteredPair& pair, int layer_index,
                                  const MetricOptions& opt = {}) {
  const Spectrum sp = svd(t, false);
  return summarize_spectrum(sp.singular_values, t.rows(), residual_norm(pair, t), layer_index, opt);
}

}  // namespace cast
