#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cast/bundle.hpp"
#include "cast/common.hpp"
#include "cast/error.hpp"
#include "cast/linalg.hpp"
#include "cast/metrics.hpp"

namespace cast {

enum class KernelKind { rbf, laplacian, linear };

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::rbf: return "rbf";
    case KernelKind::laplacian: return "laplacian";
    case KernelKind::linear: return "linear";
  }
  return "unknown";
}

inline KernelKind kernel_from_string(const std::string& s) {
  if (s == "rbf") return KernelKind::rbf;
  if (s == "laplacian") return KernelKind::laplacian;
  if (s == "linear") return KernelKind::linear;
  throw Error(ErrorCode::InvalidArgument, "unknown kernel '" + s + "'");
}

// --- bandwidth ----------------------------------------------------------------

/// Median heuristic gamma = 1 / (2 * median(||x_a - x_b||)^2). Uses every
/// distinct row pair when there are at most `pair_sample` of them, otherwise
/// `pair_sample` uniformly drawn pairs with a != b.
inline double median_bandwidth(const Eigen::Ref<const Matrix>& h, Index pair_sample, std::uint64_t seed) {
  const Index m = h.rows();
  if (m < 2) throw Error(ErrorCode::InvalidArgument, "median heuristic needs at least 2 rows");
  if (pair_sample < 1) throw Error(ErrorCode::InvalidArgument, "pair_sample must be positive");
  std::vector<double> dist;
  const double total_pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  if (total_pairs <= static_cast<double>(pair_sample)) {
    dist.reserve(static_cast<std::size_t>(total_pairs));
    for (Index a = 0; a < m; ++a)
      for (Index b = a + 1; b < m; ++b) dist.push_back((h.row(a) - h.row(b)).norm());
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> first(0, m - 1), second(0, m - 2);
    dist.reserve(static_cast<std::size_t>(pair_sample));
    for (Index k = 0; k < pair_sample; ++k) {
      const Index a = first(rng);
      Index b = second(rng);
      if (b >= a) ++b;
      dist.push_back((h.row(a) - h.row(b)).norm());
    }
  }
  const std::size_t n = dist.size();
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n / 2), dist.end());
  double median = dist[n / 2];
  if (n % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n / 2));
    median = 0.5 * (median + lower);
  }
  if (!(median > 0.0)) throw Error(ErrorCode::DegenerateData, "median pairwise distance is zero");
  return 1.0 / (2.0 * median * median);
}

// --- random Fourier features --------------------------------------------------

struct RffParams {
  KernelKind kernel = KernelKind::rbf;
  double gamma = 1.0;
  Index num_features = 0;
  Matrix weights;  // D x d, row j is omega_j
  Vector phases;   // D, uniform on [0, 2 pi)
  std::uint64_t seed = 0;
};

/// rbf: omega entries ~ N(0, 2 gamma). laplacian: omega entries are
/// gamma * tan(pi (u - 1/2)), u ~ U(0,1), i.e. Cauchy with scale gamma.
/// Weights are drawn row-major, then phases, from one mt19937_64(seed).
inline RffParams sample_rff(KernelKind kernel, double gamma, Index num_features, Index dim, std::uint64_t seed) {
  if (num_features < 1 || dim < 1) throw Error(ErrorCode::InvalidParams, "RFF needs D >= 1 and d >= 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorCode::InvalidParams, "RFF gamma must be positive");
  if (kernel == KernelKind::linear) throw Error(ErrorCode::InvalidParams, "no random features for the linear kernel");

  RffParams p;
  p.kernel = kernel;
  p.gamma = gamma;
  p.num_features = num_features;
  p.seed = seed;
  p.weights.resize(num_features, dim);
  p.phases.resize(num_features);
  std::mt19937_64 rng(seed);
  if (kernel == KernelKind::rbf) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 * gamma));
    for (Index j = 0; j < num_features; ++j)
      for (Index k = 0; k < dim; ++k) p.weights(j, k) = normal(rng);
  } else {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Index j = 0; j < num_features; ++j) {
      for (Index k = 0; k < dim; ++k) {
        double u = unit(rng);
        while (u == 0.0) u = unit(rng);
        p.weights(j, k) = gamma * std::tan(std::numbers::pi * (u - 0.5));
      }
    }
  }
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (Index j = 0; j < num_features; ++j) p.phases(j) = phase(rng);
  return p;
}

/// Z[a, j] = sqrt(2/D) cos(omega_j . h_a + b_j).
inline Matrix rff_map(const Eigen::Ref<const Matrix>& h, const RffParams& p) {
  if (h.cols() != p.weights.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "rff_map: data has " + std::to_string(h.cols()) + " columns, weights expect " +
                                              std::to_string(p.weights.cols()));
  }
  const double scale = std::sqrt(2.0 / static_cast<double>(p.num_features));
  Matrix z = h * p.weights.transpose();
  z.rowwise() += p.phases.transpose();
  return z.unaryExpr([scale](double v) { return scale * std::cos(v); });
}

/// T_RFF = Z_out^T (Z_in^+)^T, so Z_in T_RFF^T is the least-squares
/// reconstruction of Z_out.
inline Matrix estimate_rff_transform(const Eigen::Ref<const Matrix>& z_in, const Eigen::Ref<const Matrix>& z_out,
                                     std::optional<double> rcond = std::nullopt) {
  if (z_in.rows() != z_out.rows()) throw Error(ErrorCode::ShapeMismatch, "RFF feature matrices differ in row count");
  return lstsq(z_in, z_out, rcond).transpose();
}

inline double kernel_residual_norm(const Eigen::Ref<const Matrix>& z_in, const Eigen::Ref<const Matrix>& z_out,
                                   const Eigen::Ref<const Matrix>& t_rff) {
  const double denom = z_out.norm();
  if (denom == 0.0) throw Error(ErrorCode::ZeroDenominator, "feature matrix has zero norm");
  return (z_out - z_in * t_rff.transpose()).norm() / denom;
}

/// Singular values of T_RFF (padded with zeros to D) and the kernel residual,
/// without forming the D x D matrix. With Z_in = U S V^T (thin),
/// T_RFF^T = V S^+ U^T Z_out, whose singular values are those of
/// S^+ U^T Z_out because V has orthonormal columns.
struct RffTransition {
  Vector singular_values;
  double residual = 0.0;
};

inline RffTransition rff_transition_spectrum(const Eigen::Ref<const Matrix>& z_in, const Eigen::Ref<const Matrix>& z_out,
                                             std::optional<double> rcond = std::nullopt) {
  if (z_in.rows() != z_out.rows()) throw Error(ErrorCode::ShapeMismatch, "RFF feature matrices differ in row count");
  const double denom = z_out.norm();
  if (denom == 0.0) throw Error(ErrorCode::ZeroDenominator, "feature matrix has zero norm");
  const Spectrum sp = svd(z_in, true);
  const Vector inv = detail::inverted_values(sp.singular_values, rcond.value_or(default_rcond(z_in.rows(), z_in.cols())),
                                             sp.size());
  Index kept = 0;
  while (kept < inv.size() && inv(kept) != 0.0) ++kept;
  const Matrix u = sp.left_vectors->leftCols(kept);
  const Matrix coeff = u.transpose() * z_out;  // kept x D
  RffTransition out;
  out.residual = (z_out - u * coeff).norm() / denom;
  const Matrix scaled = inv.head(kept).asDiagonal() * coeff;
  const Spectrum inner = svd(scaled, false);
  out.singular_values = Vector::Zero(z_in.cols());
  out.singular_values.head(inner.size()) = inner.singular_values;
  return out;
}

struct RffOptions {
  KernelKind kernel = KernelKind::rbf;
  Index num_features = 1000;
  Index pair_sample = 2000;
  std::optional<double> gamma;  // median heuristic on the transition input when unset
  bool center_features = false;
  std::optional<double> rcond;
};

struct RffLayerResult {
  LayerMetrics metrics;
  double gamma = 0.0;
  Vector singular_values;
};

/// Maps both sides of a transition through one shared feature draw, fits
/// T_RFF and summarizes its spectrum with the same metric code as the linear
/// path.
inline RffLayerResult rff_layer_metrics(const Eigen::Ref<const Matrix>& h_in, const Eigen::Ref<const Matrix>& h_out,
                                        const RffOptions& opt, std::uint64_t seed, int layer_index,
                                        const MetricOptions& metric_opt = {}) {
  RffLayerResult r;
  r.gamma = opt.gamma ? *opt.gamma : median_bandwidth(h_in, opt.pair_sample, derive_seed(seed, 1));
  const RffParams params = sample_rff(opt.kernel, r.gamma, opt.num_features, h_in.cols(), derive_seed(seed, 2));
  Matrix z_in = rff_map(h_in, params);
  Matrix z_out = rff_map(h_out, params);
  if (opt.center_features) {
    z_in.rowwise() -= z_in.colwise().mean();
    z_out.rowwise() -= z_out.colwise().mean();
  }
  const RffTransition t = rff_transition_spectrum(z_in, z_out, opt.rcond);
  r.metrics = summarize_spectrum(t.singular_values, opt.num_features, t.residual, layer_index, metric_opt);
  r.singular_values = t.singular_values;
  return r;
}

// --- exact kernels and CKA ----------------------------------------------------

struct KernelMatrix {
  Matrix values;
  KernelKind kernel = KernelKind::rbf;
  double gamma = 0.0;
};

/// Exact Gram matrix: exp(-gamma ||x-y||^2) for rbf, exp(-gamma ||x-y||_1)
/// for laplacian, x.y for linear. Symmetric by construction.
inline KernelMatrix kernel_matrix(const Eigen::Ref<const Matrix>& h, KernelKind kernel, double gamma) {
  require_finite(h, "kernel input");
  const Index m = h.rows();
  if (m < 2) throw Error(ErrorCode::InvalidArgument, "kernel matrix needs at least 2 rows");
  KernelMatrix k{Matrix(m, m), kernel, gamma};
  if (kernel == KernelKind::laplacian) {
    for (Index a = 0; a < m; ++a) {
      k.values(a, a) = 1.0;
      for (Index b = a + 1; b < m; ++b) {
        const double v = std::exp(-gamma * (h.row(a) - h.row(b)).cwiseAbs().sum());
        k.values(a, b) = v;
        k.values(b, a) = v;
      }
    }
    return k;
  }
  Matrix gram(m, m);
  gram.triangularView<Eigen::Upper>() = h * h.transpose();
  if (kernel == KernelKind::linear) {
    for (Index a = 0; a < m; ++a)
      for (Index b = a; b < m; ++b) k.values(a, b) = k.values(b, a) = gram(a, b);
    return k;
  }
  const Vector sq = h.rowwise().squaredNorm();
  for (Index a = 0; a < m; ++a) {
    k.values(a, a) = 1.0;
    for (Index b = a + 1; b < m; ++b) {
      const double d2 = std::max(0.0, sq(a) + sq(b) - 2.0 * gram(a, b));
      k.values(a, b) = k.values(b, a) = std::exp(-gamma * d2);
    }
  }
  return k;
}

/// C K C with C = I - 11^T/m, for symmetric K.
inline Matrix center_gram(const Eigen::Ref<const Matrix>& k) {
  const Vector means = k.rowwise().mean();
  const double grand = means.mean();
  Matrix c = k;
  c.colwise() -= means;
  c.rowwise() -= means.transpose();
  c.array() += grand;
  return c;
}

inline double cka(const Eigen::Ref<const Matrix>& ka, const Eigen::Ref<const Matrix>& kb) {
  if (ka.rows() != kb.rows() || ka.rows() != ka.cols() || kb.rows() != kb.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "cka needs two square kernel matrices of equal size");
  }
  const Matrix ca = center_gram(ka);
  const Matrix cb = center_gram(kb);
  const double saa = ca.squaredNorm(), sbb = cb.squaredNorm();
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error(ErrorCode::ZeroCenteredKernel, "centered kernel matrix is zero");
  // tr(A B) for symmetric A, B is the elementwise inner product.
  return ca.cwiseProduct(cb).sum() / std::sqrt(saa * sbb);
}

inline double cka(const KernelMatrix& a, const KernelMatrix& b) { return cka(a.values, b.values); }

/// Linear CKA on explicit features, equal to cka(Za Za^T, Zb Zb^T) but
/// computed in feature space: ||Za~^T Zb~||_F^2 / (||Za~^T Za~||_F ||Zb~^T Zb~||_F)
/// with column-centered Z~.
inline double cka_features(const Eigen::Ref<const Matrix>& za, const Eigen::Ref<const Matrix>& zb) {
  if (za.rows() != zb.rows()) throw Error(ErrorCode::ShapeMismatch, "cka_features: row counts differ");
  const Matrix ca = za.rowwise() - za.colwise().mean();
  const Matrix cb = zb.rowwise() - zb.colwise().mean();
  const double saa = (ca.transpose() * ca).norm(), sbb = (cb.transpose() * cb).norm();
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error(ErrorCode::ZeroCenteredKernel, "centered features are zero");
  return (ca.transpose() * cb).squaredNorm() / (saa * sbb);
}

enum class GammaPolicy { per_layer, global };

inline const char* to_string(GammaPolicy g) { return g == GammaPolicy::per_layer ? "per_layer" : "global"; }

inline GammaPolicy gamma_policy_from_string(const std::string& s) {
  if (s == "per_layer" || s == "per-layer") return GammaPolicy::per_layer;
  if (s == "global") return GammaPolicy::global;
  throw Error(ErrorCode::InvalidArgument, "unknown gamma policy '" + s + "'");
}

struct CkaOptions {
  KernelKind kernel = KernelKind::rbf;
  GammaPolicy gamma_policy = GammaPolicy::per_layer;
  std::optional<double> gamma;  // overrides the policy when set
  Index row_cap = 4096;         // <= 0 disables subsampling
  Index pair_sample = 2000;
  std::uint64_t seed = 42;
  bool use_rff = false;  // approximate Grams through random features
  Index rff_features = 1000;
  unsigned threads = 1;
};

/// L x L CKA similarity between layers. All layers use the same stratified
/// row sample. Entries are written by index, so the result does not depend on
/// scheduling.
inline Matrix cka_matrix(const HiddenStateBundle& bundle, const CkaOptions& opt) {
  const Index num_layers = bundle.num_layers();
  const auto rows = stratified_rows(bundle.manifest.sequence_lengths, opt.row_cap, derive_seed(opt.seed, 0xC0A));
  std::vector<Matrix> sampled(static_cast<std::size_t>(num_layers));
  for (Index i = 0; i < num_layers; ++i) sampled[static_cast<std::size_t>(i)] = select_rows(bundle.layer(i), rows);

  std::vector<double> gammas(static_cast<std::size_t>(num_layers), 0.0);
  if (opt.kernel != KernelKind::linear) {
    if (opt.gamma) {
      std::fill(gammas.begin(), gammas.end(), *opt.gamma);
    } else if (opt.gamma_policy == GammaPolicy::global) {
      Matrix stacked(static_cast<Index>(rows.size()) * num_layers, bundle.dim());
      for (Index i = 0; i < num_layers; ++i)
        stacked.middleRows(i * static_cast<Index>(rows.size()), static_cast<Index>(rows.size())) =
            sampled[static_cast<std::size_t>(i)];
      std::fill(gammas.begin(), gammas.end(), median_bandwidth(stacked, opt.pair_sample, derive_seed(opt.seed, 0xC0B)));
    } else {
      // One pair sample shared by every layer, like the row sample.
      for (Index i = 0; i < num_layers; ++i)
        gammas[static_cast<std::size_t>(i)] =
            median_bandwidth(sampled[static_cast<std::size_t>(i)], opt.pair_sample, derive_seed(opt.seed, 0xC0C));
    }
  }

  // Per-layer representation used in the pairwise pass: normalized centered
  // Gram (exact mode, stored as f32 to bound memory at O(L m^2)) or RFF
  // features (approximate mode).
  std::vector<Eigen::MatrixXf> grams;
  std::vector<Matrix> features;
  if (opt.use_rff) {
    if (opt.kernel == KernelKind::linear) throw Error(ErrorCode::InvalidParams, "RFF CKA needs rbf or laplacian");
    features.resize(static_cast<std::size_t>(num_layers));
    parallel_for(static_cast<std::size_t>(num_layers), opt.threads, [&](std::size_t i) {
      const auto p = sample_rff(opt.kernel, gammas[i], opt.rff_features, bundle.dim(), derive_seed(opt.seed, 0xC0D, i));
      Matrix z = rff_map(sampled[i], p);
      z.rowwise() -= z.colwise().mean();
      features[i] = std::move(z);
    });
  } else {
    grams.resize(static_cast<std::size_t>(num_layers));
    parallel_for(static_cast<std::size_t>(num_layers), opt.threads, [&](std::size_t i) {
      Matrix c = center_gram(kernel_matrix(sampled[i], opt.kernel, gammas[i]).values);
      const double norm = c.norm();
      if (!(norm > 0.0)) {
        throw Error(ErrorCode::ZeroCenteredKernel, "layer " + std::to_string(i) + " has a zero centered kernel");
      }
      grams[i] = (c / norm).cast<float>();
    });
  }

  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < num_layers; ++i)
    for (Index j = i + 1; j < num_layers; ++j) pairs.emplace_back(i, j);
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), opt.threads, [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    if (opt.use_rff) {
      values[p] = cka_features(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(j)]);
    } else {
      const auto& a = grams[static_cast<std::size_t>(i)];
      const auto& b = grams[static_cast<std::size_t>(j)];
      double acc = 0.0;
      for (Index c = 0; c < a.cols(); ++c) acc += a.col(c).cast<double>().dot(b.col(c).cast<double>());
      values[p] = acc;
    }
  });
  Matrix out = Matrix::Identity(num_layers, num_layers);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    out(i, j) = out(j, i) = values[p];
  }
  return out;
}

}  // namespace cast
