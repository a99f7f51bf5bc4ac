#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "cast/common.hpp"
#include "cast/error.hpp"
#include "cast/linalg.hpp"

namespace cast {

// Row-vector convention throughout: h_out ~= h_in * T + b, with T in R^{d x d}.

struct CenteredPair {
  Matrix in;
  Matrix out;
  Vector mean_in;
  Vector mean_out;
};

enum class Estimator { pinv, ridge, elastic_net, truncated_svd };

inline const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::pinv: return "pinv";
    case Estimator::ridge: return "ridge";
    case Estimator::elastic_net: return "elastic_net";
    case Estimator::truncated_svd: return "truncated_svd";
  }
  return "unknown";
}

inline Estimator estimator_from_string(const std::string& s) {
  if (s == "pinv") return Estimator::pinv;
  if (s == "ridge") return Estimator::ridge;
  if (s == "elastic_net" || s == "enet") return Estimator::elastic_net;
  if (s == "truncated_svd" || s == "tsvd") return Estimator::truncated_svd;
  throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + s + "'");
}

struct TransformEstimate {
  Matrix transform;
  Vector bias;
  Estimator estimator = Estimator::pinv;
  std::map<std::string, double> hyperparams;
  double fit_residual = 0.0;
  // Only meaningful for elastic_net.
  bool converged = true;
  int iterations = 0;
  std::vector<double> objective_history;
};

inline CenteredPair center(const Eigen::Ref<const Matrix>& h_in, const Eigen::Ref<const Matrix>& h_out) {
  if (h_in.rows() != h_out.rows() || h_in.cols() != h_out.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "center: input is " + std::to_string(h_in.rows()) + "x" +
                                              std::to_string(h_in.cols()) + ", output is " +
                                              std::to_string(h_out.rows()) + "x" + std::to_string(h_out.cols()));
  }
  require_finite(h_in, "input representations");
  require_finite(h_out, "output representations");
  if (h_in.rows() < h_in.cols()) {
    warn("fewer rows (" + std::to_string(h_in.rows()) + ") than hidden dim (" + std::to_string(h_in.cols()) +
         "); the transformation estimate is not unique");
  }
  CenteredPair p;
  p.mean_in = h_in.colwise().mean().transpose();
  p.mean_out = h_out.colwise().mean().transpose();
  p.in = h_in.rowwise() - p.mean_in.transpose();
  p.out = h_out.rowwise() - p.mean_out.transpose();
  return p;
}

/// ||out - in * T||_F / ||out||_F on the centered pair.
inline double residual_norm(const CenteredPair& pair, const Eigen::Ref<const Matrix>& t) {
  if (t.rows() != pair.in.cols() || t.cols() != pair.out.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "residual_norm: transform shape does not match the pair");
  }
  const double denom = pair.out.norm();
  if (denom == 0.0) throw Error(ErrorCode::ZeroDenominator, "centered output has zero Frobenius norm");
  return (pair.out - pair.in * t).norm() / denom;
}

/// Diagnostic variant on uncentered data using the affine reconstruction
/// in * T + 1 b^T.
inline double residual_norm_uncentered(const Eigen::Ref<const Matrix>& h_in, const Eigen::Ref<const Matrix>& h_out,
                                       const TransformEstimate& est) {
  const double denom = h_out.norm();
  if (denom == 0.0) throw Error(ErrorCode::ZeroDenominator, "output has zero Frobenius norm");
  const Matrix recon = (h_in * est.transform).rowwise() + est.bias.transpose();
  return (h_out - recon).norm() / denom;
}

namespace detail {

inline TransformEstimate finish(const CenteredPair& pair, Matrix t, Estimator kind) {
  if (!t.allFinite()) throw Error(ErrorCode::SolveFailure, std::string(to_string(kind)) + " produced NaN/Inf");
  TransformEstimate e;
  e.estimator = kind;
  e.bias = pair.mean_out - t.transpose() * pair.mean_in;
  e.transform = std::move(t);
  e.fit_residual = residual_norm(pair, e.transform);
  return e;
}

}  // namespace detail

inline TransformEstimate estimate_pinv(const CenteredPair& pair, std::optional<double> rcond = std::nullopt) {
  auto e = detail::finish(pair, lstsq(pair.in, pair.out, rcond), Estimator::pinv);
  e.hyperparams["rcond"] = rcond.value_or(default_rcond(pair.in.rows(), pair.in.cols()));
  return e;
}

/// Closed-form ridge, solved as the augmented least-squares system
/// [in; sqrt(lambda) I] T = [out; 0] with Householder QR.
inline TransformEstimate estimate_ridge(const CenteredPair& pair, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::InvalidArgument, "ridge lambda must be positive and finite");
  }
  const Index m = pair.in.rows(), d = pair.in.cols(), k = pair.out.cols();
  Matrix a(m + d, d);
  a.topRows(m) = pair.in;
  a.bottomRows(d) = std::sqrt(lambda) * Matrix::Identity(d, d);
  Matrix b = Matrix::Zero(m + d, k);
  b.topRows(m) = pair.out;
  Eigen::HouseholderQR<Matrix> qr(a);
  auto e = detail::finish(pair, qr.solve(b), Estimator::ridge);
  e.hyperparams["lambda"] = lambda;
  return e;
}

struct ElasticNetOptions {
  double l1 = 1e-3;
  double l2 = 1e-3;
  int max_iter = 500;
  double tol = 1e-6;
  bool record_objective = false;
};

inline double elastic_net_objective(const CenteredPair& pair, const Eigen::Ref<const Matrix>& t, double l1,
                                    double l2) {
  return 0.5 * (pair.out - pair.in * t).squaredNorm() + l1 * t.cwiseAbs().sum() + 0.5 * l2 * t.squaredNorm();
}

/// Proximal gradient (ISTA) on
///   0.5 ||out - in T||_F^2 + l1 ||T||_1 + 0.5 l2 ||T||_F^2
/// with fixed step 1/L, L = lambda_max(in^T in) + l2. The problem separates by
/// output column; the matrix update below advances every column at once.
/// Stops when ||T_{k+1} - T_k||_F <= tol * ||T_{k+1}||_F. Non-convergence is
/// reported through `converged`, not thrown.
inline TransformEstimate estimate_elastic_net(const CenteredPair& pair, const ElasticNetOptions& opt = {}) {
  if (!(opt.l1 >= 0.0) || !(opt.l2 >= 0.0) || !(opt.l1 + opt.l2 > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "elastic net needs l1, l2 >= 0 with l1 + l2 > 0");
  }
  if (opt.max_iter < 1 || !(opt.tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "bad elastic net stopping rule");

  const Matrix gram = pair.in.transpose() * pair.in;
  const Matrix cross = pair.in.transpose() * pair.out;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = (gram.size() ? std::max(0.0, eig.eigenvalues().maxCoeff()) : 0.0) + opt.l2;
  if (!(lipschitz > 0.0)) throw Error(ErrorCode::SolveFailure, "elastic net: zero Lipschitz constant");
  const double step = 1.0 / lipschitz;
  const double shrink = opt.l1 * step;

  Matrix t = Matrix::Zero(pair.in.cols(), pair.out.cols());
  std::vector<double> history;
  if (opt.record_objective) history.push_back(elastic_net_objective(pair, t, opt.l1, opt.l2));

  bool converged = false;
  int iter = 0;
  for (; iter < opt.max_iter;) {
    ++iter;
    const Matrix grad = gram * t - cross + opt.l2 * t;
    Matrix next = t - step * grad;
    next = next.unaryExpr([shrink](double v) {
      return v > shrink ? v - shrink : (v < -shrink ? v + shrink : 0.0);
    });
    const double change = (next - t).norm();
    const double scale = next.norm();
    t = std::move(next);
    if (opt.record_objective) history.push_back(elastic_net_objective(pair, t, opt.l1, opt.l2));
    if (change <= opt.tol * scale || (change == 0.0 && scale == 0.0)) {
      converged = true;
      break;
    }
  }
  auto e = detail::finish(pair, std::move(t), Estimator::elastic_net);
  e.hyperparams = {{"l1", opt.l1}, {"l2", opt.l2}, {"max_iter", opt.max_iter}, {"tol", opt.tol}};
  e.converged = converged;
  e.iterations = iter;
  e.objective_history = std::move(history);
  if (!converged) {
    warn("elastic net stopped at max_iter=" + std::to_string(opt.max_iter) + " before reaching tol");
  }
  return e;
}

/// Number of singular values of `a` above eps * sigma_1.
inline Index numerical_rank(const Eigen::Ref<const Matrix>& a, double eps) {
  const Spectrum sp = svd(a, false);
  if (sp.empty() || sp.largest() == 0.0) return 0;
  Index count = 0;
  for (Index j = 0; j < sp.size(); ++j)
    if (sp.singular_values(j) > eps * sp.largest()) ++count;
  return count;
}

inline constexpr double kTruncatedSvdRankThreshold = 1e-5;

/// T = pinv_k(in) * out, keeping the top-k singular triplets of the input.
/// Default k is the effective rank of the input at eps = 1e-5.
inline TransformEstimate estimate_truncated_svd(const CenteredPair& pair, std::optional<Index> k = std::nullopt,
                                                std::optional<double> rcond = std::nullopt) {
  const Index d = pair.in.cols();
  const Index keep = k ? *k : std::max<Index>(1, numerical_rank(pair.in, kTruncatedSvdRankThreshold));
  if (keep < 1 || keep > d) {
    throw Error(ErrorCode::InvalidK, "k=" + std::to_string(keep) + " outside [1, " + std::to_string(d) + "]");
  }
  auto e = detail::finish(pair, lstsq_truncated(pair.in, pair.out, keep, rcond), Estimator::truncated_svd);
  e.hyperparams["k"] = static_cast<double>(keep);
  return e;
}

/// One estimator with its hyperparameters, as used by the CLI and the
/// comparison table.
struct EstimatorConfig {
  Estimator kind = Estimator::pinv;
  std::optional<double> rcond;
  double ridge_lambda = 1e-3;
  ElasticNetOptions elastic_net;
  std::optional<Index> k;

  std::string label() const { return to_string(kind); }
};

inline TransformEstimate estimate(const CenteredPair& pair, const EstimatorConfig& cfg) {
  switch (cfg.kind) {
    case Estimator::pinv: return estimate_pinv(pair, cfg.rcond);
    case Estimator::ridge: return estimate_ridge(pair, cfg.ridge_lambda);
    case Estimator::elastic_net: return estimate_elastic_net(pair, cfg.elastic_net);
    case Estimator::truncated_svd: return estimate_truncated_svd(pair, cfg.k, cfg.rcond);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown estimator");
}

}  // namespace cast
