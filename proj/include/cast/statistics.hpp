#pragma once

// Resampling and sweep machinery: sequence-level bootstrap CIs, sample-size
// CV sweeps, threshold sweeps, RFF dimension sweeps and estimator comparison.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cast/bundle.hpp"
#include "cast/common.hpp"
#include "cast/error.hpp"
#include "cast/estimation.hpp"
#include "cast/kernel.hpp"
#include "cast/metrics.hpp"

namespace cast {

// --- percentile rule ------------------------------------------------------------

/// Linear interpolation at 1-based position 1 + (n - 1) q of sorted values.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of an empty sample");
  const double pos = static_cast<double>(sorted.size() - 1) * q;  // 0-based
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size() || frac == 0.0) return sorted[lo];
  const double a = sorted[lo], b = sorted[lo + 1];
  if (a == b) return a;
  return a + frac * (b - a);
}

/// Two-sided percentile interval at the given level, e.g. 0.95 -> q = 0.025, 0.975.
inline std::pair<double, double> percentile_interval(std::vector<double> samples, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "CI level must be in (0, 1)");
  std::sort(samples.begin(), samples.end());
  return {percentile_sorted(samples, (1.0 - level) / 2.0), percentile_sorted(samples, (1.0 + level) / 2.0)};
}

/// Population standard deviation over |mean|. 0 when every value is equal.
inline double coefficient_of_variation(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  if (sd == 0.0) return 0.0;
  if (mean == 0.0) return std::numeric_limits<double>::infinity();
  return sd / std::abs(mean);
}

// --- sequence resampling -----------------------------------------------------

/// n sequence indices drawn uniformly with replacement.
inline std::vector<Index> resample_sequences(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = pick(rng);
  return out;
}

/// `count` distinct sequence indices, sorted.
inline std::vector<Index> subsample_sequences(Index n, Index count, std::uint64_t seed) {
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<Index> out;
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

/// Stacks the row blocks of the picked sequences, in pick order, each copied
/// whole.
inline Matrix gather_sequences(const LayerMatrix& h, const std::vector<Index>& lengths, const std::vector<Index>& picks) {
  const auto offsets = sequence_offsets(lengths);
  Index total = 0;
  for (Index p : picks) total += lengths[static_cast<std::size_t>(p)];
  Matrix out(total, h.cols());
  Index row = 0;
  for (Index p : picks) {
    const Index len = lengths[static_cast<std::size_t>(p)];
    out.middleRows(row, len) = h.middleRows(offsets[static_cast<std::size_t>(p)], len).cast<double>();
    row += len;
  }
  return out;
}

inline void require_metric_names(const std::vector<std::string>& metrics) {
  if (metrics.empty()) throw Error(ErrorCode::InvalidArgument, "no metrics requested");
  for (const auto& m : metrics)
    if (!is_metric_name(m)) throw Error(ErrorCode::InvalidArgument, "unknown metric '" + m + "'");
}

inline void require_transition(const HiddenStateBundle& b, Index transition) {
  if (transition < 0 || transition >= b.num_transitions()) {
    throw Error(ErrorCode::InvalidArgument, "transition " + std::to_string(transition) + " outside [0, " +
                                                std::to_string(b.num_transitions() - 1) + "]");
  }
}

/// Metrics for one transition on an explicit pair of row sets.
inline LayerMetrics transition_metrics(const Matrix& h_in, const Matrix& h_out, int layer,
                                       const EstimatorConfig& est, const MetricOptions& mopt) {
  const CenteredPair pair = center(h_in, h_out);
  const TransformEstimate e = estimate(pair, est);
  return layer_metrics(e.transform, pair, layer, mopt);
}

// --- bootstrap ----------------------------------------------------------------

struct BootstrapResult {
  std::string metric_name;
  int layer_index = 0;
  double point_estimate = 0.0;
  std::vector<double> samples;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double level = 0.95;
  int replicates = 20;
};

struct BootstrapOptions {
  int replicates = 20;
  double level = 0.95;
  std::uint64_t seed = 42;
  EstimatorConfig estimator;
  MetricOptions metrics;
  unsigned threads = 1;
};

/// Sequence-block bootstrap for one transition: each replicate resamples the
/// bundle's sequences with replacement (same count), re-estimates T and
/// recomputes the metrics. Replicate r uses derive_seed(seed, r).
inline std::vector<BootstrapResult> bootstrap_ci(const HiddenStateBundle& bundle, Index transition,
                                                 const std::vector<std::string>& metrics,
                                                 const BootstrapOptions& opt = {}) {
  require_transition(bundle, transition);
  require_metric_names(metrics);
  if (opt.replicates < 2) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least 2 replicates");
  const auto& lengths = bundle.manifest.sequence_lengths;
  const auto n = static_cast<Index>(lengths.size());
  if (n < 2) throw Error(ErrorCode::InsufficientSequences, "bootstrap needs at least 2 sequences, bundle has " +
                                                                 std::to_string(n));
  const int layer = static_cast<int>(transition);
  const LayerMetrics point =
      transition_metrics(bundle.layer(transition), bundle.layer(transition + 1), layer, opt.estimator, opt.metrics);

  std::vector<LayerMetrics> reps(static_cast<std::size_t>(opt.replicates));
  const auto& h_in = bundle.layers[static_cast<std::size_t>(transition)];
  const auto& h_out = bundle.layers[static_cast<std::size_t>(transition + 1)];
  parallel_for(reps.size(), opt.threads, [&](std::size_t r) {
    const auto picks = resample_sequences(n, derive_seed(opt.seed, r));
    reps[r] = transition_metrics(gather_sequences(h_in, lengths, picks), gather_sequences(h_out, lengths, picks), layer,
                                 opt.estimator, opt.metrics);
  });

  std::vector<BootstrapResult> out;
  for (const auto& name : metrics) {
    BootstrapResult br;
    br.metric_name = name;
    br.layer_index = layer;
    br.level = opt.level;
    br.replicates = opt.replicates;
    br.point_estimate = metric_value(point, name);
    for (const auto& rep : reps) br.samples.push_back(metric_value(rep, name));
    std::tie(br.ci_low, br.ci_high) = percentile_interval(br.samples, opt.level);
    out.push_back(std::move(br));
  }
  return out;
}

// --- sweeps ---------------------------------------------------------------------

struct SweepCell {
  double estimate = 0.0;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  double cv = std::numeric_limits<double>::quiet_NaN();
};

/// One (layer, axis value) record holding every requested metric.
struct SweepRow {
  int layer = 0;
  double value = 0.0;
  std::map<std::string, SweepCell> cells;
};

struct SweepTable {
  std::string axis;  // threshold | sample_size | rff_dims
  std::vector<double> axis_values;
  std::vector<std::string> metrics;
  std::vector<SweepRow> rows;  // layer-major, then axis order
};

inline const std::vector<double>& default_threshold_grid() {
  static const std::vector<double> grid{1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  return grid;
}

inline const std::vector<Index>& default_rff_grid() {
  static const std::vector<Index> grid{50, 100, 200, 500, 1000, 2000, 5000, 10000};
  return grid;
}

/// Effective rank and rank ratio per (layer, threshold) from precomputed
/// spectra; cv holds each layer's variation across the threshold grid.
inline SweepTable threshold_sweep(const std::vector<Vector>& spectra, const std::vector<Index>& dims,
                                  const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw Error(ErrorCode::InvalidArgument, "empty threshold grid");
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    if (!(thresholds[k] > 0.0)) throw Error(ErrorCode::InvalidArgument, "thresholds must be positive");
    if (k > 0 && !(thresholds[k] > thresholds[k - 1])) {
      throw Error(ErrorCode::InvalidArgument, "thresholds must be strictly ascending");
    }
  }
  SweepTable t;
  t.axis = "threshold";
  t.axis_values = thresholds;
  t.metrics = {"effective_rank", "rank_ratio"};
  for (std::size_t layer = 0; layer < spectra.size(); ++layer) {
    std::vector<double> ranks, ratios;
    const std::size_t first = t.rows.size();
    for (double eps : thresholds) {
      SweepRow row;
      row.layer = static_cast<int>(layer);
      row.value = eps;
      const auto er = static_cast<double>(effective_rank(spectra[layer], eps));
      const double ratio = er / static_cast<double>(dims[layer]);
      row.cells["effective_rank"].estimate = er;
      row.cells["rank_ratio"].estimate = ratio;
      ranks.push_back(er);
      ratios.push_back(ratio);
      t.rows.push_back(std::move(row));
    }
    const double cv_rank = coefficient_of_variation(ranks), cv_ratio = coefficient_of_variation(ratios);
    for (std::size_t r = first; r < t.rows.size(); ++r) {
      t.rows[r].cells["effective_rank"].cv = cv_rank;
      t.rows[r].cells["rank_ratio"].cv = cv_ratio;
    }
  }
  return t;
}

/// One estimate and one SVD per transition, reused across the grid.
inline SweepTable threshold_sweep(const HiddenStateBundle& bundle, const std::vector<double>& thresholds,
                                  const EstimatorConfig& est = {}, unsigned threads = 1) {
  const auto transitions = static_cast<std::size_t>(bundle.num_transitions());
  std::vector<Vector> spectra(transitions);
  std::vector<Index> dims(transitions, bundle.dim());
  parallel_for(transitions, threads, [&](std::size_t i) {
    const CenteredPair pair = center(bundle.layer(static_cast<Index>(i)), bundle.layer(static_cast<Index>(i) + 1));
    spectra[i] = svd(estimate(pair, est).transform, false).singular_values;
  });
  return threshold_sweep(spectra, dims, thresholds);
}

struct SampleSweepOptions {
  int seeds_per_size = 5;
  std::uint64_t seed = 42;
  EstimatorConfig estimator;
  MetricOptions metrics;
  unsigned threads = 1;
};

/// For each size (in sequences), seeds_per_size independent subsets drawn
/// without replacement; estimate = mean across draws, cv = CV across draws.
inline SweepTable sample_size_sweep(const HiddenStateBundle& bundle, const std::vector<Index>& sizes,
                                    const std::vector<std::string>& metrics, const SampleSweepOptions& opt = {}) {
  require_metric_names(metrics);
  if (sizes.empty()) throw Error(ErrorCode::InvalidArgument, "empty size grid");
  if (opt.seeds_per_size < 1) throw Error(ErrorCode::InvalidArgument, "seeds_per_size must be positive");
  const auto& lengths = bundle.manifest.sequence_lengths;
  const auto n = static_cast<Index>(lengths.size());
  for (Index s : sizes) {
    if (s < 1) throw Error(ErrorCode::InvalidArgument, "sample sizes must be positive");
    if (s > n) {
      throw Error(ErrorCode::SizeTooLarge, "size " + std::to_string(s) + " exceeds the " + std::to_string(n) +
                                               " available sequences");
    }
  }
  const auto transitions = static_cast<std::size_t>(bundle.num_transitions());
  const auto seeds = static_cast<std::size_t>(opt.seeds_per_size);
  // results[size][draw][transition]
  std::vector<std::vector<std::vector<LayerMetrics>>> results(
      sizes.size(), std::vector<std::vector<LayerMetrics>>(seeds, std::vector<LayerMetrics>(transitions)));
  parallel_for(sizes.size() * seeds, opt.threads, [&](std::size_t job) {
    const std::size_t si = job / seeds, k = job % seeds;
    const auto picks = subsample_sequences(n, sizes[si], derive_seed(opt.seed, si, k));
    Matrix prev = gather_sequences(bundle.layers[0], lengths, picks);
    for (std::size_t i = 0; i < transitions; ++i) {
      Matrix next = gather_sequences(bundle.layers[i + 1], lengths, picks);
      results[si][k][i] = transition_metrics(prev, next, static_cast<int>(i), opt.estimator, opt.metrics);
      prev = std::move(next);
    }
  });

  SweepTable t;
  t.axis = "sample_size";
  for (Index s : sizes) t.axis_values.push_back(static_cast<double>(s));
  t.metrics = metrics;
  for (std::size_t i = 0; i < transitions; ++i) {
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      SweepRow row;
      row.layer = static_cast<int>(i);
      row.value = static_cast<double>(sizes[si]);
      for (const auto& name : metrics) {
        std::vector<double> v;
        for (std::size_t k = 0; k < seeds; ++k) v.push_back(metric_value(results[si][k][i], name));
        SweepCell cell;
        cell.estimate = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        cell.cv = coefficient_of_variation(v);
        row.cells[name] = cell;
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

struct RffSweepOptions {
  RffOptions rff;  // num_features is overridden by the grid
  std::uint64_t seed = 42;
  Index row_cap = 4096;
  MetricOptions metrics;
  unsigned threads = 1;
};

/// Six core metrics of T_RFF per (layer, D). gamma is fixed per transition
/// (median heuristic on the input); each D gets a fresh feature draw.
inline SweepTable rff_dim_sweep(const HiddenStateBundle& bundle, const std::vector<Index>& dims,
                                const RffSweepOptions& opt = {}) {
  if (dims.empty()) throw Error(ErrorCode::InvalidArgument, "empty RFF dimension grid");
  for (Index d : dims)
    if (d < 1) throw Error(ErrorCode::InvalidArgument, "RFF dimensions must be positive");
  const auto rows = stratified_rows(bundle.manifest.sequence_lengths, opt.row_cap, derive_seed(opt.seed, 0x5EED));
  const auto transitions = static_cast<std::size_t>(bundle.num_transitions());
  std::vector<Matrix> sampled(transitions + 1);
  for (std::size_t i = 0; i <= transitions; ++i) sampled[i] = select_rows(bundle.layer(static_cast<Index>(i)), rows);
  std::vector<double> gammas(transitions);
  for (std::size_t i = 0; i < transitions; ++i) {
    gammas[i] = opt.rff.gamma ? *opt.rff.gamma
                              : median_bandwidth(sampled[i], opt.rff.pair_sample, derive_seed(opt.seed, 0xBA, i));
  }

  std::vector<LayerMetrics> cells(dims.size() * transitions);
  parallel_for(cells.size(), opt.threads, [&](std::size_t job) {
    const std::size_t di = job / transitions, i = job % transitions;
    RffOptions ro = opt.rff;
    ro.num_features = dims[di];
    ro.gamma = gammas[i];
    cells[job] = rff_layer_metrics(sampled[i], sampled[i + 1], ro, derive_seed(opt.seed, 0xD1 + di, i),
                                   static_cast<int>(i), opt.metrics)
                     .metrics;
  });

  SweepTable t;
  t.axis = "rff_dims";
  for (Index d : dims) t.axis_values.push_back(static_cast<double>(d));
  t.metrics.assign(kCoreMetricNames.begin(), kCoreMetricNames.end());
  t.metrics.emplace_back("rank_ratio");
  for (std::size_t i = 0; i < transitions; ++i) {
    for (std::size_t di = 0; di < dims.size(); ++di) {
      SweepRow row;
      row.layer = static_cast<int>(i);
      row.value = static_cast<double>(dims[di]);
      for (const auto& name : t.metrics) row.cells[name].estimate = metric_value(cells[di * transitions + i], name);
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

// --- estimator comparison ----------------------------------------------------

struct ComparisonRow {
  std::string estimator;
  std::map<std::string, double> hyperparams;
  double reconstruction_error = 0.0;
  double condition_number = 0.0;
  Index effective_rank = 0;
  double decay_rate = 0.0;
  double seconds = 0.0;
  bool converged = true;
};

inline std::vector<EstimatorConfig> default_comparison_configs() {
  std::vector<EstimatorConfig> out(4);
  out[0].kind = Estimator::pinv;
  out[1].kind = Estimator::ridge;
  out[2].kind = Estimator::elastic_net;
  out[3].kind = Estimator::truncated_svd;
  return out;
}

/// Shared centering, then each estimator timed on estimation alone.
inline std::vector<ComparisonRow> compare_estimators(const HiddenStateBundle& bundle, Index transition,
                                                     const std::vector<EstimatorConfig>& configs,
                                                     const MetricOptions& mopt = {}) {
  require_transition(bundle, transition);
  if (configs.size() < 2) throw Error(ErrorCode::InvalidArgument, "comparison needs at least 2 estimators");
  const CenteredPair pair = center(bundle.layer(transition), bundle.layer(transition + 1));
  std::vector<ComparisonRow> out;
  for (const auto& cfg : configs) {
    const auto start = std::chrono::steady_clock::now();
    const TransformEstimate e = estimate(pair, cfg);
    const auto stop = std::chrono::steady_clock::now();
    const Spectrum sp = svd(e.transform, false);
    ComparisonRow row;
    row.estimator = cfg.label();
    row.hyperparams = e.hyperparams;
    row.reconstruction_error = e.fit_residual;
    row.condition_number = condition_number(sp);
    row.effective_rank = effective_rank(sp, mopt.threshold);
    row.decay_rate = spectral_decay_rate(sp).alpha;
    row.seconds = std::chrono::duration<double>(stop - start).count();
    row.converged = e.converged;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace cast
