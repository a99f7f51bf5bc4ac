#pragma once

// End-to-end analysis: per-transition linear and RFF metrics, the layer CKA
// matrix and its phase partition, plus the report/plot-data writers the CLI
// uses.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cast/bundle.hpp"
#include "cast/estimation.hpp"
#include "cast/kernel.hpp"
#include "cast/metrics.hpp"
#include "cast/phases.hpp"
#include "cast/report.hpp"
#include "cast/version.hpp"

namespace cast {

/// Every knob of an `analyze` run. Defaults follow the reference setup:
/// pinv estimator, eps = 1e-5, rbf kernel, D = 1000 random features, 4096
/// CKA rows, seed 42.
struct AnalysisConfig {
  std::string bundle_path;
  std::string estimator = "pinv";
  std::optional<double> rcond;
  double threshold = kDefaultRankThreshold;
  std::string kernel = "rbf";
  Index rff_dims = 1000;
  Index cka_row_cap = 4096;
  std::uint64_t seed = 42;
  std::string output_dir = "cast_out";
  std::vector<std::string> report_formats{"json"};
  bool percent_rn = false;
  bool deterministic = false;
  std::string gamma_policy = "per_layer";
  bool include_zeros = false;
  double ridge_lambda = 1e-3;
  double enet_l1 = 1e-3;
  double enet_l2 = 1e-3;
  int enet_max_iter = 500;
  double enet_tol = 1e-6;
  std::optional<Index> tsvd_k;
  Index phases = 3;
  bool rff_center = false;

  bool operator==(const AnalysisConfig&) const = default;
};

inline ordered_json config_to_json(const AnalysisConfig& c) {
  ordered_json j;
  j["bundle_path"] = c.bundle_path;
  j["estimator"] = c.estimator;
  j["rcond"] = c.rcond ? ordered_json(*c.rcond) : ordered_json(nullptr);
  j["threshold"] = c.threshold;
  j["kernel"] = c.kernel;
  j["rff_dims"] = c.rff_dims;
  j["cka_row_cap"] = c.cka_row_cap;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["report_formats"] = c.report_formats;
  j["percent_rn"] = c.percent_rn;
  j["deterministic"] = c.deterministic;
  j["gamma_policy"] = c.gamma_policy;
  j["include_zeros"] = c.include_zeros;
  j["ridge_lambda"] = c.ridge_lambda;
  j["enet_l1"] = c.enet_l1;
  j["enet_l2"] = c.enet_l2;
  j["enet_max_iter"] = c.enet_max_iter;
  j["enet_tol"] = c.enet_tol;
  j["tsvd_k"] = c.tsvd_k ? ordered_json(*c.tsvd_k) : ordered_json(nullptr);
  j["phases"] = c.phases;
  j["rff_center"] = c.rff_center;
  return j;
}

inline AnalysisConfig config_from_json(const nlohmann::json& j) {
  AnalysisConfig c;
  c.bundle_path = j.at("bundle_path").get<std::string>();
  c.estimator = j.at("estimator").get<std::string>();
  if (!j.at("rcond").is_null()) c.rcond = j.at("rcond").get<double>();
  c.threshold = j.at("threshold").get<double>();
  c.kernel = j.at("kernel").get<std::string>();
  c.rff_dims = j.at("rff_dims").get<Index>();
  c.cka_row_cap = j.at("cka_row_cap").get<Index>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.report_formats = j.at("report_formats").get<std::vector<std::string>>();
  c.percent_rn = j.at("percent_rn").get<bool>();
  c.deterministic = j.at("deterministic").get<bool>();
  c.gamma_policy = j.at("gamma_policy").get<std::string>();
  c.include_zeros = j.at("include_zeros").get<bool>();
  c.ridge_lambda = j.at("ridge_lambda").get<double>();
  c.enet_l1 = j.at("enet_l1").get<double>();
  c.enet_l2 = j.at("enet_l2").get<double>();
  c.enet_max_iter = j.at("enet_max_iter").get<int>();
  c.enet_tol = j.at("enet_tol").get<double>();
  if (!j.at("tsvd_k").is_null()) c.tsvd_k = j.at("tsvd_k").get<Index>();
  c.phases = j.at("phases").get<Index>();
  c.rff_center = j.at("rff_center").get<bool>();
  return c;
}

inline void validate_config(const AnalysisConfig& c) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidArgument, why); };
  (void)estimator_from_string(c.estimator);
  const KernelKind k = kernel_from_string(c.kernel);
  if (k == KernelKind::linear) fail("--kernel must be rbf or laplacian");
  (void)gamma_policy_from_string(c.gamma_policy);
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) fail("--threshold must be in (0, 1)");
  if (c.rcond && !(*c.rcond >= 0.0)) fail("--rcond must be >= 0");
  if (c.rff_dims < 1) fail("--rff-dims must be positive");
  if (c.cka_row_cap != 0 && c.cka_row_cap < 2) fail("--cka-row-cap must be 0 (no cap) or at least 2");
  if (!(c.ridge_lambda > 0.0)) fail("--ridge-lambda must be positive");
  if (!(c.enet_l1 >= 0.0) || !(c.enet_l2 >= 0.0) || !(c.enet_l1 + c.enet_l2 > 0.0)) fail("bad elastic net penalties");
  if (c.enet_max_iter < 1 || !(c.enet_tol > 0.0)) fail("bad elastic net stopping rule");
  if (c.tsvd_k && *c.tsvd_k < 1) fail("--k must be positive");
  if (c.phases < 2 || c.phases > kMaxPhases) fail("--phases must be in [2, 4]");
  for (const auto& f : c.report_formats)
    if (f != "json" && f != "csv") fail("unknown report format '" + f + "'");
  if (c.report_formats.empty()) fail("at least one report format is required");
}

inline EstimatorConfig estimator_config(const AnalysisConfig& c) {
  EstimatorConfig e;
  e.kind = estimator_from_string(c.estimator);
  e.rcond = c.rcond;
  e.ridge_lambda = c.ridge_lambda;
  e.elastic_net.l1 = c.enet_l1;
  e.elastic_net.l2 = c.enet_l2;
  e.elastic_net.max_iter = c.enet_max_iter;
  e.elastic_net.tol = c.enet_tol;
  e.k = c.tsvd_k;
  return e;
}

inline MetricOptions metric_options(const AnalysisConfig& c) { return {c.threshold, c.include_zeros}; }

/// Worker count: 1 under --deterministic, otherwise CAST_THREADS / hardware.
inline unsigned analysis_threads(const AnalysisConfig& c) { return c.deterministic ? 1u : default_threads(); }

struct TransitionResult {
  LayerMetrics metrics;
  Vector singular_values;
  std::map<std::string, double> hyperparams;
  bool converged = true;
};

struct RffTransitionResult {
  LayerMetrics metrics;
  Vector singular_values;
  double gamma = 0.0;
};

struct AnalysisReport {
  AnalysisConfig config;
  std::string model_id;
  Index num_layers = 0;
  Index hidden_dim = 0;
  Index num_rows = 0;
  std::string bundle_checksum;
  std::string timestamp;  // empty under --deterministic
  std::vector<TransitionResult> linear;
  std::vector<RffTransitionResult> rff;
  Matrix cka;
  std::optional<PhasePartition> partition;
};

inline AnalysisReport run_analysis(const HiddenStateBundle& bundle, const AnalysisConfig& config) {
  validate_config(config);
  validate_bundle(bundle);
  const unsigned threads = analysis_threads(config);
  const EstimatorConfig est = estimator_config(config);
  const MetricOptions mopt = metric_options(config);
  const KernelKind kernel = kernel_from_string(config.kernel);
  const auto transitions = static_cast<std::size_t>(bundle.num_transitions());

  AnalysisReport r;
  r.config = config;
  r.model_id = bundle.manifest.model_id;
  r.num_layers = bundle.num_layers();
  r.hidden_dim = bundle.dim();
  r.num_rows = bundle.rows();
  r.bundle_checksum = hex64(bundle_checksum(bundle));
  if (!config.deterministic) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    r.timestamp = buf;
  }

  r.linear.resize(transitions);
  parallel_for(transitions, threads, [&](std::size_t i) {
    const auto idx = static_cast<Index>(i);
    const CenteredPair pair = center(bundle.layer(idx), bundle.layer(idx + 1));
    const TransformEstimate e = estimate(pair, est);
    const Spectrum sp = svd(e.transform, false);
    TransitionResult& out = r.linear[i];
    out.metrics = summarize_spectrum(sp.singular_values, e.transform.rows(), e.fit_residual, static_cast<int>(i), mopt);
    out.singular_values = sp.singular_values;
    out.hyperparams = e.hyperparams;
    out.converged = e.converged;
  });

  // Kernel transitions work on the same capped, sequence-stratified rows as CKA.
  const auto rows = stratified_rows(bundle.manifest.sequence_lengths, config.cka_row_cap, derive_seed(config.seed, 0xF0));
  RffOptions ropt;
  ropt.kernel = kernel;
  ropt.num_features = config.rff_dims;
  ropt.center_features = config.rff_center;
  ropt.rcond = config.rcond;
  r.rff.resize(transitions);
  parallel_for(transitions, threads, [&](std::size_t i) {
    const auto idx = static_cast<Index>(i);
    const auto res = rff_layer_metrics(select_rows(bundle.layer(idx), rows), select_rows(bundle.layer(idx + 1), rows),
                                       ropt, derive_seed(config.seed, 0xF1, i), static_cast<int>(i), mopt);
    r.rff[i] = {res.metrics, res.singular_values, res.gamma};
  });

  CkaOptions copt;
  copt.kernel = kernel;
  copt.gamma_policy = gamma_policy_from_string(config.gamma_policy);
  copt.row_cap = config.cka_row_cap;
  copt.seed = config.seed;
  copt.threads = threads;
  r.cka = cka_matrix(bundle, copt);

  if (bundle.num_layers() >= config.phases) {
    r.partition = segment_phases(r.cka, config.phases);
  } else {
    warn("bundle has " + std::to_string(bundle.num_layers()) + " layers; skipping " + std::to_string(config.phases) +
         "-phase segmentation");
  }
  return r;
}

inline ordered_json report_to_json(const AnalysisReport& r) {
  const bool pct = r.config.percent_rn;
  ordered_json j;
  ordered_json prov;
  prov["tool"] = "cast";
  prov["version"] = kVersion;
  prov["eigen_version"] = eigen_version();
  prov["timestamp"] = r.timestamp.empty() ? ordered_json(nullptr) : ordered_json(r.timestamp);
  prov["bundle_checksum"] = r.bundle_checksum;
  prov["model_id"] = r.model_id;
  prov["num_layers"] = r.num_layers;
  prov["hidden_dim"] = r.hidden_dim;
  prov["num_rows"] = r.num_rows;
  prov["residual_units"] = pct ? "percent" : "fraction";
  prov["config"] = config_to_json(r.config);
  j["provenance"] = std::move(prov);

  ordered_json lin = ordered_json::array();
  for (const auto& t : r.linear) {
    ordered_json e = metrics_to_json(t.metrics, pct);
    ordered_json hp;
    for (const auto& [k, v] : t.hyperparams) hp[k] = json_number(v);
    e["estimator"] = r.config.estimator;
    e["hyperparams"] = std::move(hp);
    e["converged"] = t.converged;
    e["singular_values"] = vector_to_json(t.singular_values);
    lin.push_back(std::move(e));
  }
  j["linear"] = std::move(lin);

  ordered_json rff = ordered_json::array();
  for (const auto& t : r.rff) {
    ordered_json e = metrics_to_json(t.metrics, pct);
    e["gamma"] = json_number(t.gamma);
    e["num_features"] = r.config.rff_dims;
    e["singular_values"] = vector_to_json(t.singular_values);
    rff.push_back(std::move(e));
  }
  j["rff"] = std::move(rff);
  j["cka"] = matrix_to_json(r.cka);
  j["phases"] = r.partition ? partition_to_json(*r.partition, r.num_layers) : ordered_json(nullptr);
  return j;
}

inline std::string metrics_table_csv(const AnalysisReport& r) {
  const double scale = r.config.percent_rn ? 100.0 : 1.0;
  std::vector<std::string> header{"variant", "layer"};
  for (auto n : kMetricNames) header.emplace_back(n);
  std::string out = csv_line(header);
  auto emit = [&](const char* variant, const LayerMetrics& m) {
    std::vector<std::string> f{variant, std::to_string(m.layer_index)};
    for (auto n : kMetricNames) {
      double v = metric_value(m, n);
      if (n == "residual_norm" || n == "reconstruction_error") v *= scale;
      f.push_back(format_number(v));
    }
    out += csv_line(f);
  };
  for (const auto& t : r.linear) emit("linear", t.metrics);
  for (const auto& t : r.rff) emit("rff", t.metrics);
  return out;
}

/// Writes report.json and/or metrics.csv + cka.csv per config.report_formats.
inline void write_report(const AnalysisReport& r, OutputSet& out) {
  const auto& f = r.config.report_formats;
  if (std::find(f.begin(), f.end(), "json") != f.end()) out.write("report.json", report_to_json(r).dump(2) + "\n");
  if (std::find(f.begin(), f.end(), "csv") != f.end()) {
    out.write("metrics.csv", metrics_table_csv(r));
    out.write("cka.csv", matrix_to_csv(r.cka));
  }
}

// --- plot data ------------------------------------------------------------------

namespace detail {

inline std::string sigma_series_csv(const Vector& sv) {
  std::string out = csv_line({"index", "sigma", "log10_sigma", "sigma_over_max"});
  const double top = sv.size() ? sv(0) : 0.0;
  for (Index k = 0; k < sv.size(); ++k) {
    const double s = sv(k);
    out += csv_line({std::to_string(k + 1), format_number(s),
                     s > 0.0 ? format_number(std::log10(s)) : std::string(),
                     top > 0.0 ? format_number(s / top) : std::string()});
  }
  return out;
}

inline std::string metric_series_csv(const nlohmann::json& entries) {
  std::vector<std::string> header{"layer"};
  for (auto n : kMetricNames) header.emplace_back(n);
  std::string out = csv_line(header);
  for (const auto& e : entries) {
    const LayerMetrics m = metrics_from_json(e);
    std::vector<std::string> f{std::to_string(m.layer_index)};
    for (auto n : kMetricNames) f.push_back(format_number(metric_value(m, n)));
    out += csv_line(f);
  }
  return out;
}

}  // namespace detail

/// Plot-ready series from a report.json:
///   sigma_layer_NNN.csv / rff_sigma_layer_NNN.csv  sorted singular values
///   metrics_linear.csv / metrics_rff.csv          metric-vs-layer series
///   cka.csv                                       dense L x L matrix
///   cka_transitions.csv                           CKA between layers i, i+1
inline void write_plot_data(const nlohmann::json& report, OutputSet& out) {
  try {
    const auto& linear = report.at("linear");
    for (const auto& e : linear) {
      const int layer = e.at("layer").get<int>();
      out.write("sigma_" + layer_file_name(layer).substr(0, 9) + ".csv",
                detail::sigma_series_csv(vector_from_json(e.at("singular_values"))));
    }
    for (const auto& e : report.at("rff")) {
      const int layer = e.at("layer").get<int>();
      out.write("rff_sigma_" + layer_file_name(layer).substr(0, 9) + ".csv",
                detail::sigma_series_csv(vector_from_json(e.at("singular_values"))));
    }
    out.write("metrics_linear.csv", detail::metric_series_csv(linear));
    out.write("metrics_rff.csv", detail::metric_series_csv(report.at("rff")));
    const Matrix cka = matrix_from_json(report.at("cka"));
    out.write("cka.csv", matrix_to_csv(cka));
    std::string trans = csv_line({"layer", "next_layer", "cka"});
    for (Index i = 0; i + 1 < cka.rows(); ++i) {
      trans += csv_line({std::to_string(i), std::to_string(i + 1), format_number(cka(i, i + 1))});
    }
    out.write("cka_transitions.csv", trans);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed report: ") + e.what());
  }
}

}  // namespace cast
