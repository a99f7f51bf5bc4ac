// cast: command-line front end for layer-transformation analysis.
//
//   cast synth    --out DIR [--layers --dim --rows --rank --decay --noise --seed]
//   cast validate --bundle DIR
//   cast analyze  --bundle DIR --out DIR [--estimator --threshold --kernel ...]
//   cast sweep    threshold|samples|rff|bootstrap --bundle DIR --out DIR
//   cast compare  --bundle DIR --out DIR [--transition I]
//   cast phases   (--bundle DIR | --cka FILE.csv) --out DIR [--phases 3]
//   cast plotdata --report report.json --out DIR
//
// Exit codes: 0 success, 1 usage/config/data error, 2 numerical failure.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "cast/cast.hpp"

namespace {

using cast::Index;

struct CommonFlags {
  cast::AnalysisConfig config;
  std::optional<double> rcond;
  std::optional<Index> k;
};

void add_estimator_flags(CLI::App* app, CommonFlags& f) {
  auto& c = f.config;
  app->add_option("--estimator", c.estimator, "pinv | ridge | elastic_net | truncated_svd")->capture_default_str();
  app->add_option("--rcond", f.rcond, "relative singular-value cutoff for pinv/tsvd (default max(m,d)*eps)");
  app->add_option("--ridge-lambda", c.ridge_lambda, "ridge penalty")->capture_default_str();
  app->add_option("--l1", c.enet_l1, "elastic-net L1 penalty")->capture_default_str();
  app->add_option("--l2", c.enet_l2, "elastic-net L2 penalty")->capture_default_str();
  app->add_option("--max-iter", c.enet_max_iter, "elastic-net iteration cap")->capture_default_str();
  app->add_option("--tol", c.enet_tol, "elastic-net relative step tolerance")->capture_default_str();
  app->add_option("--k", f.k, "truncated-SVD rank (default: numerical rank at 1e-5)");
}

void add_run_flags(CLI::App* app, CommonFlags& f, bool bundle_required = true) {
  auto& c = f.config;
  auto* b = app->add_option("--bundle", c.bundle_path, "hidden-state bundle directory");
  if (bundle_required) b->required();
  app->add_option("--out", c.output_dir, "output directory")->capture_default_str();
  app->add_option("--threshold", c.threshold, "relative effective-rank threshold")->capture_default_str();
  app->add_option("--seed", c.seed, "master seed")->capture_default_str();
  app->add_option("--format", c.report_formats, "report formats: json, csv")->delimiter(',')->capture_default_str();
  app->add_flag("--deterministic", c.deterministic, "single-threaded, no timestamps");
  app->add_flag("--percent-rn", c.percent_rn, "report residual/reconstruction error in percent");
  app->add_flag("--include-zeros", c.include_zeros, "evaluate TE/AI/IC on all singular values");
}

void add_kernel_flags(CLI::App* app, CommonFlags& f) {
  auto& c = f.config;
  app->add_option("--kernel", c.kernel, "rbf | laplacian")->capture_default_str();
  app->add_option("--rff-dims", c.rff_dims, "random Fourier feature count D")->capture_default_str();
  app->add_option("--cka-row-cap", c.cka_row_cap, "rows sampled for CKA and RFF (0 = all)")->capture_default_str();
  app->add_option("--gamma-policy", c.gamma_policy, "per_layer | global")->capture_default_str();
  app->add_flag("--rff-center", c.rff_center, "center random features before the fit");
}

void finalize(CommonFlags& f) {
  f.config.rcond = f.rcond;
  f.config.tsvd_k = f.k;
}

cast::HiddenStateBundle open_bundle(const std::string& path) { return cast::load_bundle(path); }

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(std::stod(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoll(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw cast::Error(cast::ErrorCode::InvalidArgument, std::string("bad value '") + item + "' in " + what);
    }
  }
  if (out.empty()) throw cast::Error(cast::ErrorCode::InvalidArgument, std::string("empty ") + what);
  return out;
}

bool wants(const cast::AnalysisConfig& c, const char* fmt) {
  return std::find(c.report_formats.begin(), c.report_formats.end(), fmt) != c.report_formats.end();
}

void check_formats(const cast::AnalysisConfig& c) {
  if (c.report_formats.empty()) throw cast::Error(cast::ErrorCode::InvalidArgument, "no report format");
  for (const auto& f : c.report_formats)
    if (f != "json" && f != "csv") throw cast::Error(cast::ErrorCode::InvalidArgument, "unknown report format '" + f + "'");
}

std::vector<std::string> metric_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  cast::require_metric_names(out);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probe-free analysis of transformer layer transformations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cast::kVersion));

  // synth
  cast::SyntheticSpec synth;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic bundle with known transforms");
  cmd_synth->add_option("--out", synth_out, "bundle directory")->required();
  cmd_synth->add_option("--layers", synth.num_layers, "number of layers L")->capture_default_str();
  cmd_synth->add_option("--dim", synth.dim, "hidden dimension d")->capture_default_str();
  cmd_synth->add_option("--rows", synth.rows, "rows m")->capture_default_str();
  cmd_synth->add_option("--rank", synth.ranks, "transform rank (one value or L-1 values)")->delimiter(',');
  cmd_synth->add_option("--decay", synth.decays, "singular-value decay (one value or L-1 values)")->delimiter(',');
  cmd_synth->add_option("--noise", synth.noise_scale, "relative output noise")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  cmd_synth->add_option("--seq-len", synth.sequence_length, "rows per sequence")->capture_default_str();
  cmd_synth->add_option("--model-id", synth.model_id, "model_id written to the manifest")->capture_default_str();

  // validate
  std::string validate_path;
  auto* cmd_validate = app.add_subcommand("validate", "check a bundle directory");
  cmd_validate->add_option("--bundle", validate_path, "bundle directory")->required();

  // analyze
  CommonFlags analyze;
  auto* cmd_analyze = app.add_subcommand("analyze", "full analysis: metrics, RFF metrics, CKA, phases");
  add_run_flags(cmd_analyze, analyze);
  add_estimator_flags(cmd_analyze, analyze);
  add_kernel_flags(cmd_analyze, analyze);
  cmd_analyze->add_option("--phases", analyze.config.phases, "phase count for segmentation (2..4)")
      ->capture_default_str();

  // sweep
  CommonFlags sweep;
  std::string sweep_kind;
  std::string sweep_grid, sweep_metrics = "effective_rank,spectral_decay_rate,transformation_entropy";
  int seeds_per_size = 5, replicates = 20;
  double level = 0.95;
  Index sweep_transition = 0;
  auto* cmd_sweep = app.add_subcommand("sweep", "robustness sweeps and bootstrap intervals");
  cmd_sweep->add_option("kind", sweep_kind, "threshold | samples | rff | bootstrap")
      ->required()
      ->check(CLI::IsMember({"threshold", "samples", "rff", "bootstrap"}));
  add_run_flags(cmd_sweep, sweep);
  add_estimator_flags(cmd_sweep, sweep);
  add_kernel_flags(cmd_sweep, sweep);
  cmd_sweep->add_option("--grid", sweep_grid, "comma-separated axis values (default: built-in grid)");
  cmd_sweep->add_option("--metrics", sweep_metrics, "metrics for samples/bootstrap")->capture_default_str();
  cmd_sweep->add_option("--seeds-per-size", seeds_per_size, "draws per sample size")->capture_default_str();
  cmd_sweep->add_option("--replicates", replicates, "bootstrap replicates")->capture_default_str();
  cmd_sweep->add_option("--level", level, "bootstrap interval level")->capture_default_str();
  cmd_sweep->add_option("--transition", sweep_transition, "bootstrap transition index")->capture_default_str();

  // compare
  CommonFlags compare;
  Index compare_transition = 0;
  auto* cmd_compare = app.add_subcommand("compare", "compare the four estimators on one transition");
  add_run_flags(cmd_compare, compare);
  add_estimator_flags(cmd_compare, compare);
  cmd_compare->add_option("--transition", compare_transition, "transition index")->capture_default_str();

  // phases
  CommonFlags phases;
  std::string phases_cka;
  Index phases_k = 3;
  auto* cmd_phases = app.add_subcommand("phases", "segment layers into contiguous phases from CKA");
  add_run_flags(cmd_phases, phases, false);
  add_kernel_flags(cmd_phases, phases);
  cmd_phases->add_option("--cka", phases_cka, "precomputed dense CKA matrix (CSV)");
  cmd_phases->add_option("--phases", phases_k, "phase count (2..4)")->capture_default_str();

  // plotdata
  std::string plot_report, plot_out = "cast_plots";
  auto* cmd_plot = app.add_subcommand("plotdata", "emit plot-ready CSV series from a report");
  cmd_plot->add_option("--report", plot_report, "report.json written by analyze")->required();
  cmd_plot->add_option("--out", plot_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  std::optional<cast::OutputSet> outputs;
  try {
    if (cmd_synth->parsed()) {
      const auto generated = cast::generate_synthetic(synth);
      cast::write_bundle(generated.bundle, synth_out);
      std::printf("wrote %s (L=%ld, d=%ld, m=%ld, checksum %s)\n", synth_out.c_str(),
                  static_cast<long>(generated.bundle.num_layers()), static_cast<long>(generated.bundle.dim()),
                  static_cast<long>(generated.bundle.rows()),
                  cast::hex64(cast::bundle_checksum(generated.bundle)).c_str());
    } else if (cmd_validate->parsed()) {
      const auto b = open_bundle(validate_path);
      std::printf("ok %s (L=%ld, d=%ld, m=%ld, sequences=%zu, checksum %s)\n", validate_path.c_str(),
                  static_cast<long>(b.num_layers()), static_cast<long>(b.dim()), static_cast<long>(b.rows()),
                  b.manifest.sequence_lengths.size(), cast::hex64(cast::bundle_checksum(b)).c_str());
    } else if (cmd_analyze->parsed()) {
      finalize(analyze);
      cast::validate_config(analyze.config);
      const auto bundle = open_bundle(analyze.config.bundle_path);
      const auto report = cast::run_analysis(bundle, analyze.config);
      outputs.emplace(analyze.config.output_dir);
      cast::write_report(report, *outputs);
    } else if (cmd_sweep->parsed()) {
      finalize(sweep);
      auto& c = sweep.config;
      check_formats(c);
      const auto bundle = open_bundle(c.bundle_path);
      const unsigned threads = cast::analysis_threads(c);
      const auto est = cast::estimator_config(c);
      const auto mopt = cast::metric_options(c);
      outputs.emplace(c.output_dir);
      auto emit = [&](const std::string& stem, const std::string& csv, const cast::ordered_json& json) {
        if (wants(c, "csv")) outputs->write(stem + ".csv", csv);
        if (wants(c, "json")) outputs->write(stem + ".json", json.dump(2) + "\n");
      };
      if (sweep_kind == "threshold") {
        const auto grid = sweep_grid.empty() ? cast::default_threshold_grid() : parse_list<double>(sweep_grid, "--grid");
        const auto t = cast::threshold_sweep(bundle, grid, est, threads);
        emit("sweep_threshold", cast::sweep_to_csv(t), cast::sweep_to_json(t));
      } else if (sweep_kind == "samples") {
        std::vector<Index> grid;
        if (sweep_grid.empty()) {
          const auto n = static_cast<Index>(bundle.manifest.sequence_lengths.size());
          for (Index s = std::max<Index>(2, n / 8); s < n; s *= 2) grid.push_back(s);
          grid.push_back(n);
        } else {
          grid = parse_list<Index>(sweep_grid, "--grid");
        }
        cast::SampleSweepOptions so;
        so.seeds_per_size = seeds_per_size;
        so.seed = c.seed;
        so.estimator = est;
        so.metrics = mopt;
        so.threads = threads;
        const auto t = cast::sample_size_sweep(bundle, grid, metric_list(sweep_metrics), so);
        emit("sweep_samples", cast::sweep_to_csv(t), cast::sweep_to_json(t));
      } else if (sweep_kind == "rff") {
        const auto grid = sweep_grid.empty() ? cast::default_rff_grid() : parse_list<Index>(sweep_grid, "--grid");
        cast::RffSweepOptions ro;
        ro.rff.kernel = cast::kernel_from_string(c.kernel);
        ro.rff.center_features = c.rff_center;
        ro.rff.rcond = c.rcond;
        ro.seed = c.seed;
        ro.row_cap = c.cka_row_cap;
        ro.metrics = mopt;
        ro.threads = threads;
        const auto t = cast::rff_dim_sweep(bundle, grid, ro);
        emit("sweep_rff", cast::sweep_to_csv(t), cast::sweep_to_json(t));
      } else {
        cast::BootstrapOptions bo;
        bo.replicates = replicates;
        bo.level = level;
        bo.seed = c.seed;
        bo.estimator = est;
        bo.metrics = mopt;
        bo.threads = threads;
        const auto r = cast::bootstrap_ci(bundle, sweep_transition, metric_list(sweep_metrics), bo);
        emit("bootstrap", cast::bootstrap_to_csv(r), cast::bootstrap_to_json(r));
      }
    } else if (cmd_compare->parsed()) {
      finalize(compare);
      auto& c = compare.config;
      check_formats(c);
      const auto bundle = open_bundle(c.bundle_path);
      auto configs = cast::default_comparison_configs();
      const auto base = cast::estimator_config(c);
      for (auto& cfg : configs) {
        const auto kind = cfg.kind;
        cfg = base;
        cfg.kind = kind;
      }
      const auto rows = cast::compare_estimators(bundle, compare_transition, configs, cast::metric_options(c));
      outputs.emplace(c.output_dir);
      if (wants(c, "csv")) outputs->write("compare.csv", cast::comparison_to_csv(rows));
      if (wants(c, "json")) {
        outputs->write("compare.json", cast::comparison_to_json(rows, compare_transition).dump(2) + "\n");
      }
    } else if (cmd_phases->parsed()) {
      auto& c = phases.config;
      cast::Matrix cka;
      Index num_layers = 0;
      if (!phases_cka.empty()) {
        cka = cast::matrix_from_csv(cast::read_text_file(phases_cka));
      } else if (!c.bundle_path.empty()) {
        const auto bundle = open_bundle(c.bundle_path);
        cast::CkaOptions co;
        co.kernel = cast::kernel_from_string(c.kernel);
        co.gamma_policy = cast::gamma_policy_from_string(c.gamma_policy);
        co.row_cap = c.cka_row_cap;
        co.seed = c.seed;
        co.threads = cast::analysis_threads(c);
        cka = cast::cka_matrix(bundle, co);
      } else {
        throw cast::Error(cast::ErrorCode::InvalidArgument, "phases needs --bundle or --cka");
      }
      num_layers = cka.rows();
      const auto p = cast::segment_phases(cka, phases_k);
      outputs.emplace(c.output_dir);
      cast::ordered_json j;
      j["cka"] = cast::matrix_to_json(cka);
      j["phases"] = cast::partition_to_json(p, num_layers);
      outputs->write("phases.json", j.dump(2) + "\n");
      outputs->write("cka.csv", cast::matrix_to_csv(cka));
    } else if (cmd_plot->parsed()) {
      const auto text = cast::read_text_file(plot_report);
      nlohmann::json report;
      try {
        report = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw cast::Error(cast::ErrorCode::InvalidArgument, plot_report + ": " + e.what());
      }
      outputs.emplace(plot_out);
      cast::write_plot_data(report, *outputs);
    }
  } catch (const cast::Error& e) {
    if (outputs) outputs->remove_all();
    std::fprintf(stderr, "error: %s\n", e.what());
    return cast::is_numerical(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    if (outputs) outputs->remove_all();
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
