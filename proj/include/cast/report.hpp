#pragma once

// JSON / CSV serialization for reports, sweep tables and comparison tables.
// Numbers are written in shortest round-trip form; +inf as "inf", NaN as
// null (JSON) or an empty field (CSV).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cast/error.hpp"
#include "cast/metrics.hpp"
#include "cast/phases.hpp"
#include "cast/statistics.hpp"

namespace cast {

using ordered_json = nlohmann::ordered_json;

inline ordered_json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::InvalidArgument, "unexpected numeric string '" + s + "'");
  }
  return j.get<double>();
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();
}

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) line += ',';
    line += csv_field(fields[k]);
  }
  line += "\r\n";
  return line;
}

/// Splits one RFC 4180 record (no embedded newlines) back into fields.
inline std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cur += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r' && c != '\n') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

// --- metrics ------------------------------------------------------------------

/// Scales RN and reconstruction error to percent when requested.
inline ordered_json metrics_to_json(const LayerMetrics& m, bool percent_rn) {
  const double scale = percent_rn ? 100.0 : 1.0;
  ordered_json j;
  j["layer"] = m.layer_index;
  j["effective_rank"] = m.effective_rank;
  j["spectral_decay_rate"] = json_number(m.spectral_decay_rate);
  j["decay_intercept"] = json_number(m.decay_intercept);
  j["transformation_entropy"] = json_number(m.transformation_entropy);
  j["anisotropy_index"] = json_number(m.anisotropy_index);
  j["information_concentration"] = json_number(m.information_concentration);
  j["residual_norm"] = json_number(scale * m.residual_norm);
  j["condition_number"] = json_number(m.condition_number);
  j["reconstruction_error"] = json_number(scale * m.reconstruction_error);
  j["rank_ratio"] = json_number(m.rank_ratio);
  j["threshold"] = json_number(m.threshold_used);
  return j;
}

inline LayerMetrics metrics_from_json(const nlohmann::json& j) {
  LayerMetrics m;
  m.layer_index = j.at("layer").get<int>();
  m.effective_rank = j.at("effective_rank").get<Index>();
  m.spectral_decay_rate = number_from_json(j.at("spectral_decay_rate"));
  m.decay_intercept = number_from_json(j.at("decay_intercept"));
  m.transformation_entropy = number_from_json(j.at("transformation_entropy"));
  m.anisotropy_index = number_from_json(j.at("anisotropy_index"));
  m.information_concentration = number_from_json(j.at("information_concentration"));
  m.residual_norm = number_from_json(j.at("residual_norm"));
  m.condition_number = number_from_json(j.at("condition_number"));
  m.reconstruction_error = number_from_json(j.at("reconstruction_error"));
  m.rank_ratio = number_from_json(j.at("rank_ratio"));
  m.threshold_used = number_from_json(j.at("threshold"));
  return m;
}

inline ordered_json matrix_to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(json_number(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto n = static_cast<Index>(j.size());
  const Index c = n ? static_cast<Index>(j.at(0).size()) : 0;
  Matrix m(n, c);
  for (Index r = 0; r < n; ++r) {
    if (static_cast<Index>(j.at(static_cast<std::size_t>(r)).size()) != c) {
      throw Error(ErrorCode::ShapeMismatch, "ragged matrix in JSON");
    }
    for (Index k = 0; k < c; ++k) m(r, k) = number_from_json(j[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)]);
  }
  return m;
}

inline ordered_json vector_to_json(const Vector& v) {
  ordered_json a = ordered_json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(json_number(v(k)));
  return a;
}

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Index>(k)) = number_from_json(j[k]);
  return v;
}

inline ordered_json partition_to_json(const PhasePartition& p, Index num_layers) {
  ordered_json j;
  j["cut_points"] = p.cut_points;
  j["objective_value"] = json_number(p.objective_value);
  j["per_phase_mean_cka"] = p.per_phase_mean_cka;
  const auto labels = phase_labels(p.num_phases());
  ordered_json phases = ordered_json::array();
  Index start = 0;
  for (Index k = 0; k < p.num_phases(); ++k) {
    const Index stop = k + 1 < p.num_phases() ? p.cut_points[static_cast<std::size_t>(k)] : num_layers;
    phases.push_back({{"label", labels[static_cast<std::size_t>(k)]}, {"first_layer", start}, {"end_layer", stop}});
    start = stop;
  }
  j["phases"] = std::move(phases);
  return j;
}

inline PhasePartition partition_from_json(const nlohmann::json& j) {
  PhasePartition p;
  p.cut_points = j.at("cut_points").get<std::vector<Index>>();
  p.objective_value = number_from_json(j.at("objective_value"));
  p.per_phase_mean_cka = j.at("per_phase_mean_cka").get<std::vector<double>>();
  return p;
}

// --- sweeps -----------------------------------------------------------------------

inline const std::vector<std::string>& sweep_csv_header() {
  static const std::vector<std::string> h{"layer", "axis", "value", "metric", "estimate", "ci_low", "ci_high", "cv"};
  return h;
}

/// One CSV record per (layer, axis value, metric) cell.
inline std::string sweep_to_csv(const SweepTable& t) {
  std::string out = csv_line(sweep_csv_header());
  for (const auto& row : t.rows) {
    for (const auto& name : t.metrics) {
      const SweepCell& c = row.cells.at(name);
      out += csv_line({std::to_string(row.layer), t.axis, format_number(row.value), name, format_number(c.estimate),
                       format_number(c.ci_low), format_number(c.ci_high), format_number(c.cv)});
    }
  }
  return out;
}

/// Nested by layer.
inline ordered_json sweep_to_json(const SweepTable& t) {
  ordered_json j;
  j["axis"] = t.axis;
  j["axis_values"] = t.axis_values;
  j["metrics"] = t.metrics;
  ordered_json layers = ordered_json::array();
  int current = -1;
  for (const auto& row : t.rows) {
    if (row.layer != current) {
      layers.push_back({{"layer", row.layer}, {"rows", ordered_json::array()}});
      current = row.layer;
    }
    ordered_json r;
    r["value"] = json_number(row.value);
    ordered_json cells;
    for (const auto& name : t.metrics) {
      const SweepCell& c = row.cells.at(name);
      cells[name] = {{"estimate", json_number(c.estimate)},
                     {"ci_low", json_number(c.ci_low)},
                     {"ci_high", json_number(c.ci_high)},
                     {"cv", json_number(c.cv)}};
    }
    r["metrics"] = std::move(cells);
    layers.back()["rows"].push_back(std::move(r));
  }
  j["layers"] = std::move(layers);
  return j;
}

inline std::string bootstrap_to_csv(const std::vector<BootstrapResult>& results) {
  std::string out = csv_line(sweep_csv_header());
  for (const auto& r : results) {
    out += csv_line({std::to_string(r.layer_index), "bootstrap", format_number(r.level), r.metric_name,
                     format_number(r.point_estimate), format_number(r.ci_low), format_number(r.ci_high),
                     format_number(coefficient_of_variation(r.samples))});
  }
  return out;
}

inline ordered_json bootstrap_to_json(const std::vector<BootstrapResult>& results) {
  ordered_json layers = ordered_json::array();
  int current = -1;
  for (const auto& r : results) {
    if (r.layer_index != current) {
      layers.push_back({{"layer", r.layer_index}, {"metrics", ordered_json::object()}});
      current = r.layer_index;
    }
    ordered_json samples = ordered_json::array();
    for (double s : r.samples) samples.push_back(json_number(s));
    layers.back()["metrics"][r.metric_name] = {{"estimate", json_number(r.point_estimate)},
                                               {"ci_low", json_number(r.ci_low)},
                                               {"ci_high", json_number(r.ci_high)},
                                               {"level", r.level},
                                               {"replicates", r.replicates},
                                               {"cv", json_number(coefficient_of_variation(r.samples))},
                                               {"samples", samples}};
  }
  return {{"axis", "bootstrap"}, {"layers", layers}};
}

// --- estimator comparison --------------------------------------------------------

inline std::string comparison_to_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = csv_line({"estimator", "reconstruction_error", "condition_number", "effective_rank",
                              "decay_rate", "seconds"});
  for (const auto& r : rows) {
    out += csv_line({r.estimator, format_number(r.reconstruction_error), format_number(r.condition_number),
                     std::to_string(r.effective_rank), format_number(r.decay_rate), format_number(r.seconds)});
  }
  return out;
}

inline ordered_json comparison_to_json(const std::vector<ComparisonRow>& rows, Index transition) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json hp;
    for (const auto& [k, v] : r.hyperparams) hp[k] = json_number(v);
    arr.push_back({{"estimator", r.estimator},
                   {"hyperparams", hp},
                   {"reconstruction_error", json_number(r.reconstruction_error)},
                   {"condition_number", json_number(r.condition_number)},
                   {"effective_rank", r.effective_rank},
                   {"decay_rate", json_number(r.decay_rate)},
                   {"seconds", json_number(r.seconds)},
                   {"converged", r.converged}});
  }
  return {{"transition", transition}, {"estimators", arr}};
}

// --- files ---------------------------------------------------------------------------

/// Tracks files written by one command so a failing command can remove its
/// partial outputs. Each file is written to a temporary name and renamed.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path write(const std::string& name, const std::string& contents) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) {
      throw Error(ErrorCode::IoFailure, "cannot create output directory " + dir_.string());
    }
    const auto target = dir_ / name;
    const auto tmp = dir_ / (name + ".partial");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
      out << contents;
      if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + tmp.string());
    }
    written_.push_back(target);
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot rename " + tmp.string());
    return target;
  }

  void remove_all() noexcept {
    std::error_code ec;
    for (const auto& p : written_) {
      std::filesystem::remove(p, ec);
      std::filesystem::remove(p.string() + ".partial", ec);
    }
    written_.clear();
  }

  const std::vector<std::filesystem::path>& files() const { return written_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> fields;
    for (Index j = 0; j < m.cols(); ++j) fields.push_back(format_number(m(i, j)));
    out += csv_line(fields);
  }
  return out;
}

inline Matrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    for (const auto& f : parse_csv_line(line)) row.push_back(f == "inf" ? std::numeric_limits<double>::infinity() : std::stod(f));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != m.cols()) throw Error(ErrorCode::ShapeMismatch, "ragged CSV matrix");
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cast
