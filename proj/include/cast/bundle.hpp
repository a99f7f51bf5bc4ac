#pragma once

// Hidden-state bundle: a directory holding manifest.json plus one raw
// little-endian f32 row-major file per layer. Matrices stay in f32 in memory
// so write/load round-trips are bit-exact; analyses upcast to f64 on access.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "cast/common.hpp"
#include "cast/error.hpp"

namespace cast {

namespace fs = std::filesystem;

using LayerMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

struct BundleManifest {
  int format_version = kBundleFormatVersion;
  std::string model_id;
  Index num_layers = 0;
  Index hidden_dim = 0;
  Index num_rows = 0;
  std::string dtype = "f32";
  std::string byte_order = "little";
  std::vector<std::string> layer_files;
  std::vector<Index> sequence_lengths;

  bool operator==(const BundleManifest&) const = default;
};

struct HiddenStateBundle {
  BundleManifest manifest;
  std::vector<LayerMatrix> layers;

  Index num_layers() const { return static_cast<Index>(layers.size()); }
  Index rows() const { return manifest.num_rows; }
  Index dim() const { return manifest.hidden_dim; }
  Index num_transitions() const { return num_layers() - 1; }

  /// Layer i upcast to f64.
  Matrix layer(Index i) const { return layers.at(static_cast<std::size_t>(i)).cast<double>(); }
};

inline std::string layer_file_name(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer_%03ld.bin", static_cast<long>(i));
  return buf;
}

/// Offsets of each sequence's first row; one extra trailing entry equal to m.
inline std::vector<Index> sequence_offsets(const std::vector<Index>& lengths) {
  std::vector<Index> off(lengths.size() + 1, 0);
  for (std::size_t k = 0; k < lengths.size(); ++k) off[k + 1] = off[k] + lengths[k];
  return off;
}

// --- manifest <-> json -------------------------------------------------------

inline nlohmann::ordered_json manifest_to_json(const BundleManifest& m) {
  nlohmann::ordered_json j;
  j["format_version"] = m.format_version;
  j["model_id"] = m.model_id;
  j["num_layers"] = m.num_layers;
  j["hidden_dim"] = m.hidden_dim;
  j["num_rows"] = m.num_rows;
  j["dtype"] = m.dtype;
  j["byte_order"] = m.byte_order;
  j["layer_files"] = m.layer_files;
  j["sequence_lengths"] = m.sequence_lengths;
  return j;
}

inline BundleManifest manifest_from_json(const nlohmann::json& j) {
  BundleManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.model_id = j.at("model_id").get<std::string>();
    m.num_layers = j.at("num_layers").get<Index>();
    m.hidden_dim = j.at("hidden_dim").get<Index>();
    m.num_rows = j.at("num_rows").get<Index>();
    m.dtype = j.at("dtype").get<std::string>();
    m.byte_order = j.at("byte_order").get<std::string>();
    m.layer_files = j.at("layer_files").get<std::vector<std::string>>();
    m.sequence_lengths = j.at("sequence_lengths").get<std::vector<Index>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

/// Checks the manifest's internal consistency (not the layer files).
inline void validate_manifest(const BundleManifest& m) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::ManifestInvalid, why); };
  if (m.format_version != kBundleFormatVersion) fail("unsupported format_version " + std::to_string(m.format_version));
  if (m.dtype != "f32") fail("dtype must be f32, got " + m.dtype);
  if (m.byte_order != "little") fail("byte_order must be little, got " + m.byte_order);
  if (m.num_layers < 2) fail("num_layers must be at least 2");
  if (m.hidden_dim < 1) fail("hidden_dim must be positive");
  if (m.num_rows < 1) fail("num_rows must be positive");
  if (static_cast<Index>(m.layer_files.size()) != m.num_layers) {
    fail("layer_files has " + std::to_string(m.layer_files.size()) + " entries, expected " +
         std::to_string(m.num_layers));
  }
  if (m.sequence_lengths.empty()) fail("sequence_lengths is empty");
  Index total = 0;
  for (Index len : m.sequence_lengths) {
    if (len < 1) fail("sequence_lengths entries must be >= 1");
    total += len;
  }
  if (total != m.num_rows) {
    fail("sequence_lengths sum to " + std::to_string(total) + " but num_rows is " + std::to_string(m.num_rows));
  }
}

/// Full bundle invariants: manifest, shapes, finiteness.
inline void validate_bundle(const HiddenStateBundle& b) {
  validate_manifest(b.manifest);
  if (b.num_layers() != b.manifest.num_layers) {
    throw Error(ErrorCode::ManifestInvalid, "layer count does not match manifest");
  }
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto& h = b.layers[i];
    if (h.rows() != b.manifest.num_rows || h.cols() != b.manifest.hidden_dim) {
      throw Error(ErrorCode::SizeMismatch, "layer " + std::to_string(i) + " has shape (" + std::to_string(h.rows()) +
                                               ", " + std::to_string(h.cols()) + ")");
    }
    if (!h.allFinite()) throw Error(ErrorCode::NonFiniteData, "layer " + std::to_string(i) + " has NaN/Inf");
  }
}

// --- raw layer io --------------------------------------------------------------

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000ff00u) | ((v << 8) & 0x00ff0000u) | (v << 24);
}

inline void to_little_endian_inplace(float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, data + k, 4);
      bits = byteswap32(bits);
      std::memcpy(data + k, &bits, 4);
    }
  } else {
    (void)data;
    (void)n;
  }
}

inline LayerMatrix read_layer_file(const fs::path& file, Index rows, Index cols) {
  if (!fs::exists(file)) throw Error(ErrorCode::MissingFile, "missing layer file " + file.string());
  const auto expected = static_cast<std::uintmax_t>(rows) * static_cast<std::uintmax_t>(cols) * 4u;
  const auto actual = fs::file_size(file);
  if (actual != expected) {
    throw Error(ErrorCode::SizeMismatch, file.string() + " holds " + std::to_string(actual) + " bytes, expected " +
                                             std::to_string(expected));
  }
  LayerMatrix h(rows, cols);
  std::ifstream in(file, std::ios::binary);
  if (!in.read(reinterpret_cast<char*>(h.data()), static_cast<std::streamsize>(expected))) {
    throw Error(ErrorCode::IoFailure, "failed reading " + file.string());
  }
  to_little_endian_inplace(h.data(), static_cast<std::size_t>(h.size()));
  return h;
}

inline void write_layer_file(const fs::path& file, const LayerMatrix& h) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + file.string() + " for writing");
  if constexpr (std::endian::native == std::endian::big) {
    LayerMatrix copy = h;
    to_little_endian_inplace(copy.data(), static_cast<std::size_t>(copy.size()));
    out.write(reinterpret_cast<const char*>(copy.data()), static_cast<std::streamsize>(copy.size() * 4));
  } else {
    out.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size() * 4));
  }
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + file.string());
}

}  // namespace detail

inline HiddenStateBundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingFile, "bundle directory not found: " + dir.string());
  const fs::path manifest_path = dir / kManifestName;
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::MissingFile, "missing " + manifest_path.string());

  nlohmann::json j;
  {
    std::ifstream in(manifest_path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ManifestInvalid, manifest_path.string() + ": " + e.what());
    }
  }
  HiddenStateBundle b;
  b.manifest = manifest_from_json(j);
  validate_manifest(b.manifest);

  b.layers.reserve(static_cast<std::size_t>(b.manifest.num_layers));
  for (const auto& name : b.manifest.layer_files) {
    b.layers.push_back(detail::read_layer_file(dir / name, b.manifest.num_rows, b.manifest.hidden_dim));
  }
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    if (!b.layers[i].allFinite()) {
      throw Error(ErrorCode::NonFiniteData, "layer file " + b.manifest.layer_files[i] + " contains NaN/Inf");
    }
  }
  return b;
}

inline void write_bundle(const HiddenStateBundle& b, const fs::path& dir) {
  validate_bundle(b);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::IoFailure, "cannot create bundle directory " + dir.string());
  }
  {
    std::ofstream out(dir / kManifestName, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write manifest in " + dir.string());
    out << manifest_to_json(b.manifest).dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "failed writing manifest in " + dir.string());
  }
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    detail::write_layer_file(dir / b.manifest.layer_files[i], b.layers[i]);
  }
}

/// FNV-1a over the canonical manifest text and every layer's bytes.
inline std::uint64_t bundle_checksum(const HiddenStateBundle& b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      h ^= p[k];
      h *= 0x100000001b3ULL;
    }
  };
  const std::string text = manifest_to_json(b.manifest).dump();
  mix(reinterpret_cast<const unsigned char*>(text.data()), text.size());
  for (const auto& layer : b.layers) {
    mix(reinterpret_cast<const unsigned char*>(layer.data()), static_cast<std::size_t>(layer.size()) * 4u);
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Builds a bundle from in-memory layers, splitting rows into sequences of
/// the given lengths (one sequence covering everything when empty).
inline HiddenStateBundle make_bundle(std::vector<LayerMatrix> layers, std::vector<Index> sequence_lengths = {},
                                     std::string model_id = "in-memory") {
  HiddenStateBundle b;
  b.manifest.model_id = std::move(model_id);
  b.manifest.num_layers = static_cast<Index>(layers.size());
  b.manifest.num_rows = layers.empty() ? 0 : layers.front().rows();
  b.manifest.hidden_dim = layers.empty() ? 0 : layers.front().cols();
  for (Index i = 0; i < b.manifest.num_layers; ++i) b.manifest.layer_files.push_back(layer_file_name(i));
  if (sequence_lengths.empty()) sequence_lengths.push_back(b.manifest.num_rows);
  b.manifest.sequence_lengths = std::move(sequence_lengths);
  b.layers = std::move(layers);
  validate_bundle(b);
  return b;
}

/// Splits m rows into consecutive sequences of `length` rows; the last one
/// takes the remainder.
inline std::vector<Index> uniform_sequence_lengths(Index m, Index length) {
  std::vector<Index> out;
  if (length < 1) length = m;
  for (Index start = 0; start < m; start += length) out.push_back(std::min(length, m - start));
  return out;
}

// --- row subsampling --------------------------------------------------------

/// Deterministic row sample of at most `cap` rows, stratified by sequence:
/// each sequence contributes in proportion to its length (largest remainder),
/// rows within a sequence drawn without replacement. Returned sorted.
inline std::vector<Index> stratified_rows(const std::vector<Index>& lengths, Index cap, std::uint64_t seed) {
  const auto offsets = sequence_offsets(lengths);
  const Index m = offsets.back();
  std::vector<Index> rows;
  if (cap <= 0 || m <= cap) {
    rows.resize(static_cast<std::size_t>(m));
    std::iota(rows.begin(), rows.end(), Index{0});
    return rows;
  }
  const std::size_t n = lengths.size();
  std::vector<Index> quota(n);
  std::vector<std::pair<double, std::size_t>> remainders(n);
  Index assigned = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double exact = static_cast<double>(cap) * static_cast<double>(lengths[k]) / static_cast<double>(m);
    quota[k] = static_cast<Index>(std::floor(exact));
    remainders[k] = {exact - static_cast<double>(quota[k]), k};
    assigned += quota[k];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < cap && r < n; ++r) {
    const std::size_t k = remainders[r].second;
    if (quota[k] < lengths[k]) {
      ++quota[k];
      ++assigned;
    }
  }
  std::mt19937_64 rng(seed);
  rows.reserve(static_cast<std::size_t>(cap));
  for (std::size_t k = 0; k < n; ++k) {
    if (quota[k] == 0) continue;
    std::vector<Index> pool(static_cast<std::size_t>(lengths[k]));
    std::iota(pool.begin(), pool.end(), offsets[k]);
    std::sample(pool.begin(), pool.end(), std::back_inserter(rows), quota[k], rng);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

inline Matrix select_rows(const Matrix& h, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), h.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = h.row(rows[r]);
  return out;
}

// --- synthetic bundles --------------------------------------------------------

/// Ground-truth generator used by tests and the `synth` command.
/// ranks/decays hold one entry per transition, or a single entry broadcast to
/// all transitions.
struct SyntheticSpec {
  Index num_layers = 4;
  Index dim = 16;
  Index rows = 256;
  std::vector<Index> ranks{16};
  std::vector<double> decays{0.0};
  double noise_scale = 0.0;
  std::uint64_t seed = 7;
  Index sequence_length = 32;
  std::string model_id = "synthetic";
};

struct SyntheticBundle {
  HiddenStateBundle bundle;
  std::vector<Matrix> transforms;
};

namespace detail {

inline Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) g(i, j) = normal(rng);
  return g;
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
inline Matrix random_orthogonal(Index d, std::mt19937_64& rng) {
  const Matrix g = gaussian_matrix(d, d, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

template <typename T>
T per_transition(const std::vector<T>& v, Index i) {
  return v.size() == 1 ? v.front() : v.at(static_cast<std::size_t>(i));
}

}  // namespace detail

/// Transformation with exactly `rank` nonzero singular values
/// sigma_j = exp(-decay * j), j = 1..rank, and random singular vectors.
inline Matrix synthetic_transform(Index d, Index rank, double decay, std::mt19937_64& rng) {
  const Matrix u = detail::random_orthogonal(d, rng);
  const Matrix v = detail::random_orthogonal(d, rng);
  Vector s = Vector::Zero(d);
  for (Index j = 0; j < rank; ++j) s(j) = std::exp(-decay * static_cast<double>(j + 1));
  return u * s.asDiagonal() * v.transpose();
}

inline void validate_synthetic_spec(const SyntheticSpec& spec) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
  if (spec.num_layers < 2) fail("need at least 2 layers");
  if (spec.dim < 1) fail("dim must be positive");
  if (spec.rows < 1) fail("rows must be positive");
  const auto transitions = static_cast<std::size_t>(spec.num_layers - 1);
  if (spec.ranks.size() != 1 && spec.ranks.size() != transitions) fail("ranks needs 1 or L-1 entries");
  if (spec.decays.size() != 1 && spec.decays.size() != transitions) fail("decays needs 1 or L-1 entries");
  for (Index r : spec.ranks)
    if (r < 1 || r > spec.dim) fail("rank " + std::to_string(r) + " outside [1, dim]");
  for (double a : spec.decays)
    if (!(a >= 0.0) || !std::isfinite(a)) fail("decay must be finite and >= 0");
  if (!(spec.noise_scale >= 0.0) || !std::isfinite(spec.noise_scale)) fail("noise_scale must be finite and >= 0");
  if (spec.sequence_length < 1) fail("sequence_length must be positive");
}

/// H_0 ~ N(0,1); H_{i+1} = H_i T_i + noise, each layer rounded to f32 before
/// it feeds the next transition so the stored data satisfy the recurrence.
inline SyntheticBundle generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic_spec(spec);
  if (spec.rows < spec.dim) {
    warn("synthetic spec has fewer rows (" + std::to_string(spec.rows) + ") than dim (" + std::to_string(spec.dim) +
         "); transitions are not identifiable");
  }
  std::mt19937_64 rng(spec.seed);
  const Index m = spec.rows, d = spec.dim;
  SyntheticBundle out;
  std::vector<LayerMatrix> layers;
  layers.push_back(detail::gaussian_matrix(m, d, rng).cast<float>());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i + 1 < spec.num_layers; ++i) {
    Matrix t = synthetic_transform(d, detail::per_transition(spec.ranks, i), detail::per_transition(spec.decays, i), rng);
    Matrix next = layers.back().cast<double>() * t;
    if (spec.noise_scale > 0.0) {
      const double scale = spec.noise_scale * next.norm() / std::sqrt(static_cast<double>(m * d));
      for (Index r = 0; r < m; ++r)
        for (Index c = 0; c < d; ++c) next(r, c) += scale * normal(rng);
    }
    layers.push_back(next.cast<float>());
    out.transforms.push_back(std::move(t));
  }
  out.bundle = make_bundle(std::move(layers), uniform_sequence_lengths(m, spec.sequence_length), spec.model_id);
  return out;
}

}  // namespace cast
