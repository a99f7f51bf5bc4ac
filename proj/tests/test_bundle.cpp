#include <cstring>
#include <fstream>

#include "test_support.hpp"

namespace cast {
namespace {

using test::TempDir;

void write_raw(const fs::path& file, const std::vector<float>& values) {
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
}

void write_manifest(const fs::path& dir, const nlohmann::json& j) {
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2);
}

nlohmann::json fixture_manifest() {
  return {{"format_version", 1},
          {"model_id", "fixture"},
          {"num_layers", 2},
          {"hidden_dim", 4},
          {"num_rows", 6},
          {"dtype", "f32"},
          {"byte_order", "little"},
          {"layer_files", {"layer_000.bin", "layer_001.bin"}},
          {"sequence_lengths", {4, 2}}};
}

std::vector<float> ramp(std::size_t n, float start) {
  std::vector<float> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = start + 0.5f * static_cast<float>(k);
  return v;
}

TEST(LoadBundle, HandBuiltFixture) {
  TempDir dir("fixture");
  write_manifest(dir.path(), fixture_manifest());
  write_raw(dir.path() / "layer_000.bin", ramp(24, 0.0f));
  write_raw(dir.path() / "layer_001.bin", ramp(24, -3.0f));
  ASSERT_EQ(fs::file_size(dir.path() / "layer_000.bin"), 96u);
  const HiddenStateBundle b = load_bundle(dir.path());
  EXPECT_EQ(b.num_layers(), 2);
  EXPECT_EQ(b.layers[0].rows(), 6);
  EXPECT_EQ(b.layers[0].cols(), 4);
  EXPECT_EQ(b.layers[1].rows(), 6);
  EXPECT_EQ(b.num_transitions(), 1);
  // Row-major: row 1, column 2 is element 6.
  EXPECT_EQ(b.layers[0](1, 2), 3.0f);
  EXPECT_EQ(b.layers[1](5, 3), -3.0f + 0.5f * 23);
  EXPECT_EQ(b.manifest.model_id, "fixture");
}

TEST(LoadBundle, TruncatedLayerFile) {
  TempDir dir("truncated");
  write_manifest(dir.path(), fixture_manifest());
  write_raw(dir.path() / "layer_000.bin", ramp(24, 0.0f));
  write_raw(dir.path() / "layer_001.bin", ramp(20, 0.0f));
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::SizeMismatch);
}

TEST(LoadBundle, SequenceLengthsMustSumToRows) {
  TempDir dir("seqsum");
  auto j = fixture_manifest();
  j["sequence_lengths"] = {3, 2};
  write_manifest(dir.path(), j);
  write_raw(dir.path() / "layer_000.bin", ramp(24, 0.0f));
  write_raw(dir.path() / "layer_001.bin", ramp(24, 0.0f));
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::ManifestInvalid);
}

TEST(LoadBundle, MissingPieces) {
  TempDir dir("missing");
  EXPECT_CAST_ERROR(load_bundle(dir.path() / "nope"), ErrorCode::MissingFile);
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::MissingFile);
  write_manifest(dir.path(), fixture_manifest());
  write_raw(dir.path() / "layer_000.bin", ramp(24, 0.0f));
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::MissingFile);
}

TEST(LoadBundle, MalformedManifest) {
  TempDir dir("malformed");
  {
    std::ofstream out(dir.path() / "manifest.json");
    out << "{ not json";
  }
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::ManifestInvalid);
  auto j = fixture_manifest();
  j.erase("hidden_dim");
  write_manifest(dir.path(), j);
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::ManifestInvalid);
  j = fixture_manifest();
  j["dtype"] = "f16";
  write_manifest(dir.path(), j);
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::ManifestInvalid);
  j = fixture_manifest();
  j["num_layers"] = 1;
  j["layer_files"] = {"layer_000.bin"};
  write_manifest(dir.path(), j);
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::ManifestInvalid);
}

TEST(LoadBundle, NanInjected) {
  TempDir dir("nan");
  write_manifest(dir.path(), fixture_manifest());
  auto bad = ramp(24, 0.0f);
  bad[13] = std::numeric_limits<float>::quiet_NaN();
  write_raw(dir.path() / "layer_000.bin", ramp(24, 0.0f));
  write_raw(dir.path() / "layer_001.bin", bad);
  EXPECT_CAST_ERROR(load_bundle(dir.path()), ErrorCode::NonFiniteData);
}

TEST(WriteBundle, RoundTripIsBitExact) {
  TempDir dir("roundtrip");
  SyntheticSpec spec;
  spec.seed = 7;
  spec.noise_scale = 0.05;
  const auto synth = generate_synthetic(spec);
  write_bundle(synth.bundle, dir.path() / "b");
  const auto loaded = load_bundle(dir.path() / "b");
  EXPECT_EQ(loaded.manifest, synth.bundle.manifest);
  ASSERT_EQ(loaded.layers.size(), synth.bundle.layers.size());
  for (std::size_t i = 0; i < loaded.layers.size(); ++i) {
    ASSERT_EQ(loaded.layers[i].size(), synth.bundle.layers[i].size());
    EXPECT_EQ(std::memcmp(loaded.layers[i].data(), synth.bundle.layers[i].data(),
                          static_cast<std::size_t>(loaded.layers[i].size()) * 4),
              0);
  }
  EXPECT_EQ(bundle_checksum(loaded), bundle_checksum(synth.bundle));

  write_bundle(loaded, dir.path() / "c");
  for (const auto& name : loaded.manifest.layer_files) {
    EXPECT_EQ(read_text_file(dir.path() / "b" / name), read_text_file(dir.path() / "c" / name));
  }
}

TEST(WriteBundle, UnwritablePath) {
  TempDir dir("unwritable");
  { std::ofstream(dir.path() / "plain_file") << "x"; }
  const auto synth = generate_synthetic(SyntheticSpec{});
  EXPECT_CAST_ERROR(write_bundle(synth.bundle, dir.path() / "plain_file" / "bundle"), ErrorCode::IoFailure);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.noise_scale = 0.1;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_EQ(bundle_checksum(a.bundle), bundle_checksum(b.bundle));
  for (std::size_t i = 0; i < a.transforms.size(); ++i) EXPECT_EQ(a.transforms[i], b.transforms[i]);
  spec.seed = 8;
  EXPECT_NE(bundle_checksum(generate_synthetic(spec).bundle), bundle_checksum(a.bundle));
}

TEST(Synthetic, FullRankNoiseFreeRecovery) {
  SyntheticSpec spec;
  spec.dim = 16;
  spec.rows = 64;
  spec.ranks = {16};
  spec.decays = {0.05};
  const auto s = generate_synthetic(spec);
  for (Index i = 0; i < s.bundle.num_transitions(); ++i) {
    const auto pair = center(s.bundle.layer(i), s.bundle.layer(i + 1));
    const auto est = estimate_pinv(pair);
    const Matrix& truth = s.transforms[static_cast<std::size_t>(i)];
    EXPECT_LT((est.transform - truth).norm() / truth.norm(), 1e-6) << "transition " << i;
  }
}

TEST(Synthetic, RankThreeTransformHasThreeValues) {
  SyntheticSpec spec;
  spec.ranks = {3};
  spec.decays = {0.0};
  const auto s = generate_synthetic(spec);
  for (const auto& t : s.transforms) {
    const Vector sv = svd(t, false).singular_values;
    EXPECT_NEAR(sv(0), 1.0, 1e-12);
    EXPECT_NEAR(sv(2), 1.0, 1e-12);
    EXPECT_LT(sv(3), 1e-12);
    EXPECT_EQ(effective_rank(sv, 1e-8), 3);
  }
}

TEST(Synthetic, DecayProfile) {
  SyntheticSpec spec;
  spec.dim = 8;
  spec.ranks = {8};
  spec.decays = {0.5};
  const auto s = generate_synthetic(spec);
  const Vector sv = svd(s.transforms[0], false).singular_values;
  for (Index j = 0; j < 8; ++j) EXPECT_NEAR(sv(j), std::exp(-0.5 * static_cast<double>(j + 1)), 1e-12);
}

TEST(Synthetic, NoiseFreeRecurrenceHoldsInFloat) {
  SyntheticSpec spec;
  spec.ranks = {5, 16, 9};
  spec.decays = {0.1};
  const auto s = generate_synthetic(spec);
  for (Index i = 0; i < s.bundle.num_transitions(); ++i) {
    const Matrix next = s.bundle.layer(i + 1);
    const Matrix predicted = s.bundle.layer(i) * s.transforms[static_cast<std::size_t>(i)];
    EXPECT_LT((next - predicted).norm(), 1e-5 * next.norm());
  }
}

TEST(Synthetic, NoiseMatchesRequestedScale) {
  SyntheticSpec spec;
  spec.rows = 2000;
  spec.noise_scale = 0.1;
  spec.ranks = {16};
  const auto s = generate_synthetic(spec);
  const Matrix signal = s.bundle.layer(0) * s.transforms[0];
  const double ratio = (s.bundle.layer(1) - signal).norm() / signal.norm();
  EXPECT_NEAR(ratio, 0.1, 0.005);
}

TEST(Synthetic, InvalidSpecs) {
  SyntheticSpec spec;
  spec.ranks = {0};
  EXPECT_CAST_ERROR(generate_synthetic(spec), ErrorCode::InvalidSpec);
  spec.ranks = {17};
  EXPECT_CAST_ERROR(generate_synthetic(spec), ErrorCode::InvalidSpec);
  spec.ranks = {4, 4};
  EXPECT_CAST_ERROR(generate_synthetic(spec), ErrorCode::InvalidSpec);
  spec = {};
  spec.decays = {-1.0};
  EXPECT_CAST_ERROR(generate_synthetic(spec), ErrorCode::InvalidSpec);
  spec = {};
  spec.num_layers = 1;
  EXPECT_CAST_ERROR(generate_synthetic(spec), ErrorCode::InvalidSpec);
  spec = {};
  spec.noise_scale = -0.1;
  EXPECT_CAST_ERROR(generate_synthetic(spec), ErrorCode::InvalidSpec);
}

TEST(Synthetic, WarnsWhenRowsBelowDim) {
  test::WarningCapture warnings;
  SyntheticSpec spec;
  spec.rows = 8;
  spec.sequence_length = 4;
  (void)generate_synthetic(spec);
  EXPECT_EQ(warnings.messages.size(), 1u);
}

TEST(Manifest, JsonRoundTripAndKeys) {
  const auto s = generate_synthetic(SyntheticSpec{});
  const auto j = manifest_to_json(s.bundle.manifest);
  for (const char* key : {"format_version", "model_id", "num_layers", "hidden_dim", "num_rows", "dtype",
                          "byte_order", "layer_files", "sequence_lengths"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.size(), 9u);
  EXPECT_EQ(manifest_from_json(nlohmann::json::parse(j.dump())), s.bundle.manifest);
}

TEST(Rows, SequenceOffsets) {
  EXPECT_EQ(sequence_offsets({3, 2, 4}), (std::vector<Index>{0, 3, 5, 9}));
  EXPECT_EQ(uniform_sequence_lengths(10, 4), (std::vector<Index>{4, 4, 2}));
}

TEST(Rows, StratifiedSampleIsProportionalAndSorted) {
  const std::vector<Index> lengths{100, 50, 250, 600};
  const auto rows = stratified_rows(lengths, 100, 9);
  ASSERT_EQ(rows.size(), 100u);
  EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end()));
  EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end());
  const auto offsets = sequence_offsets(lengths);
  std::vector<int> per(lengths.size(), 0);
  for (Index r : rows) {
    for (std::size_t k = 0; k < lengths.size(); ++k)
      if (r >= offsets[k] && r < offsets[k + 1]) ++per[k];
  }
  EXPECT_EQ(per, (std::vector<int>{10, 5, 25, 60}));
  EXPECT_EQ(rows, stratified_rows(lengths, 100, 9));
  EXPECT_EQ(stratified_rows(lengths, 5000, 9).size(), 1000u);
  EXPECT_EQ(stratified_rows(lengths, 0, 9).size(), 1000u);
}

}  // namespace
}  // namespace cast
