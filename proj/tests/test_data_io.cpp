// Copyright 2026 The DAVI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "davi/data_io.hpp"
#include "davi/label_algebra.hpp"
#include "davi/raster_io.hpp"
#include "davi/synthetic.hpp"
#include "test_support.hpp"

namespace davi {
namespace {

using nlohmann::json;

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

// Two tiny pairs on disk plus a helper to write manifests that reference them.
class ManifestFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(1);
    for (const char* id : {"a", "b"}) {
      write_tile(dir / (std::string(id) + "_pre.png"), testing::random_tile(4, 4, rng));
      write_tile(dir / (std::string(id) + "_post.png"), testing::random_tile(4, 4, rng));
      write_gray8(dir / (std::string(id) + "_gt.png"), Grid<std::uint8_t>(4, 4, std::uint8_t{2}));
    }
  }
  json record(const std::string& id, bool gt = true) {
    json r{{"id", id}, {"pre", id + "_pre.png"}, {"post", id + "_post.png"}};
    if (gt) r["gt"] = id + "_gt.png";
    return r;
  }
  fs::path write(const std::string& role, const json& pairs) {
    const auto p = dir / "manifest.json";
    write_file_bytes(p, json{{"schema", "davi-manifest/1"}, {"role", role}, {"pairs", pairs}}.dump());
    return p;
  }
  testing::TempDir dir;
};

TEST_F(ManifestFixture, ValidTwoPairManifest) {
  const auto m = load_manifest(write("source", json::array({record("a"), record("b")})));
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.role, DatasetRole::kSource);
  EXPECT_EQ(m.pairs[1].id, "b");
  EXPECT_EQ(m.pairs[0].pre, dir / "a_pre.png");
  EXPECT_EQ(m.content_hash, sha256_file(dir / "manifest.json"));
}

TEST_F(ManifestFixture, DuplicateIdIsNamed) {
  const auto path = write("target", json::array({record("a"), record("a")}));
  const auto msg = message_of([&] { load_manifest(path); });
  EXPECT_NE(msg.find("duplicate id 'a'"), std::string::npos) << msg;
}

TEST_F(ManifestFixture, TargetWithoutGroundTruthIsValid) {
  const auto m = load_manifest(write("target", json::array({record("a", false), record("b", false)})));
  EXPECT_FALSE(m.pairs[0].gt.has_value());
}

TEST_F(ManifestFixture, SourceWithoutGroundTruthIsRejected) {
  const auto path = write("source", json::array({record("a", false), record("b")}));
  const auto msg = message_of([&] { load_manifest(path); });
  EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("gt"), std::string::npos) << msg;
}

TEST_F(ManifestFixture, EveryProblemIsReported) {
  auto missing = record("b");
  missing["post"] = "nowhere.png";
  const auto path = write("source", json::array({record("a", false), missing, record("b")}));
  const auto msg = message_of([&] { load_manifest(path); });
  EXPECT_NE(msg.find("source record 'a'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("nowhere.png"), std::string::npos) << msg;
  EXPECT_NE(msg.find("duplicate id 'b'"), std::string::npos) << msg;
}

TEST_F(ManifestFixture, SchemaAndSyntaxErrors) {
  const auto p = dir / "bad.json";
  write_file_bytes(p, "{not json");
  EXPECT_THROW(load_manifest(p), ValidationError);
  write_file_bytes(p, json{{"schema", "other/2"}, {"role", "target"}, {"pairs", json::array()}}.dump());
  EXPECT_THROW(load_manifest(p), ValidationError);
  write_file_bytes(p, json{{"schema", "davi-manifest/1"}, {"role", "both"}, {"pairs", json::array()}}.dump());
  EXPECT_THROW(load_manifest(p), ValidationError);
  write_file_bytes(p, json{{"schema", "davi-manifest/1"}, {"role", "target"}, {"pairs", json::array()}}.dump());
  EXPECT_THROW(load_manifest(p), ValidationError);
  EXPECT_THROW(load_manifest(dir / "absent.json"), UpstreamMissing);
}

TEST_F(ManifestFixture, SaveThenLoadRoundTrip) {
  const auto m = load_manifest(write("source", json::array({record("a"), record("b")})));
  save_manifest(m, dir / "copy.json");
  const auto back = load_manifest(dir / "copy.json");
  ASSERT_EQ(back.pairs.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.pairs[i].id, m.pairs[i].id);
    EXPECT_EQ(fs::canonical(back.pairs[i].pre), fs::canonical(m.pairs[i].pre));
    EXPECT_EQ(fs::canonical(*back.pairs[i].gt), fs::canonical(*m.pairs[i].gt));
  }
}

TEST_F(ManifestFixture, LoadingIsIdempotentAndGtIsBinarized) {
  const auto m = load_manifest(write("source", json::array({record("a"), record("b")})));
  const auto first = load_pair(m.pairs[0]);
  const auto second = load_pair(m.pairs[0]);
  EXPECT_EQ(first.pre, second.pre);
  EXPECT_EQ(first.post, second.post);
  const auto gt = load_ground_truth(m.pairs[0]);
  EXPECT_EQ(count_positive(gt), 16u);
  PairRecord no_gt = m.pairs[0];
  no_gt.gt.reset();
  EXPECT_THROW(load_ground_truth(no_gt), ValidationError);
}

TEST_F(ManifestFixture, PrePostShapeMismatchFailsOnLoad) {
  Rng rng(2);
  write_tile(dir / "a_post.png", testing::random_tile(4, 5, rng));
  const auto m = load_manifest(write("target", json::array({record("a", false)})));
  EXPECT_THROW(load_pair(m.pairs[0]), ShapeMismatch);
}

// --- damage levels ---------------------------------------------------------------------------

TEST(BinarizeDamageLevels, FourLevelsToTwo) {
  const Grid<std::uint8_t> g(2, 2, std::vector<std::uint8_t>{0, 1, 2, 3});
  EXPECT_EQ(binarize_damage_levels(g), testing::bits({{0, 1}, {1, 1}}));
}

TEST(BinarizeDamageLevels, AllZero) {
  EXPECT_EQ(binarize_damage_levels(Grid<std::uint8_t>(3, 2, std::uint8_t{0})), BinaryMap(3, 2));
}

TEST(BinarizeDamageLevels, OutOfRangeLevelThrows) {
  const Grid<std::uint8_t> g(1, 3, std::vector<std::uint8_t>{0, 4, 1});
  EXPECT_THROW(binarize_damage_levels(g), ValidationError);
}

// --- raster formats --------------------------------------------------------------------------

TEST(Png, EightBitChannelsAreDividedBy255) {
  testing::TempDir dir;
  const std::vector<std::uint8_t> rgb{0, 51, 255, 255, 102, 0};
  write_png(dir / "t.png", RawRaster{1, 2, 3, rgb});
  const auto t = load_tile(dir / "t.png");
  EXPECT_FLOAT_EQ(t.at(0, 0, 1), 0.2f);
  EXPECT_FLOAT_EQ(t.at(0, 0, 2), 1.0f);
  EXPECT_FLOAT_EQ(t.at(0, 1, 1), 0.4f);
}

TEST(Png, TileRoundTripIsExact) {
  testing::TempDir dir;
  Rng rng(5);
  for (int k = 0; k < 5; ++k) {
    const auto tile = testing::random_tile(3 + k, 7, rng);
    write_tile(dir / "t.png", tile);
    EXPECT_EQ(load_tile(dir / "t.png"), tile);
  }
}

TEST(Png, NonRgbRasterIsRejectedAsTile) {
  testing::TempDir dir;
  write_gray8(dir / "g.png", Grid<std::uint8_t>(2, 2, std::uint8_t{9}));
  EXPECT_THROW(load_tile(dir / "g.png"), ValidationError);
  write_file_bytes(dir / "junk.png", "not a png");
  EXPECT_THROW(load_tile(dir / "junk.png"), ValidationError);
}

TEST(BinaryMapRaster, RandomRoundTrip) {
  testing::TempDir dir;
  Rng rng(6);
  for (int k = 0; k < 5; ++k) {
    const auto m = testing::random_bits(5, 3 + k, 0.4, rng);
    write_binary_map(m, dir / "m.png");
    EXPECT_EQ(read_binary_map(dir / "m.png"), m);
  }
}

TEST(BinaryMapRaster, OnePositivePixelGivesOne255Byte) {
  BinaryMap m(4, 5);
  m(2, 3) = 1;
  const auto raster = decode_png(encode_binary_map(m), "mem");
  EXPECT_EQ(raster.channels, 1u);
  EXPECT_EQ(std::count(raster.pixels.begin(), raster.pixels.end(), 255), 1);
  EXPECT_EQ(std::count(raster.pixels.begin(), raster.pixels.end(), 0), 19);
  EXPECT_EQ(raster.pixels[2 * 5 + 3], 255);
}

TEST(BinaryMapRaster, ForeignValueIsRejected) {
  testing::TempDir dir;
  write_gray8(dir / "m.png", Grid<std::uint8_t>(2, 2, std::uint8_t{7}));
  EXPECT_THROW(read_binary_map(dir / "m.png"), ValidationError);
}

TEST(Davg, RandomRoundTripIsBitwiseEqual) {
  testing::TempDir dir;
  Rng rng(7);
  for (int k = 0; k < 5; ++k) {
    const auto m = testing::random_unit<ProbabilityMap>(3 + k, 4, rng);
    write_probability_map(m, dir / "p.davg");
    const auto back = read_probability_map(dir / "p.davg");
    ASSERT_EQ(back.size(), m.size());
    EXPECT_EQ(std::memcmp(back.values().data(), m.values().data(), m.size() * sizeof(float)), 0);
  }
}

TEST(Davg, HeaderAndHalfPayloadAreBitExact) {
  const ProbabilityMap m(2, 3, 0.5f);
  const auto bytes = encode_davg(m);
  ASSERT_EQ(bytes.size(), 20u + 6 * 4);
  const unsigned char header[20] = {'D', 'A', 'V', 'G', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0};
  EXPECT_EQ(std::memcmp(bytes.data(), header, 20), 0);
  // 0.5f is 0x3F000000, little-endian.
  for (std::size_t i = 20; i < bytes.size(); i += 4) {
    EXPECT_EQ(static_cast<unsigned char>(bytes[i]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(bytes[i + 1]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(bytes[i + 2]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(bytes[i + 3]), 0x3F);
  }
}

TEST(Davg, CorruptContainersAreRejected) {
  const auto good = encode_davg(ProbabilityMap(2, 2, 0.25f));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_davg<ProbabilityMap>(bad, "mem"), ValidationError);
  bad = good;
  bad[8] = 2;  // dtype
  EXPECT_THROW(decode_davg<ProbabilityMap>(bad, "mem"), ValidationError);
  bad = good;
  bad[4] = 3;  // version
  EXPECT_THROW(decode_davg<ProbabilityMap>(bad, "mem"), ValidationError);
  EXPECT_THROW(decode_davg<ProbabilityMap>(good.substr(0, good.size() - 1), "mem"), ValidationError);
  EXPECT_THROW(decode_davg<ProbabilityMap>(good + "x", "mem"), ValidationError);
}

TEST(Rasters, UnwritablePathThrows) {
  testing::TempDir dir;
  write_file_bytes(dir / "file", "x");
  EXPECT_THROW(write_probability_map(ProbabilityMap(1, 1), dir / "file" / "p.davg"), Error);
  EXPECT_THROW(write_binary_map(BinaryMap(1, 1), dir / "file" / "m.png"), Error);
}

// --- synthetic scenes -------------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file_bytes(e.path());
  }
  return out;
}

TEST(SyntheticDataset, SameSeedIsByteIdentical) {
  testing::TempDir a, b;
  auto cfg = SceneConfig::target_preset(7);
  generate_synthetic_dataset(cfg, 50, DatasetRole::kTarget, a.path());
  generate_synthetic_dataset(cfg, 50, DatasetRole::kTarget, b.path());
  const auto ta = tree_bytes(a.path());
  EXPECT_EQ(ta.size(), 50u * 3 + 3);  // pre, post, gt per pair + manifest, oracle, scene
  EXPECT_EQ(ta, tree_bytes(b.path()));
  cfg.seed = 8;
  testing::TempDir c;
  generate_synthetic_dataset(cfg, 50, DatasetRole::kTarget, c.path());
  EXPECT_NE(ta, tree_bytes(c.path()));
}

TEST(SyntheticDataset, ManifestLoadsAndOracleIsSaved) {
  testing::TempDir dir;
  const auto ds = generate_synthetic_dataset(SceneConfig::source_preset(3), 4, DatasetRole::kSource, dir.path());
  const auto m = load_manifest(dir / "manifest.json");
  EXPECT_EQ(m.role, DatasetRole::kSource);
  ASSERT_EQ(m.pairs.size(), 4u);
  EXPECT_EQ(m.content_hash, ds.manifest.content_hash);
  EXPECT_EQ(OracleConfig::load(dir / "oracle.json").to_json(), ds.oracle.to_json());
}

TEST(SyntheticDataset, UnwritableOutputDirectoryThrows) {
  testing::TempDir dir;
  write_file_bytes(dir / "file", "x");
  EXPECT_THROW(generate_synthetic_dataset(SceneConfig::source_preset(1), 2, DatasetRole::kSource, dir / "file" / "sub"),
               Error);
  EXPECT_THROW(generate_synthetic_dataset(SceneConfig::source_preset(1), 0, DatasetRole::kSource, dir / "x"),
               ValidationError);
}

TEST(SyntheticScenes, NoDamageMeansEmptyGroundTruthAndUnchangedScene) {
  auto cfg = SceneConfig::source_preset(11);
  cfg.damage_fraction = 0.0;
  for (const auto& s : synthesize_samples(cfg, 20)) {
    EXPECT_EQ(count_positive(s.ground_truth()), 0u) << s.pair.id;
    // Post differs from pre only by the global shift and acquisition noise.
    double mad = 0.0;
    const auto& pre = s.pair.pre.values();
    const auto& post = s.pair.post.values();
    for (std::size_t i = 0; i < pre.size(); ++i) mad += std::abs(post[i] - pre[i] - cfg.style.post_shift[i % 3]);
    mad /= static_cast<double>(pre.size());
    EXPECT_LT(mad, 3.0 * cfg.style.acquisition_noise) << s.pair.id;
  }
}

TEST(SyntheticScenes, GroundTruthIsUnionOfDamagedRectangles) {
  const auto samples = synthesize_samples(SceneConfig::target_preset(2), 30);
  for (const auto& s : samples) {
    BinaryMap expected(s.pair.height(), s.pair.width());
    for (const auto& b : s.buildings) {
      if (b.level == 0) continue;
      for (std::size_t y = b.row; y < b.row + b.height; ++y) {
        for (std::size_t x = b.col; x < b.col + b.width; ++x) expected(y, x) = 1;
      }
    }
    EXPECT_EQ(s.ground_truth(), expected) << s.pair.id;
  }
}

TEST(SyntheticScenes, DamagedPairFractionTracksConfig) {
  auto cfg = SceneConfig::source_preset(21);
  cfg.damage_fraction = 0.3;
  const std::size_t n = 400;
  std::size_t damaged = 0;
  for (const auto& s : synthesize_samples(cfg, n)) damaged += count_positive(s.ground_truth()) > 0;
  const double frac = static_cast<double>(damaged) / n;
  const double sd = std::sqrt(0.3 * 0.7 / n);
  EXPECT_NEAR(frac, 0.3, 3 * sd);
}

TEST(SyntheticScenes, InconsistentConfigIsRejected) {
  auto cfg = SceneConfig::source_preset(1);
  cfg.tile_size = 8;
  EXPECT_THROW(synthesize_pair(cfg, 0), ValidationError);
  cfg = SceneConfig::source_preset(1);
  cfg.min_building_size = 10;
  EXPECT_THROW(synthesize_pair(cfg, 0), ValidationError);
}

}  // namespace
}  // namespace davi
