#include "hcrf/io.hpp"

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "hcrf/serialize.hpp"
#include "hcrf/synth.hpp"

namespace hcrf {
namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("hcrf_io_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

bool bitwise_equal(const ProbMap& a, const ProbMap& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    if (std::bit_cast<std::uint32_t>(a.data()[i]) !=
        std::bit_cast<std::uint32_t>(b.data()[i]))
      return false;
  return true;
}

using PmapTest = TempDir;

TEST_F(PmapTest, RoundTripIsBitwiseIdentical) {
  Rng rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_probmap(1 + rng.below(8), 1 + rng.below(8),
                                  2 + rng.below(3), rng);
    write_pmap(m, dir_ / "m.pmap");
    EXPECT_TRUE(bitwise_equal(read_pmap(dir_ / "m.pmap"), m));
    EXPECT_EQ(encode_pmap(m), encode_pmap(m));
  }
}

TEST_F(PmapTest, HeaderLayout) {
  ProbMap m(2, 3, 2, std::vector<float>(12, 0.5f));
  const auto b = encode_pmap(m);
  ASSERT_EQ(b.size(), 16u + 12 * 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PMAP");
  EXPECT_EQ(b[4], 1);  // version, little-endian
  EXPECT_EQ(b[5], 0);
  EXPECT_EQ(b[6], 2);  // classes
  EXPECT_EQ(b[8], 2);  // height
  EXPECT_EQ(b[12], 3);  // width
  // 0.5f = 0x3F000000 little-endian
  EXPECT_EQ(b[16], 0x00);
  EXPECT_EQ(b[19], 0x3F);
}

TEST_F(PmapTest, BadMagic) {
  auto b = encode_pmap(ProbMap(1, 1, 2, {0.5f, 0.5f}));
  b[0] = b[1] = b[2] = b[3] = 'X';
  EXPECT_THROW(decode_pmap(b), FormatError);
}

TEST_F(PmapTest, TruncatedPayloadReportsOffset) {
  auto b = encode_pmap(ProbMap(2, 2, 2, std::vector<float>(8, 0.5f)));
  b.resize(b.size() - 3);
  try {
    decode_pmap(b);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 45"), std::string::npos)
        << e.what();
  }
  b.resize(10);
  EXPECT_THROW(decode_pmap(b), FormatError);
}

TEST_F(PmapTest, BadVersionAndOverflow) {
  auto b = encode_pmap(ProbMap(1, 1, 2, {0.5f, 0.5f}));
  b[4] = 2;
  EXPECT_THROW(decode_pmap(b), FormatError);
  b[4] = 1;
  for (int i = 8; i < 16; ++i) b[i] = 0xFF;
  b[6] = 0xFF;
  b[7] = 0xFF;
  EXPECT_THROW(decode_pmap(b), FormatError);
}

using MaskTest = TempDir;

TEST_F(MaskTest, AllWhiteAndAllBlack) {
  const std::string white = "P5\n3 2\n255\n" + std::string(6, '\xff');
  const auto m = decode_mask({white.begin(), white.end()});
  EXPECT_EQ(m.count(kAbnormal), 6u);
  EXPECT_EQ(m.width(), 3u);
  const std::string black = "P5\n# comment\n3 2\n255\n" + std::string(6, '\0');
  EXPECT_EQ(decode_mask({black.begin(), black.end()}).count(kAbnormal), 0u);
}

TEST_F(MaskTest, ThresholdAt127) {
  const std::string s = std::string("P5 2 1 255\n") + '\x7f' + '\x80';
  const auto m = decode_mask({s.begin(), s.end()});
  EXPECT_EQ(m.at(0, 0), kNormal);
  EXPECT_EQ(m.at(0, 1), kAbnormal);
}

TEST_F(MaskTest, CheckerboardRoundTrip) {
  LabelMask m(5, 7);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 7; ++x)
      if ((x + y) % 2) m.set(y, x, kAbnormal);
  write_mask(m, dir_ / "c.pgm");
  EXPECT_EQ(read_mask(dir_ / "c.pgm"), m);
  const auto bytes = read_file_bytes(dir_ / "c.pgm");
  EXPECT_EQ(bytes, encode_mask(m));
}

TEST_F(MaskTest, RejectsNonPgmAndMaxval) {
  const std::string p2 = "P2\n1 1\n255\n0\n";
  EXPECT_THROW(decode_mask({p2.begin(), p2.end()}), FormatError);
  const std::string mv = "P5\n1 1\n65535\n\0\0";
  EXPECT_THROW(decode_mask({mv.begin(), mv.end()}), FormatError);
  const std::string trunc = "P5\n4 4\n255\n\0\0";
  EXPECT_THROW(decode_mask({trunc.begin(), trunc.end()}), FormatError);
  EXPECT_THROW(encode_mask(LabelMask(2, 2, 3)), FormatError);
}

using ManifestTest = TempDir;

class ManifestFixture : public TempDir {
 protected:
  void SetUp() override {
    TempDir::SetUp();
    ProbMap m(1, 1, 2, {0.5f, 0.5f});
    for (const char* n : {"px.pmap", "a.pmap", "b.pmap", "g.pmap"})
      write_pmap(m, dir_ / n);
    write_mask(LabelMask(1, 1), dir_ / "gt.pgm");
  }
  std::vector<ManifestEntry> load(const json& j) {
    write_json_file(j, dir_ / "manifest.json");
    return read_manifest(dir_ / "manifest.json");
  }
  json entry(const std::string& id, const std::string& label) {
    return {{"image_id", id},
            {"label", label},
            {"pixel_map", "px.pmap"},
            {"patch_maps", {"a.pmap", "b.pmap", "g.pmap"}}};
  }
};

TEST_F(ManifestFixture, MinimalManifest) {
  auto e = entry("img0", "abnormal");
  e["gt_mask"] = "gt.pgm";
  const auto m = load({{"images", {e}}});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].image_id, "img0");
  EXPECT_EQ(m[0].label, kAbnormal);
  EXPECT_EQ(m[0].patch_maps[1], dir_ / "b.pmap");
  ASSERT_TRUE(m[0].gt_mask);
}

TEST_F(ManifestFixture, NormalWithoutGroundTruthIsAccepted) {
  const auto m = load({{"images", {entry("n0", "normal")}}});
  EXPECT_FALSE(m[0].gt_mask);
  EXPECT_EQ(m[0].label, kNormal);
}

TEST_F(ManifestFixture, MissingPatchMapsIsAnError) {
  auto e = entry("img0", "abnormal");
  e.erase("patch_maps");
  EXPECT_THROW(load({{"images", {e}}}), FormatError);
  e["patch_maps"] = {"a.pmap", "b.pmap"};
  EXPECT_THROW(load({{"images", {e}}}), FormatError);
}

TEST_F(ManifestFixture, DanglingPathsAndBadFields) {
  auto e = entry("img0", "abnormal");
  e["pixel_map"] = "nope.pmap";
  EXPECT_THROW(load({{"images", {e}}}), IoError);
  EXPECT_THROW(load({{"images", {entry("x", "tumour")}}}), FormatError);
  EXPECT_THROW(load({{"images", {entry("x", "normal"), entry("x", "normal")}}}),
               FormatError);
  EXPECT_THROW(load(json::object()), FormatError);
}

using JsonTest = TempDir;

TEST_F(JsonTest, DeterministicSerialization) {
  HcrfWeights w;
  write_json_file(weights_to_json(w), dir_ / "a.json");
  write_json_file(weights_to_json(w), dir_ / "b.json");
  EXPECT_EQ(read_file_bytes(dir_ / "a.json"), read_file_bytes(dir_ / "b.json"));
  EXPECT_EQ(weights_from_json(read_json_file(dir_ / "a.json")), w);
  EXPECT_FALSE(fs::exists(dir_ / ("a.json.tmp." + std::to_string(::getpid()))));
}

TEST_F(JsonTest, DecisionRoundTrip) {
  auto d = cpel_classify({{0.1, 0.9}, {0.2, 0.8}}, 1e-12, "img7");
  const auto back = decision_from_json(json::parse(decision_to_json(d).dump()));
  EXPECT_EQ(back, d);
}

TEST_F(JsonTest, AttentionListSchema) {
  LabelMask m(4, 4);
  m.set(0, 0, kAbnormal);
  m.set(0, 1, kAbnormal);
  m.set(1, 0, kAbnormal);
  const auto j = patch_grid_to_json(select_attention_patches(m, 2, 0.5));
  ASSERT_EQ(j["attention"].size(), 1u);
  EXPECT_EQ(j["attention"][0]["row"], 0);
  EXPECT_EQ(j["attention"][0]["abnormal_fraction"], 0.75);
  EXPECT_EQ(j["attention"][0]["is_attention"], true);
  EXPECT_EQ(j["patches"].size(), 4u);
}

TEST_F(JsonTest, ReportNullForUndefined) {
  const auto j =
      report_to_json(segmentation_metrics(LabelMask(2, 2), LabelMask(2, 2)));
  EXPECT_TRUE(j["rvd"].is_null());
  EXPECT_EQ(j["accuracy"], 1.0);
}

}  // namespace
}  // namespace hcrf
