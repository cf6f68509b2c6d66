// Drives the hcrf executable end to end through files.

#include <cstdio>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "hcrf/hcrf.hpp"
#include "oracles.hpp"

#ifndef HCRF_CLI_PATH
#error "HCRF_CLI_PATH must point at the hcrf executable"
#endif

namespace hcrf {
namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`; captures stdout, discards stderr unless asked.
RunResult cli(const std::string& args, bool keep_stderr = false) {
  const std::string cmd = std::string(HCRF_CLI_PATH) + " " + args +
                          (keep_stderr ? " 2>&1" : " 2>/dev/null");
  RunResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("hcrf_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }

  void synth(const std::string& sub, const std::string& extra = "") {
    ASSERT_EQ(cli("synth --height 128 --width 128 --images 3 --patch-size 32 "
                  "--blob-scale 16 --seed 5 --out-dir " + p(sub) + " " + extra)
                  .code,
              0);
  }
  fs::path dir_;
};

TEST_F(Cli, UsageErrorsExitTwo) {
  synth("d");
  auto r = cli("segment --manifest " + p("d/manifest.json") +
                   " --weights " + p("missing.json") + " --out-dir " + p("o"),
               true);
  EXPECT_EQ(r.code, 2);
  const auto err = json::parse(r.out);
  EXPECT_EQ(err["exit_code"], 2);
  EXPECT_TRUE(err["error"]["message"].is_string());
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("attend --masks " + p("d") + " --patch-size 32").code, 2);
  EXPECT_EQ(cli("synth --out-dir " + p("x") + " --noise 2").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, DataErrorsExitOne) {
  write_text_atomic(dir_ / "bad.json", "{\"images\": [{\"image_id\": 1}]}");
  auto r = cli("segment --manifest " + p("bad.json") + " --out-dir " + p("o"), true);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.out)["error"]["type"], "data");
  write_text_atomic(dir_ / "probs.json",
                    R"({"images": [{"image_id": "a", "patch_probs": [[0.5, 0.7]]}]})");
  EXPECT_EQ(cli("classify --patch-probs " + p("probs.json") + " --out " +
                p("d.json"))
                .code,
            1);
}

TEST_F(Cli, NoiselessSegmentationGivesDiceOne) {
  synth("d", "--noise 0");
  const auto r = cli("segment --manifest " + p("d/manifest.json") +
                     " --config " + p("d/config.json") + " --out-dir " + p("seg"));
  ASSERT_EQ(r.code, 0);
  const auto timing = json::parse(r.out);
  ASSERT_EQ(timing["images"].size(), 3u);
  for (const auto& row : timing["images"]) EXPECT_EQ(row["dice"], 1.0);
  EXPECT_TRUE(timing["total_seconds"].is_number());

  ASSERT_EQ(cli("evaluate --pred " + p("seg") + " --gt " + p("d") + " --out " +
                p("eval.json"))
                .code,
            0);
  const auto ev = read_json_file(dir_ / "eval.json");
  EXPECT_EQ(ev["pooled"]["dice"], 1.0);
  EXPECT_EQ(ev["mean_dice"], 1.0);

  const auto post = read_pmap(dir_ / "seg/img000_posterior.pmap");
  EXPECT_NO_THROW(validate_probmap(post));
  EXPECT_EQ(read_mask(dir_ / "seg/img000_mask.pgm"),
            read_mask(dir_ / "d/img000_gt.pgm"));
}

TEST_F(Cli, SegmentIsIdempotent) {
  synth("d", "--noise 0.4");
  for (const char* out : {"s1", "s2"})
    ASSERT_EQ(cli("segment --manifest " + p("d/manifest.json") + " --config " +
                  p("d/config.json") + " --window 5 --out-dir " + p(out))
                  .code,
              0);
  for (const auto& e : fs::directory_iterator(dir_ / "s1"))
    EXPECT_EQ(read_file_bytes(e.path()),
              read_file_bytes(dir_ / "s2" / e.path().filename()))
        << e.path();
}

TEST_F(Cli, LargeImageReportsTiming) {
  ASSERT_EQ(cli("synth --height 2048 --width 2048 --images 1 --patch-size 256 "
                "--noise 0.2 --seed 1 --out-dir " + p("big"))
                .code,
            0);
  const auto r = cli("segment --manifest " + p("big/manifest.json") +
                     " --out-dir " + p("seg"));
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_GT(j["total_seconds"].get<double>(), 0.0);
  EXPECT_EQ(read_mask(dir_ / "seg/img000_mask.pgm").height(), 2048u);
}

TEST_F(Cli, AttendListsAndMonotonicity) {
  write_mask(LabelMask(512, 512), dir_ / "empty.pgm");
  ASSERT_EQ(cli("attend --masks " + p("empty.pgm") + " --out " + p("a.json")).code, 0);
  auto j = read_json_file(dir_ / "a.json");
  EXPECT_TRUE(j["images"][0]["attention"].empty());
  EXPECT_EQ(j["images"][0]["patches"].size(), 4u);

  synth("d", "--noise 0");
  for (const char* t : {"0.1", "0.9"})
    ASSERT_EQ(cli("attend --masks " + p("d") + " --patch-size 16 --threshold " +
                  t + " --out " + p(std::string("t") + t + ".json"))
                  .code,
              0);
  const auto lo = read_json_file(dir_ / "t0.1.json");
  const auto hi = read_json_file(dir_ / "t0.9.json");
  ASSERT_EQ(lo["images"].size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    std::set<std::pair<int, int>> low;
    for (const auto& a : lo["images"][i]["attention"])
      low.insert({a["row"].get<int>(), a["col"].get<int>()});
    for (const auto& a : hi["images"][i]["attention"])
      EXPECT_TRUE(low.contains({a["row"].get<int>(), a["col"].get<int>()}));
    const auto mask = read_mask(dir_ / "d" /
                                (lo["images"][i]["mask"].get<std::string>() + "_gt.pgm"));
    for (const auto& a : lo["images"][i]["patches"]) {
      const auto n = oracle::tile_count(mask, a["row"], a["col"], 16);
      EXPECT_EQ(a["abnormal_fraction"].get<double>(), double(n) / 256.0);
    }
  }
}

TEST_F(Cli, ClassifyIsOrderIndependent) {
  write_text_atomic(dir_ / "a.json", R"({"images": [
    {"image_id": "x", "patch_probs": [[0.1, 0.9], [0.2, 0.8]]},
    {"image_id": "y", "patch_probs": [[0.6, 0.4], [0.5, 0.5]]}]})");
  write_text_atomic(dir_ / "b.json", R"({"images": [
    {"image_id": "y", "patch_probs": [[0.6, 0.4], [0.5, 0.5]]},
    {"image_id": "x", "patch_probs": [[0.1, 0.9], [0.2, 0.8]]}]})");
  ASSERT_EQ(cli("classify --patch-probs " + p("a.json") + " --out " + p("da.json")).code, 0);
  ASSERT_EQ(cli("classify --patch-probs " + p("b.json") + " --out " + p("db.json")).code, 0);
  EXPECT_EQ(read_file_bytes(dir_ / "da.json"), read_file_bytes(dir_ / "db.json"));
  const auto d = read_json_file(dir_ / "da.json")["decisions"];
  EXPECT_EQ(d[0]["image_id"], "x");
  EXPECT_EQ(d[0]["predicted_label"], "abnormal");
  EXPECT_NEAR(d[0]["scores"][1].get<double>(), std::log(0.72), 1e-12);
  EXPECT_EQ(d[1]["predicted_label"], "normal");
}

TEST_F(Cli, EvaluateReplaysReferenceCounts) {
  // 70 normal images (53 right), 210 abnormal (203 right).
  json decisions = json::array(), labels = json::object();
  for (int i = 0; i < 280; ++i) {
    const bool normal = i < 70;
    const bool right = normal ? i < 53 : i < 70 + 203;
    const std::size_t predicted = (normal == right) ? kNormal : kAbnormal;
    const std::string id = "i" + std::to_string(i);
    labels[id] = normal ? "normal" : "abnormal";
    decisions.push_back({{"image_id", id},
                         {"scores", {0.0, 0.0}},
                         {"predicted_class", predicted},
                         {"T", 1}});
  }
  write_json_file({{"decisions", decisions}}, dir_ / "d.json");
  write_json_file({{"labels", labels}}, dir_ / "l.json");
  const auto r = cli("evaluate --decisions " + p("d.json") + " --labels " +
                     p("l.json") + " --out " + p("r.json"));
  ASSERT_EQ(r.code, 0);
  const auto rep = read_json_file(dir_ / "r.json")["report"];
  EXPECT_EQ(rep["tp"], 53);
  EXPECT_EQ(rep["fp"], 7);
  EXPECT_NEAR(rep["accuracy"].get<double>(), 0.914, 5e-4);
  EXPECT_NEAR(rep["f1"].get<double>(), 0.815, 5e-4);
  EXPECT_NE(r.out.find("F1-score"), std::string::npos);
}

TEST_F(Cli, EvaluateSegmentationThroughFiles) {
  LabelMask pred(2, 2), gt(2, 2);
  pred.set(0, 0, kAbnormal);
  pred.set(0, 1, kAbnormal);
  gt.set(0, 0, kAbnormal);
  write_mask(pred, dir_ / "img_mask.pgm");
  write_mask(gt, dir_ / "img_gt.pgm");
  ASSERT_EQ(cli("evaluate --pred " + p("img_mask.pgm") + " --gt " +
                p("img_gt.pgm") + " --out " + p("r.json"))
                .code,
            0);
  const auto j = read_json_file(dir_ / "r.json")["pooled"];
  EXPECT_NEAR(j["dice"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(j["iou"], 0.5);
  EXPECT_EQ(j["rvd"], 1.0);
}

// Manifest whose segmentation reproduces `pred` exactly under w_V-only
// weights, paired with `gt`.
void write_search_case(const fs::path& dir, const LabelMask& pred,
                       const LabelMask& gt, std::size_t ps) {
  ProbMap px(pred.height(), pred.width(), 2);
  for (std::size_t y = 0; y < pred.height(); ++y)
    for (std::size_t x = 0; x < pred.width(); ++x) {
      px.at(y, x, kAbnormal) = pred.at(y, x) ? 0.9f : 0.1f;
      px.at(y, x, kNormal) = pred.at(y, x) ? 0.1f : 0.9f;
    }
  write_pmap(px, dir / "px.pmap");
  const auto s = grid_shape(pred.height(), pred.width(), ps);
  write_pmap(ProbMap::constant(s.rows, s.cols, std::vector<float>{0.5f, 0.5f}),
             dir / "patch.pmap");
  write_mask(gt, dir / "gt.pgm");
  write_json_file({{"images",
                    {{{"image_id", "c"},
                      {"label", "abnormal"},
                      {"pixel_map", "px.pmap"},
                      {"patch_maps", {"patch.pmap", "patch.pmap", "patch.pmap"}},
                      {"gt_mask", "gt.pgm"}}}}},
                  dir / "manifest.json");
  auto w = HcrfWeights::zero();
  w.w_V = 1.0;
  write_json_file(weights_to_json(w), dir / "weights.json");
}

TEST_F(Cli, GridSearchConstructedSetAndTie) {
  const std::size_t ps = 20;
  LabelMask pred(ps, 3 * ps), gt(ps, 3 * ps);
  auto fill = [&](LabelMask& m, std::size_t tc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) m.set(i / ps, tc * ps + i % ps, kAbnormal);
  };
  fill(pred, 0, 220);
  fill(gt, 0, 220);
  fill(pred, 1, 180);
  fill(gt, 1, 20);
  fill(pred, 2, 380);
  fill(gt, 2, 220);
  write_search_case(dir_, pred, gt, ps);
  const std::string base = "grid-search --manifest " + p("manifest.json") +
                           " --weights " + p("weights.json") +
                           " --patch-size 20 --window 3 ";
  ASSERT_EQ(cli(base + "--out " + p("g.json")).code, 0);
  auto g = read_json_file(dir_ / "g.json");
  EXPECT_EQ(g["table"].size(), 9u);
  EXPECT_EQ(g["best_proportion"], 0.5);
  EXPECT_EQ(g["best_score"], 1.0);

  write_search_case(dir_, LabelMask(ps, 3 * ps), LabelMask(ps, 3 * ps), ps);
  ASSERT_EQ(cli(base + "--objective accuracy --out " + p("t.json")).code, 0);
  g = read_json_file(dir_ / "t.json");
  EXPECT_EQ(g["table"].size(), 9u);
  EXPECT_EQ(g["best_proportion"], 0.1);
  EXPECT_EQ(g["objective"], "accuracy");
}

TEST_F(Cli, SynthTreeIsDeterministic) {
  synth("a", "--noise 0.3 --normal-fraction 0.34");
  synth("b", "--noise 0.3 --normal-fraction 0.34");
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    EXPECT_EQ(read_file_bytes(e.path()),
              read_file_bytes(dir_ / "b" / e.path().filename()));
    ++n;
  }
  EXPECT_EQ(n, 3u * 5 + 4);
  const auto m = read_manifest(dir_ / "a/manifest.json");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].label, kNormal);
  EXPECT_EQ(read_mask(*m[0].gt_mask).count(kAbnormal), 0u);
  EXPECT_EQ(m[1].label, kAbnormal);
  EXPECT_GT(read_mask(*m[1].gt_mask).count(kAbnormal), 0u);
}

}  // namespace
}  // namespace hcrf
