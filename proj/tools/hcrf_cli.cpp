// hcrf: command-line front end for the segmentation / attention / CPEL
// pipeline. Exit codes: 0 success, 1 data error, 2 usage error. Failures
// print {"error": {...}} on stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hcrf/hcrf.hpp"

namespace {

using namespace hcrf;
using nlohmann::json;

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

struct UsageError : Error {
  using Error::Error;
};

int fail(int code, const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}},
                    {"exit_code", code}}
                   .dump()
            << "\n";
  return code;
}

// --- shared option groups --------------------------------------------------

struct PipelineFlags {
  std::string weights, config;
  std::size_t patch_size = 0;
  std::string patch_mode, tie_break;
  std::size_t window = 0;
  double epsilon = 0, bin_threshold = 0;
  CLI::Option *o_ps = nullptr, *o_mode = nullptr, *o_tie = nullptr,
              *o_win = nullptr, *o_eps = nullptr, *o_bin = nullptr;

  void add(CLI::App* app) {
    app->add_option("--weights", weights, "weights JSON")
        ->check(CLI::ExistingFile);
    app->add_option("--config", config, "pipeline config JSON")
        ->check(CLI::ExistingFile);
    o_ps = app->add_option("--patch-size", patch_size, "patch edge in pixels");
    o_mode = app->add_option("--patch-mode", patch_mode, "grid | centered")
                 ->check(CLI::IsMember({"grid", "centered"}));
    o_win = app->add_option("--window", window, "pixel neighbourhood window");
    o_eps = app->add_option("--epsilon", epsilon, "log clamp");
    o_tie = app->add_option("--tie-break", tie_break,
                            "lowest_index | highest_index")
                ->check(CLI::IsMember({"lowest_index", "highest_index"}));
    o_bin = app->add_option("--binarization-threshold", bin_threshold,
                            "posterior threshold for 2-class masks");
  }

  HcrfWeights load_weights() const {
    return weights.empty() ? HcrfWeights{}
                           : weights_from_json(read_json_file(weights));
  }

  PipelineConfig load_config() const {
    PipelineConfig c =
        config.empty() ? PipelineConfig{} : config_from_json(read_json_file(config));
    if (o_ps->count()) c.patch_size = patch_size;
    if (o_mode->count()) c.patch_mode = parse_patch_mode(patch_mode);
    if (o_win->count()) c.pixel_window = window;
    if (o_eps->count()) c.epsilon = epsilon;
    if (o_tie->count()) c.tie_break = parse_tie_break(tie_break);
    if (o_bin->count()) c.binarization_threshold = bin_threshold;
    c.validate();
    return c;
  }
};

SegmentInputs load_inputs(const ManifestEntry& e) {
  SegmentInputs in;
  in.pixel_map = read_pmap(e.pixel_map);
  for (std::size_t b = 0; b < kBackbones; ++b)
    in.patch_maps[b] = read_pmap(e.patch_maps[b]);
  return in;
}

LabelMask final_mask(const SegmentResult& r, const PipelineConfig& c) {
  if (r.posterior.num_classes() == 2)
    return binarize(r.posterior, c.binarization_threshold);
  return r.mask;
}

// Expands files and directories into a sorted list of files with `ext`.
std::vector<fs::path> collect(const std::vector<std::string>& inputs,
                              const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& s : inputs) {
    const fs::path p(s);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ext)
          out.push_back(e.path());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw IoError("no such file or directory: " + s);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// File stem with a trailing "_mask" or "_gt" removed: the pairing key.
std::string pair_key(const fs::path& p) {
  std::string s = p.stem().string();
  for (const std::string suffix : {"_mask", "_gt"})
    if (s.size() > suffix.size() &&
        s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
      return s.substr(0, s.size() - suffix.size());
  return s;
}

// --- segment ---------------------------------------------------------------

struct SegmentCmd {
  std::string manifest, out_dir;
  PipelineFlags flags;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("segment", "HCRF segmentation of a manifest");
    sub->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    sub->add_option("--out-dir", out_dir)->required();
    flags.add(sub);
    sub->callback([this] { run(); });
  }

  void run() {
    const auto weights = flags.load_weights();
    const auto cfg = flags.load_config();
    const auto entries = read_manifest(manifest);
    fs::create_directories(out_dir);
    json images = json::array();
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& e : entries) {
      const auto t1 = std::chrono::steady_clock::now();
      const auto result = segment(load_inputs(e), weights, cfg);
      const auto mask = final_mask(result, cfg);
      write_mask(mask, fs::path(out_dir) / (e.image_id + "_mask.pgm"));
      write_pmap(result.posterior.to_probmap(),
                 fs::path(out_dir) / (e.image_id + "_posterior.pmap"));
      json row = {{"image_id", e.image_id},
                  {"seconds", std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - t1)
                                  .count()}};
      if (e.gt_mask) {
        const auto gt = read_mask(*e.gt_mask);
        const auto rep = segmentation_metrics(mask, gt);
        row["dice"] = rep.dice ? json(*rep.dice) : json(nullptr);
      }
      images.push_back(row);
    }
    const double total = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    std::cout << json{{"images", images}, {"total_seconds", total}}.dump(2)
              << "\n";
  }
};

// --- attend ----------------------------------------------------------------

struct AttendCmd {
  std::vector<std::string> masks;
  std::size_t patch_size = 256;
  double threshold = 0.5;
  std::string out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("attend", "attention patches from masks");
    sub->add_option("--masks", masks, "PGM files or directories")->required();
    sub->add_option("--patch-size", patch_size)->capture_default_str();
    sub->add_option("--threshold", threshold)->capture_default_str();
    sub->add_option("--out", out)->required();
    sub->callback([this] { run(); });
  }

  void run() {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw UsageError("--threshold must lie in (0,1)");
    json images = json::array();
    for (const auto& p : collect(masks, ".pgm")) {
      auto j = patch_grid_to_json(
          select_attention_patches(read_mask(p), patch_size, threshold));
      j["mask"] = pair_key(p);
      images.push_back(std::move(j));
    }
    if (images.empty()) throw IoError("no .pgm masks found");
    write_json_file({{"patch_size", patch_size},
                     {"threshold", threshold},
                     {"images", images}},
                    out);
  }
};

// --- classify --------------------------------------------------------------

//   {"images": [{"image_id": "img000", "patch_probs": [[p0, p1], ...]}]}
struct ClassifyCmd {
  std::string patch_probs, out;
  double epsilon = kDefaultEpsilon;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("classify", "CPEL image classification");
    sub->add_option("--patch-probs", patch_probs)->required()->check(
        CLI::ExistingFile);
    sub->add_option("--epsilon", epsilon)->capture_default_str();
    sub->add_option("--out", out)->required();
    sub->callback([this] { run(); });
  }

  void run() {
    if (!(epsilon > 0.0 && epsilon < 1.0))
      throw UsageError("--epsilon must lie in (0,1)");
    const auto j = read_json_file(patch_probs);
    const auto& images = detail::require(j, "images", patch_probs);
    if (!images.is_array()) throw FormatError("'images' must be an array");
    std::map<std::string, ImageDecision> decisions;
    for (const auto& e : images) {
      const auto id = detail::require_string(e, "image_id", patch_probs);
      PatchProbs probs;
      try {
        probs = detail::require(e, "patch_probs", patch_probs).get<PatchProbs>();
      } catch (const json::exception& ex) {
        throw FormatError(id + ": " + ex.what());
      }
      if (decisions.contains(id))
        throw FormatError("duplicate image_id '" + id + "'");
      decisions.emplace(id, cpel_classify(probs, epsilon, id));
    }
    json arr = json::array();
    for (const auto& [id, d] : decisions) arr.push_back(decision_to_json(d));
    write_json_file({{"decisions", arr}}, out);
  }
};

// --- evaluate --------------------------------------------------------------

struct EvaluateCmd {
  std::vector<std::string> pred, gt;
  std::string decisions, labels, out;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("evaluate", "classification or segmentation");
    auto* o_pred = sub->add_option("--pred", pred, "predicted mask files/dirs");
    auto* o_gt = sub->add_option("--gt", gt, "ground-truth mask files/dirs");
    auto* o_dec = sub->add_option("--decisions", decisions)->check(
        CLI::ExistingFile);
    auto* o_lab = sub->add_option("--labels", labels, "manifest or labels JSON")
                      ->check(CLI::ExistingFile);
    o_pred->needs(o_gt);
    o_gt->needs(o_pred);
    o_dec->needs(o_lab);
    o_lab->needs(o_dec);
    o_pred->excludes(o_dec);
    sub->add_option("--out", out)->required();
    sub->callback([this] { run(); });
  }

  void run() {
    json result;
    EvalReport report;
    if (!pred.empty()) {
      std::map<std::string, fs::path> p, g;
      for (const auto& f : collect(pred, ".pgm")) p[pair_key(f)] = f;
      for (const auto& f : collect(gt, ".pgm")) g[pair_key(f)] = f;
      if (p.empty()) throw IoError("no predicted masks found");
      ConfusionCounts pooled;
      json per = json::array();
      double dice_sum = 0;
      std::size_t dice_n = 0;
      for (const auto& [key, pf] : p) {
        const auto it = g.find(key);
        if (it == g.end()) throw FormatError("no ground truth for '" + key + "'");
        const auto counts = pixel_counts(read_mask(pf), read_mask(it->second));
        pooled += counts;
        const auto rep = segmentation_report(counts);
        if (rep.dice) {
          dice_sum += *rep.dice;
          ++dice_n;
        }
        auto row = report_to_json(rep);
        row["image_id"] = key;
        per.push_back(row);
      }
      if (g.size() != p.size())
        throw FormatError("ground truth without a matching prediction");
      report = segmentation_report(pooled);
      result = {{"mode", "segmentation"},
                {"pooled", report_to_json(report)},
                {"mean_dice", dice_n ? json(dice_sum / double(dice_n))
                                     : json(nullptr)},
                {"images", per}};
    } else if (!decisions.empty()) {
      std::vector<ImageDecision> ds;
      const auto dj = read_json_file(decisions);
      for (const auto& d : detail::require(dj, "decisions", decisions))
        ds.push_back(decision_from_json(d));
      report = classification_metrics(
          confusion_from_decisions(ds, read_labels(labels)));
      result = {{"mode", "classification"}, {"report", report_to_json(report)}};
    } else {
      throw UsageError("give --pred/--gt or --decisions/--labels");
    }
    write_json_file(result, out);
    std::cout << format_report_table(report);
  }

  // Manifest ("images" with image_id/label) or {"labels": {id: label}}.
  static std::map<std::string, std::uint16_t> read_labels(const fs::path& path) {
    const auto j = read_json_file(path);
    std::map<std::string, std::uint16_t> out;
    auto put = [&](const std::string& id, const std::string& name) {
      const auto l = parse_label(name);
      if (!l) throw FormatError(path.string() + ": bad label '" + name + "'");
      if (!out.emplace(id, *l).second)
        throw FormatError(path.string() + ": duplicate image_id '" + id + "'");
    };
    if (j.contains("labels") && j["labels"].is_object()) {
      for (const auto& [id, v] : j["labels"].items()) {
        if (!v.is_string()) throw FormatError("labels must be strings");
        put(id, v.get<std::string>());
      }
    } else {
      for (const auto& e : detail::require(j, "images", path.string()))
        put(detail::require_string(e, "image_id", path.string()),
            detail::require_string(e, "label", path.string()));
    }
    return out;
  }
};

// --- grid-search -----------------------------------------------------------

struct GridSearchCmd {
  std::string manifest, objective = "f1", out;
  PipelineFlags flags;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("grid-search",
                                   "attention proportion search over a manifest");
    sub->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    sub->add_option("--objective", objective)
        ->check(CLI::IsMember({"f1", "accuracy", "iou"}))
        ->capture_default_str();
    sub->add_option("--out", out)->required();
    flags.add(sub);
    sub->callback([this] { run(); });
  }

  void run() {
    const auto weights = flags.load_weights();
    const auto cfg = flags.load_config();
    std::vector<MaskPair> pairs;
    for (const auto& e : read_manifest(manifest)) {
      if (!e.gt_mask) continue;
      pairs.push_back({final_mask(segment(load_inputs(e), weights, cfg), cfg),
                       read_mask(*e.gt_mask)});
    }
    if (pairs.empty()) throw FormatError("manifest has no ground-truth masks");
    auto j = grid_search_to_json(
        grid_search_threshold(pairs, cfg.patch_size, *parse_objective(objective)));
    j["patch_size"] = cfg.patch_size;
    write_json_file(j, out);
  }
};

// --- synth -----------------------------------------------------------------

struct SynthCmd {
  std::size_t height = 512, width = 512, images = 4, patch_size = 64;
  std::size_t blob_count = 4;
  double blob_scale = 48.0, noise = 0.2, normal_fraction = 0.0;
  std::uint64_t seed = 0;
  std::string out_dir;

  void add(CLI::App& app) {
    auto* sub = app.add_subcommand("synth", "seeded synthetic dataset");
    sub->add_option("--height", height)->capture_default_str();
    sub->add_option("--width", width)->capture_default_str();
    sub->add_option("--images", images)->capture_default_str();
    sub->add_option("--noise", noise, "sigma in [0,1]")->capture_default_str();
    sub->add_option("--seed", seed)->capture_default_str();
    sub->add_option("--patch-size", patch_size)->capture_default_str();
    sub->add_option("--blob-count", blob_count)->capture_default_str();
    sub->add_option("--blob-scale", blob_scale)->capture_default_str();
    sub->add_option("--normal-fraction", normal_fraction,
                    "share of images with an empty ground truth")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->add_option("--out-dir", out_dir)->required();
    sub->callback([this] { run(); });
  }

  void run() {
    if (images == 0) throw UsageError("--images must be positive");
    if (!(noise >= 0.0 && noise <= 1.0))
      throw UsageError("--noise must lie in [0,1]");
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const auto normal_count = static_cast<std::size_t>(
        std::llround(normal_fraction * static_cast<double>(images)));
    Rng master(seed);
    json entries = json::array();
    json probs = json::array();
    const char* names[kBackbones] = {"alpha", "beta", "gamma"};
    for (std::size_t i = 0; i < images; ++i) {
      char id_buf[32];
      std::snprintf(id_buf, sizeof id_buf, "img%03zu", i);
      const std::string id = id_buf;
      const bool normal = i < normal_count;

      GroundTruthSpec spec;
      spec.height = height;
      spec.width = width;
      spec.blob_count = normal ? 0 : blob_count;
      spec.blob_scale = blob_scale;
      spec.seed = master.next();
      if (!normal && blob_count > 0) spec.fraction_band = {{0.01, 0.9}};
      const auto gt = gen_ground_truth(spec);
      const auto maps = gen_probmaps(gt.mask, noise, master.next(), patch_size);

      json e = {{"image_id", id},
                {"label", normal ? "normal" : "abnormal"},
                {"pixel_map", id + "_pixel.pmap"},
                {"patch_maps", json::array()},
                {"gt_mask", id + "_gt.pgm"}};
      write_pmap(maps.pixel_map, dir / (id + "_pixel.pmap"));
      for (std::size_t b = 0; b < kBackbones; ++b) {
        const std::string name = id + "_" + names[b] + ".pmap";
        write_pmap(maps.patch_maps[b], dir / name);
        e["patch_maps"].push_back(name);
      }
      write_mask(gt.mask, dir / (id + "_gt.pgm"));
      entries.push_back(e);

      // Stand-in patch classifier: every tile carries a noisy copy of the
      // image label.
      Rng prng(master.next());
      const double target = normal ? 0.0 : 1.0;
      json tiles = json::array();
      const auto shape = grid_shape(height, width, patch_size);
      for (std::size_t t = 0; t < shape.rows * shape.cols; ++t) {
        const double pa = std::clamp(
            (1.0 - noise) * target + noise * prng.uniform(), 1e-6, 1.0 - 1e-6);
        tiles.push_back({1.0 - pa, pa});
      }
      probs.push_back({{"image_id", id}, {"patch_probs", tiles}});
    }
    write_json_file({{"images", entries}}, dir / "manifest.json");
    write_json_file({{"images", probs}}, dir / "patch_probs.json");
    PipelineConfig cfg;
    cfg.patch_size = patch_size;
    write_json_file(config_to_json(cfg), dir / "config.json");
    write_json_file(weights_to_json(HcrfWeights{}), dir / "weights.json");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HCRF attention pipeline"};
  app.require_subcommand(1);
  SegmentCmd seg;
  AttendCmd att;
  ClassifyCmd cls;
  EvaluateCmd ev;
  GridSearchCmd gs;
  SynthCmd syn;
  seg.add(app);
  att.add(app);
  cls.add(app);
  ev.add(app);
  gs.add(app);
  syn.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitUsage, "usage", e.what());
  } catch (const UsageError& e) {
    return fail(kExitUsage, "usage", e.what());
  } catch (const ConfigError& e) {
    return fail(kExitUsage, "config", e.what());
  } catch (const hcrf::Error& e) {
    return fail(kExitData, "data", e.what());
  } catch (const std::exception& e) {
    return fail(kExitData, "internal", e.what());
  }
  return 0;
}
