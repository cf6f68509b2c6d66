#pragma once

// JSON schemas.
//
// HcrfWeights:
//   {"w_V": 1.0, "w_E": 0.5, "w_VP": 0.5, "w_EP": 0.25,
//    "w_m": [a, b, g], "w_mn": [a, b, g]}
// PipelineConfig:
//   {"patch_size": 256, "attention_threshold": 0.5,
//    "binarization_threshold": 0.5, "patch_mode": "grid" | "centered",
//    "epsilon": 1e-12, "tie_break": "lowest_index" | "highest_index",
//    "pixel_window": 7}
//
// Missing fields keep their defaults; unknown fields are rejected.

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcrf/attention.hpp"
#include "hcrf/core.hpp"
#include "hcrf/cpel.hpp"
#include "hcrf/io.hpp"
#include "hcrf/metrics.hpp"

namespace hcrf {

using nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const char* what) {
  if (!j.is_object())
    throw FormatError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key))
      throw FormatError(std::string(what) + ": unknown field '" + key + "'");
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string(what) + ": field '" + key +
                      "' has the wrong type");
  }
}

inline json metric_json(const Metric& m) {
  return m ? json(*m) : json(nullptr);
}

}  // namespace detail

// --- weights ---------------------------------------------------------------

inline json weights_to_json(const HcrfWeights& w) {
  return {{"w_V", w.w_V},   {"w_E", w.w_E}, {"w_VP", w.w_VP},
          {"w_EP", w.w_EP}, {"w_m", w.w_m}, {"w_mn", w.w_mn}};
}

inline HcrfWeights weights_from_json(const json& j) {
  detail::reject_unknown(j, {"w_V", "w_E", "w_VP", "w_EP", "w_m", "w_mn"},
                         "weights");
  HcrfWeights w;
  detail::read_field(j, "w_V", w.w_V, "weights");
  detail::read_field(j, "w_E", w.w_E, "weights");
  detail::read_field(j, "w_VP", w.w_VP, "weights");
  detail::read_field(j, "w_EP", w.w_EP, "weights");
  detail::read_field(j, "w_m", w.w_m, "weights");
  detail::read_field(j, "w_mn", w.w_mn, "weights");
  w.validate();
  return w;
}

// --- config ----------------------------------------------------------------

inline const char* patch_mode_name(PatchMode m) {
  return m == PatchMode::grid ? "grid" : "centered";
}

inline PatchMode parse_patch_mode(const std::string& s) {
  if (s == "grid") return PatchMode::grid;
  if (s == "centered") return PatchMode::centered;
  throw ConfigError("patch_mode must be 'grid' or 'centered', got '" + s + "'");
}

inline const char* tie_break_name(TieBreak t) {
  return t == TieBreak::lowest_index ? "lowest_index" : "highest_index";
}

inline TieBreak parse_tie_break(const std::string& s) {
  if (s == "lowest_index") return TieBreak::lowest_index;
  if (s == "highest_index") return TieBreak::highest_index;
  throw ConfigError("tie_break must be 'lowest_index' or 'highest_index'");
}

inline json config_to_json(const PipelineConfig& c) {
  return {{"patch_size", c.patch_size},
          {"attention_threshold", c.attention_threshold},
          {"binarization_threshold", c.binarization_threshold},
          {"patch_mode", patch_mode_name(c.patch_mode)},
          {"epsilon", c.epsilon},
          {"tie_break", tie_break_name(c.tie_break)},
          {"pixel_window", c.pixel_window}};
}

inline PipelineConfig config_from_json(const json& j) {
  detail::reject_unknown(
      j,
      {"patch_size", "attention_threshold", "binarization_threshold",
       "patch_mode", "epsilon", "tie_break", "pixel_window"},
      "config");
  PipelineConfig c;
  detail::read_field(j, "patch_size", c.patch_size, "config");
  detail::read_field(j, "attention_threshold", c.attention_threshold, "config");
  detail::read_field(j, "binarization_threshold", c.binarization_threshold,
                     "config");
  detail::read_field(j, "epsilon", c.epsilon, "config");
  detail::read_field(j, "pixel_window", c.pixel_window, "config");
  std::string mode = patch_mode_name(c.patch_mode);
  detail::read_field(j, "patch_mode", mode, "config");
  c.patch_mode = parse_patch_mode(mode);
  std::string tie = tie_break_name(c.tie_break);
  detail::read_field(j, "tie_break", tie, "config");
  c.tie_break = parse_tie_break(tie);
  c.validate();
  return c;
}

// --- attention -------------------------------------------------------------

inline json patch_to_json(const Patch& p) {
  json j = {{"row", p.row},
            {"col", p.col},
            {"abnormal_fraction", p.abnormal_fraction},
            {"is_attention", p.is_attention}};
  if (p.class_probs) j["class_probs"] = *p.class_probs;
  return j;
}

// Full grid plus the selected subset under "attention".
inline json patch_grid_to_json(const PatchGrid& g) {
  json all = json::array();
  json selected = json::array();
  for (const auto& p : g.patches) {
    all.push_back(patch_to_json(p));
    if (p.is_attention) selected.push_back(patch_to_json(p));
  }
  return {{"patch_size", g.patch_size}, {"rows", g.rows},  {"cols", g.cols},
          {"threshold", g.threshold},   {"patches", all}, {"attention", selected}};
}

inline json grid_search_to_json(const GridSearchResult& r) {
  json table = json::array();
  for (const auto& row : r.table)
    table.push_back({{"proportion", row.proportion},
                     {"score", detail::metric_json(row.score)},
                     {"tp", row.counts.tp},
                     {"tn", row.counts.tn},
                     {"fp", row.counts.fp},
                     {"fn", row.counts.fn}});
  return {{"objective", objective_name(r.objective)},
          {"best_proportion", r.best_proportion},
          {"best_score", detail::metric_json(r.best_score)},
          {"table", table}};
}

// --- decisions -------------------------------------------------------------

inline json decision_to_json(const ImageDecision& d) {
  return {{"image_id", d.image_id},
          {"scores", d.log_scores},
          {"product_scores", d.product_scores()},
          {"predicted_class", d.predicted_class},
          {"predicted_label", label_name(static_cast<std::uint16_t>(
                                  d.predicted_class))},
          {"T", d.patch_count}};
}

inline ImageDecision decision_from_json(const json& j) {
  const std::string where = "decision";
  ImageDecision d;
  d.image_id = detail::require_string(j, "image_id", where);
  try {
    d.log_scores = detail::require(j, "scores", where).get<std::vector<double>>();
    d.predicted_class =
        detail::require(j, "predicted_class", where).get<std::size_t>();
    d.patch_count = detail::require(j, "T", where).get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(where + " '" + d.image_id + "': " + e.what());
  }
  return d;
}

// --- reports ---------------------------------------------------------------

inline json report_to_json(const EvalReport& r) {
  json j = {{"tp", r.counts.tp},
            {"tn", r.counts.tn},
            {"fp", r.counts.fp},
            {"fn", r.counts.fn},
            {"accuracy", detail::metric_json(r.accuracy)},
            {"sensitivity", detail::metric_json(r.sensitivity)},
            {"specificity", detail::metric_json(r.specificity)},
            {"precision", detail::metric_json(r.precision)},
            {"f1", detail::metric_json(r.f1)}};
  if (r.segmentation) {
    j["dice"] = detail::metric_json(r.dice);
    j["iou"] = detail::metric_json(r.iou);
    j["rvd"] = detail::metric_json(r.rvd);
    j["recall"] = detail::metric_json(r.recall);
  }
  return j;
}

}  // namespace hcrf
