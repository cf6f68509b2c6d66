#pragma once

// Attention patches: tiles whose predicted abnormal area exceeds a
// proportion, plus the grid search that picks that proportion.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcrf/core.hpp"
#include "hcrf/inference.hpp"
#include "hcrf/metrics.hpp"

namespace hcrf {

// Label 1 where p(abnormal) > threshold (strict), else 0.
inline LabelMask binarize(const Posterior& posterior, double threshold) {
  if (posterior.num_classes() != 2)
    throw DimensionError("binarize needs a 2-class posterior, got " +
                         std::to_string(posterior.num_classes()));
  LabelMask mask(posterior.height(), posterior.width(), 2);
  for (std::size_t r = 0; r < posterior.height(); ++r)
    for (std::size_t c = 0; c < posterior.width(); ++c)
      if (posterior.at(r, c, kAbnormal) > threshold) mask.set(r, c, kAbnormal);
  return mask;
}

// Abnormal pixel fraction of every full tile, row-major.
inline std::vector<double> tile_abnormal_fractions(const LabelMask& mask,
                                                   std::size_t patch_size) {
  if (mask.num_classes() != 2)
    throw DimensionError("attention selection needs a 2-class mask");
  const auto shape = grid_shape(mask.height(), mask.width(), patch_size);
  if (shape.rows == 0 || shape.cols == 0)
    throw ConfigError("patch size " + std::to_string(patch_size) +
                      " exceeds the " + std::to_string(mask.height()) + "x" +
                      std::to_string(mask.width()) + " image");
  std::vector<std::size_t> counts(shape.rows * shape.cols, 0);
  const std::size_t covered_h = shape.rows * patch_size;
  const std::size_t covered_w = shape.cols * patch_size;
  for (std::size_t y = 0; y < covered_h; ++y)
    for (std::size_t x = 0; x < covered_w; ++x)
      if (mask.at(y, x) == kAbnormal)
        ++counts[(y / patch_size) * shape.cols + x / patch_size];
  const double area = static_cast<double>(patch_size * patch_size);
  std::vector<double> fractions(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    fractions[i] = static_cast<double>(counts[i]) / area;
  return fractions;
}

inline PatchGrid select_attention_patches(const LabelMask& mask,
                                          std::size_t patch_size,
                                          double attention_threshold) {
  const auto fractions = tile_abnormal_fractions(mask, patch_size);
  const auto shape = grid_shape(mask.height(), mask.width(), patch_size);
  PatchGrid grid;
  grid.patch_size = patch_size;
  grid.rows = shape.rows;
  grid.cols = shape.cols;
  grid.threshold = attention_threshold;
  grid.patches.reserve(fractions.size());
  for (std::size_t r = 0; r < shape.rows; ++r)
    for (std::size_t c = 0; c < shape.cols; ++c) {
      const double f = fractions[r * shape.cols + c];
      grid.patches.push_back({r, c, f, f > attention_threshold, std::nullopt});
    }
  return grid;
}

// ---------------------------------------------------------------------------
// Threshold grid search
// ---------------------------------------------------------------------------

enum class Objective { f1, accuracy, iou };

inline std::optional<Objective> parse_objective(const std::string& s) {
  if (s == "f1") return Objective::f1;
  if (s == "accuracy") return Objective::accuracy;
  if (s == "iou") return Objective::iou;
  return std::nullopt;
}

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::f1: return "f1";
    case Objective::accuracy: return "accuracy";
    case Objective::iou: return "iou";
  }
  return "?";
}

struct MaskPair {
  LabelMask pred;
  LabelMask gt;
};

struct ProportionScore {
  double proportion = 0.0;
  ConfusionCounts counts;  // abnormal (attention) patch positive
  Metric score;
};

struct GridSearchResult {
  Objective objective = Objective::f1;
  double best_proportion = 0.1;
  Metric best_score;
  std::vector<ProportionScore> table;
};

// Proportions 0.1, 0.2, ..., 0.9.
inline std::vector<double> default_proportions() {
  std::vector<double> p;
  for (int i = 1; i <= 9; ++i) p.push_back(i / 10.0);
  return p;
}

// Scores every proportion on pooled patch-level counts: a predicted patch is
// selected when its predicted fraction exceeds the proportion, a ground-truth
// patch is abnormal when its ground-truth fraction exceeds the same
// proportion. Returns the best proportion; ties go to the smallest, and an
// undefined score ranks below every defined one.
inline GridSearchResult grid_search_threshold(
    std::span<const MaskPair> pairs, std::size_t patch_size,
    Objective objective = Objective::f1) {
  if (pairs.empty()) throw RangeError("grid search needs at least one pair");

  std::vector<std::vector<double>> pred_fr, gt_fr;
  for (const auto& p : pairs) {
    if (p.pred.height() != p.gt.height() || p.pred.width() != p.gt.width())
      throw DimensionError("prediction and ground truth differ in size");
    pred_fr.push_back(tile_abnormal_fractions(p.pred, patch_size));
    gt_fr.push_back(tile_abnormal_fractions(p.gt, patch_size));
  }

  GridSearchResult result;
  result.objective = objective;
  bool have_best = false;
  for (double t : default_proportions()) {
    ProportionScore row;
    row.proportion = t;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      for (std::size_t j = 0; j < pred_fr[i].size(); ++j) {
        const bool sel = pred_fr[i][j] > t;
        const bool truth = gt_fr[i][j] > t;
        if (sel && truth) ++row.counts.tp;
        else if (sel) ++row.counts.fp;
        else if (truth) ++row.counts.fn;
        else ++row.counts.tn;
      }
    const auto rep = classification_metrics(row.counts);
    switch (objective) {
      case Objective::f1: row.score = rep.f1; break;
      case Objective::accuracy: row.score = rep.accuracy; break;
      case Objective::iou:
        row.score = detail::ratio(row.counts.tp,
                                  row.counts.tp + row.counts.fp + row.counts.fn);
        break;
    }
    if (row.score && (!have_best || *row.score > *result.best_score)) {
      have_best = true;
      result.best_score = row.score;
      result.best_proportion = t;
    }
    result.table.push_back(row);
  }
  if (!have_best) result.best_proportion = result.table.front().proportion;
  return result;
}

}  // namespace hcrf
