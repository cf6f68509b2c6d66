#pragma once

// Classification and segmentation criteria built on confusion counts.
//
// Classification: the NORMAL class is the positive class.
// Segmentation:   the abnormal foreground is the positive class.
//
// A ratio whose denominator is zero is reported as std::nullopt, never 0.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hcrf/core.hpp"
#include "hcrf/cpel.hpp"

namespace hcrf {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  friend bool operator==(const ConfusionCounts&,
                         const ConfusionCounts&) = default;
};

using Metric = std::optional<double>;

struct EvalReport {
  ConfusionCounts counts;
  Metric accuracy;
  Metric sensitivity;
  Metric specificity;
  Metric precision;
  Metric f1;
  // Segmentation only.
  bool segmentation = false;
  Metric dice;
  Metric iou;
  Metric rvd;
  Metric recall;
};

namespace detail {

inline Metric ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace detail

inline EvalReport classification_metrics(const ConfusionCounts& n) {
  if (n.total() == 0) throw RangeError("confusion counts are all zero");
  EvalReport r;
  r.counts = n;
  r.accuracy = detail::ratio(n.tp + n.tn, n.total());
  r.sensitivity = detail::ratio(n.tp, n.tp + n.fn);
  r.specificity = detail::ratio(n.tn, n.tn + n.fp);
  r.precision = detail::ratio(n.tp, n.tp + n.fp);
  if (r.precision && r.sensitivity) {
    const double s = *r.precision + *r.sensitivity;
    // P = R = 0 means TP = 0 with errors on both sides; the harmonic mean
    // is 0 there (2TP / (2TP + FP + FN)).
    r.f1 = s > 0.0 ? 2.0 * *r.precision * *r.sensitivity / s : 0.0;
  }
  return r;
}

// Pixelwise counts, abnormal foreground positive.
inline ConfusionCounts pixel_counts(const LabelMask& pred,
                                    const LabelMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw DimensionError("prediction and ground truth differ in size");
  if (pred.num_classes() != 2 || gt.num_classes() != 2)
    throw DimensionError("segmentation metrics need 2-class masks");
  ConfusionCounts n;
  const auto p = pred.labels();
  const auto g = gt.labels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pf = p[i] == kAbnormal;
    const bool gf = g[i] == kAbnormal;
    if (pf && gf) ++n.tp;
    else if (pf) ++n.fp;
    else if (gf) ++n.fn;
    else ++n.tn;
  }
  return n;
}

// Segmentation criteria from (possibly pooled) pixel counts.
inline EvalReport segmentation_report(const ConfusionCounts& n) {
  EvalReport r = classification_metrics(n);
  r.segmentation = true;
  r.recall = r.sensitivity;
  r.dice = detail::ratio(2 * n.tp, 2 * n.tp + n.fp + n.fn);
  r.iou = detail::ratio(n.tp, n.tp + n.fp + n.fn);
  const std::uint64_t pred_fg = n.tp + n.fp;
  const std::uint64_t gt_fg = n.tp + n.fn;
  if (gt_fg > 0)
    r.rvd = std::abs(static_cast<double>(pred_fg) -
                     static_cast<double>(gt_fg)) /
            static_cast<double>(gt_fg);
  return r;
}

inline EvalReport segmentation_metrics(const LabelMask& pred,
                                       const LabelMask& gt) {
  return segmentation_report(pixel_counts(pred, gt));
}

// Image-level counts with normal as the positive class. Every decision must
// have a label and every label a decision.
inline ConfusionCounts confusion_from_decisions(
    std::span<const ImageDecision> decisions,
    const std::map<std::string, std::uint16_t>& true_labels) {
  if (decisions.empty()) throw RangeError("no decisions to evaluate");
  ConfusionCounts n;
  std::set<std::string> seen;
  for (const auto& d : decisions) {
    const auto it = true_labels.find(d.image_id);
    if (it == true_labels.end())
      throw RangeError("decision for unknown image_id '" + d.image_id + "'");
    if (!seen.insert(d.image_id).second)
      throw RangeError("duplicate decision for image_id '" + d.image_id + "'");
    const bool truth_normal = it->second == kNormal;
    const bool pred_normal = d.predicted_class == kNormal;
    if (truth_normal && pred_normal) ++n.tp;
    else if (truth_normal) ++n.fn;
    else if (pred_normal) ++n.fp;
    else ++n.tn;
  }
  for (const auto& [id, label] : true_labels)
    if (!seen.contains(id))
      throw RangeError("no decision for labelled image_id '" + id + "'");
  return n;
}

// Two-column plain-text table, one criterion per row.
inline std::string format_report_table(const EvalReport& r) {
  std::vector<std::pair<std::string, Metric>> rows;
  if (r.segmentation) {
    rows = {{"Dice", r.dice},           {"IoU", r.iou},
            {"Precision", r.precision}, {"Recall", r.recall},
            {"Specificity", r.specificity}, {"RVD", r.rvd},
            {"Accuracy", r.accuracy}};
  } else {
    rows = {{"Accuracy", r.accuracy},
            {"Sensitivity", r.sensitivity},
            {"Specificity", r.specificity},
            {"Precision", r.precision},
            {"F1-score", r.f1}};
  }
  std::string out;
  char line[96];
  std::snprintf(line, sizeof line, "%-12s %12s\n", "Criterion", "Value");
  out += line;
  out += std::string(25, '-') + "\n";
  for (const auto& [name, v] : rows) {
    if (v)
      std::snprintf(line, sizeof line, "%-12s %12.4f\n", name.c_str(), *v);
    else
      std::snprintf(line, sizeof line, "%-12s %12s\n", name.c_str(),
                    "undefined");
    out += line;
  }
  std::snprintf(line, sizeof line, "TP=%llu TN=%llu FP=%llu FN=%llu\n",
                static_cast<unsigned long long>(r.counts.tp),
                static_cast<unsigned long long>(r.counts.tn),
                static_cast<unsigned long long>(r.counts.fp),
                static_cast<unsigned long long>(r.counts.fn));
  out += line;
  return out;
}

}  // namespace hcrf
