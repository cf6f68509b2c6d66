#pragma once

// Image-level decision from patch-level class probabilities: per class, the
// sum over patches of log-probabilities; the image takes the class with the
// largest sum. Equivalent to comparing the products of patch probabilities
// without their underflow.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hcrf/core.hpp"
#include "hcrf/inference.hpp"

namespace hcrf {

struct ImageDecision {
  std::string image_id;
  std::vector<double> log_scores;  // per class
  std::size_t predicted_class = 0;
  std::size_t patch_count = 0;

  // exp(log_score) per class: the plain product of patch probabilities.
  // Underflows to 0 for long patch sequences.
  std::vector<double> product_scores() const {
    std::vector<double> out;
    out.reserve(log_scores.size());
    for (double s : log_scores) out.push_back(std::exp(s));
    return out;
  }

  friend bool operator==(const ImageDecision&, const ImageDecision&) = default;
};

using PatchProbs = std::vector<std::vector<double>>;

inline ImageDecision cpel_classify(const PatchProbs& patch_probs,
                                   double epsilon = kDefaultEpsilon,
                                   std::string image_id = {}) {
  if (patch_probs.empty())
    throw DimensionError("CPEL needs at least one patch");
  const std::size_t k = patch_probs.front().size();
  if (k < 2) throw DimensionError("CPEL needs at least 2 classes");

  ImageDecision d;
  d.image_id = std::move(image_id);
  d.patch_count = patch_probs.size();
  d.log_scores.assign(k, 0.0);
  for (std::size_t i = 0; i < patch_probs.size(); ++i) {
    const auto& p = patch_probs[i];
    if (p.size() != k)
      throw DimensionError("patch " + std::to_string(i) + " has " +
                           std::to_string(p.size()) + " classes, expected " +
                           std::to_string(k));
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0))
        throw RangeError("patch " + std::to_string(i) +
                         " has a probability outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw RangeError("patch " + std::to_string(i) +
                       " probabilities sum to " + std::to_string(sum));
    for (std::size_t j = 0; j < k; ++j)
      d.log_scores[j] += std::log(std::max(p[j], epsilon));
  }
  d.predicted_class = arg_max(d.log_scores, TieBreak::lowest_index);
  return d;
}

// One probability vector per tile of a patch-resolution map, row-major.
inline PatchProbs tile_probs(const ProbMap& patch_map) {
  PatchProbs out;
  out.reserve(patch_map.sites());
  for (std::size_t r = 0; r < patch_map.height(); ++r)
    for (std::size_t c = 0; c < patch_map.width(); ++c) {
      const auto s = patch_map.site(r, c);
      out.emplace_back(s.begin(), s.end());
    }
  return out;
}

}  // namespace hcrf
