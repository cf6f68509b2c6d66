#pragma once

// Fusion of the four potentials into a per-pixel posterior and MAP labeling.
//
// With neighbourhood-averaged binary terms each pixel's score depends only
// on its own label, so the joint posterior factorizes over sites. The
// partition function then reduces to a per-site normalizer and the global
// MAP labeling is the per-site arg max.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "hcrf/core.hpp"
#include "hcrf/potentials.hpp"

namespace hcrf {

// log(sum(exp(x))) without overflow. Empty input gives -inf.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Per-site normalized class probabilities at pixel resolution, same layout
// as ProbMap but double precision.
class Posterior {
 public:
  Posterior() = default;
  Posterior(std::size_t height, std::size_t width, std::size_t num_classes)
      : height_(height),
        width_(width),
        num_classes_(num_classes),
        probs_(height * width * num_classes, 0.0) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t num_classes() const { return num_classes_; }

  double at(std::size_t row, std::size_t col, std::size_t cls) const {
    return probs_[(row * width_ + col) * num_classes_ + cls];
  }
  double& at(std::size_t row, std::size_t col, std::size_t cls) {
    return probs_[(row * width_ + col) * num_classes_ + cls];
  }
  std::span<const double> site(std::size_t row, std::size_t col) const {
    return {probs_.data() + (row * width_ + col) * num_classes_, num_classes_};
  }
  std::span<const double> data() const { return probs_; }

  // Narrowed to 32-bit for storage in the PMAP format.
  ProbMap to_probmap() const {
    std::vector<float> data(probs_.begin(), probs_.end());
    return {height_, width_, num_classes_, std::move(data)};
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<double> probs_;
};

// Sums the log-potentials per site and class, then normalizes each site.
inline Posterior fuse(const PotentialField& pixel_unary,
                      const PotentialField& pixel_binary,
                      const PotentialField& patch_unary,
                      const PotentialField& patch_binary) {
  if (!pixel_unary.same_shape(pixel_binary) ||
      !pixel_unary.same_shape(patch_unary) ||
      !pixel_unary.same_shape(patch_binary))
    throw DimensionError("potential fields differ in shape");

  const std::size_t k = pixel_unary.num_classes();
  Posterior post(pixel_unary.height(), pixel_unary.width(), k);
  std::vector<double> scores(k);
  for (std::size_t r = 0; r < post.height(); ++r) {
    for (std::size_t c = 0; c < post.width(); ++c) {
      for (std::size_t cls = 0; cls < k; ++cls)
        scores[cls] = pixel_unary.log_at(r, c, cls) +
                      pixel_binary.log_at(r, c, cls) +
                      patch_unary.log_at(r, c, cls) +
                      patch_binary.log_at(r, c, cls);
      const double z = log_sum_exp(scores);
      for (std::size_t cls = 0; cls < k; ++cls)
        post.at(r, c, cls) = std::exp(scores[cls] - z);
    }
  }
  return post;
}

inline std::size_t arg_max(std::span<const double> values,
                           TieBreak tie = TieBreak::lowest_index) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best] ||
        (tie == TieBreak::highest_index && values[i] == values[best]))
      best = i;
  }
  return best;
}

inline LabelMask map_label(const Posterior& posterior,
                           TieBreak tie = TieBreak::lowest_index) {
  LabelMask mask(posterior.height(), posterior.width(),
                 posterior.num_classes());
  for (std::size_t r = 0; r < posterior.height(); ++r)
    for (std::size_t c = 0; c < posterior.width(); ++c)
      mask.set(r, c,
               static_cast<std::uint16_t>(arg_max(posterior.site(r, c), tie)));
  return mask;
}

struct SegmentInputs {
  ProbMap pixel_map;
  // Patch resolution: floor(H/patch) x floor(W/patch) in grid mode, H x W in
  // centered mode.
  BackboneMaps patch_maps;
};

struct PotentialSet {
  PotentialField pixel_unary;
  PotentialField pixel_binary;
  PotentialField patch_unary;   // broadcast to pixel resolution
  PotentialField patch_binary;  // broadcast to pixel resolution
};

struct SegmentResult {
  LabelMask mask;
  Posterior posterior;
};

inline void validate_inputs(const SegmentInputs& in,
                            const PipelineConfig& config) {
  validate_probmap(in.pixel_map);
  for (const auto& m : in.patch_maps) validate_probmap(m);
  detail::check_backbones(in.patch_maps);
  if (in.patch_maps[0].num_classes() != in.pixel_map.num_classes())
    throw DimensionError("patch maps and pixel map differ in class count");
  const auto h = in.pixel_map.height();
  const auto w = in.pixel_map.width();
  if (config.patch_mode == PatchMode::grid) {
    const auto shape = grid_shape(h, w, config.patch_size);
    if (in.patch_maps[0].height() != shape.rows ||
        in.patch_maps[0].width() != shape.cols)
      throw DimensionError("patch maps must be " + std::to_string(shape.rows) +
                           "x" + std::to_string(shape.cols) +
                           " for this image and patch size");
  } else if (in.patch_maps[0].height() != h || in.patch_maps[0].width() != w) {
    throw DimensionError("centered mode needs dense patch maps of image size");
  }
}

inline PotentialSet compute_potentials(const SegmentInputs& in,
                                       const HcrfWeights& weights,
                                       const PipelineConfig& config) {
  const auto h = in.pixel_map.height();
  const auto w = in.pixel_map.width();
  const double eps = config.epsilon;
  const std::size_t stride =
      config.patch_mode == PatchMode::grid ? 1 : config.patch_size;
  return {
      pixel_unary(in.pixel_map, weights.w_V, eps),
      pixel_binary(in.pixel_map, weights.w_E, config.pixel_window, eps),
      broadcast_patch_field(
          patch_unary(in.patch_maps, weights.w_m, weights.w_VP, eps),
          config.patch_size, config.patch_mode, h, w),
      broadcast_patch_field(
          patch_binary(in.patch_maps, weights.w_mn, weights.w_EP, eps, stride),
          config.patch_size, config.patch_mode, h, w),
  };
}

// Full per-image pipeline: potentials, broadcast, fusion, arg max.
inline SegmentResult segment(const SegmentInputs& in,
                             const HcrfWeights& weights,
                             const PipelineConfig& config) {
  weights.validate();
  config.validate();
  validate_inputs(in, config);
  const auto p = compute_potentials(in, weights, config);
  auto posterior =
      fuse(p.pixel_unary, p.pixel_binary, p.patch_unary, p.patch_binary);
  auto mask = map_label(posterior, config.tie_break);
  return {std::move(mask), std::move(posterior)};
}

}  // namespace hcrf
