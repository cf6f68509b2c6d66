#pragma once

// The four potential fields of the hierarchical CRF. Every field is kept in
// the log domain: value(site, class) = log(potential).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hcrf/core.hpp"

namespace hcrf {

class PotentialField {
 public:
  PotentialField() = default;
  PotentialField(std::size_t height, std::size_t width,
                 std::size_t num_classes, double fill = 0.0)
      : height_(height),
        width_(width),
        num_classes_(num_classes),
        log_values_(height * width * num_classes, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t num_classes() const { return num_classes_; }

  double log_at(std::size_t row, std::size_t col, std::size_t cls) const {
    return log_values_[(row * width_ + col) * num_classes_ + cls];
  }
  double& log_at(std::size_t row, std::size_t col, std::size_t cls) {
    return log_values_[(row * width_ + col) * num_classes_ + cls];
  }
  double value_at(std::size_t row, std::size_t col, std::size_t cls) const {
    return std::exp(log_at(row, col, cls));
  }

  std::span<const double> log_values() const { return log_values_; }
  std::span<double> log_values() { return log_values_; }

  bool same_shape(const PotentialField& o) const {
    return height_ == o.height_ && width_ == o.width_ &&
           num_classes_ == o.num_classes_;
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<double> log_values_;
};

// Three patch-resolution maps, one per backbone (alpha, beta, gamma).
using BackboneMaps = std::array<ProbMap, kBackbones>;

namespace detail {

inline double clamped_log(double p, double epsilon) {
  return std::log(std::max(p, epsilon));
}

inline void check_backbones(const BackboneMaps& maps) {
  for (std::size_t b = 1; b < kBackbones; ++b)
    if (!maps[b].same_shape(maps[0]))
      throw DimensionError("backbone patch maps differ in shape");
}

// Summed-area table for one class channel. Entry (r, c) holds the sum over
// rows [0, r) and cols [0, c).
class ChannelIntegral {
 public:
  ChannelIntegral(const ProbMap& map, std::size_t cls)
      : width_(map.width() + 1),
        sums_((map.height() + 1) * (map.width() + 1), 0.0) {
    for (std::size_t r = 0; r < map.height(); ++r) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < map.width(); ++c) {
        row_sum += map.at(r, c, cls);
        sums_[(r + 1) * width_ + (c + 1)] = sums_[r * width_ + (c + 1)] + row_sum;
      }
    }
  }

  // Sum over rows [r0, r1) and cols [c0, c1).
  double box(std::size_t r0, std::size_t c0, std::size_t r1,
             std::size_t c1) const {
    return sums_[r1 * width_ + c1] - sums_[r0 * width_ + c1] -
           sums_[r1 * width_ + c0] + sums_[r0 * width_ + c0];
  }

 private:
  std::size_t width_;
  std::vector<double> sums_;
};

}  // namespace detail

inline constexpr double kDefaultEpsilon = 1e-12;

// Per site and class: w_V * log(max(p, epsilon)).
inline PotentialField pixel_unary(const ProbMap& pixel_map, double w_V,
                                  double epsilon = kDefaultEpsilon) {
  PotentialField out(pixel_map.height(), pixel_map.width(),
                     pixel_map.num_classes());
  const auto src = pixel_map.data();
  auto dst = out.log_values();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = w_V * detail::clamped_log(src[i], epsilon);
  return out;
}

// Mean of each class probability over the window x window box centred on
// every site, centre excluded, in-bounds neighbours only. Sites with no
// neighbours get NaN. Layout matches ProbMap.
inline std::vector<double> pixel_neighborhood_mean(const ProbMap& map,
                                                   std::size_t window) {
  if (window < 3 || window % 2 == 0)
    throw ConfigError("pixel window must be odd and >= 3, got " +
                      std::to_string(window));
  const std::size_t h = map.height();
  const std::size_t w = map.width();
  const std::size_t k = map.num_classes();
  if (window > h && window > w)
    throw ConfigError("pixel window " + std::to_string(window) +
                      " exceeds both image dimensions " + std::to_string(h) +
                      "x" + std::to_string(w));
  const std::size_t half = window / 2;

  std::vector<double> means(h * w * k);
  for (std::size_t cls = 0; cls < k; ++cls) {
    const detail::ChannelIntegral integral(map, cls);
    for (std::size_t r = 0; r < h; ++r) {
      const std::size_t r0 = r >= half ? r - half : 0;
      const std::size_t r1 = std::min(h, r + half + 1);
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t c0 = c >= half ? c - half : 0;
        const std::size_t c1 = std::min(w, c + half + 1);
        const std::size_t count = (r1 - r0) * (c1 - c0) - 1;
        const double sum = integral.box(r0, c0, r1, c1) - map.at(r, c, cls);
        means[(r * w + c) * k + cls] =
            count == 0 ? std::nan("") : sum / static_cast<double>(count);
      }
    }
  }
  return means;
}

// Per site and class: w_E * log(max(neighbourhood mean, epsilon)).
inline PotentialField pixel_binary(const ProbMap& pixel_map, double w_E,
                                   std::size_t window = 7,
                                   double epsilon = kDefaultEpsilon) {
  const auto means = pixel_neighborhood_mean(pixel_map, window);
  PotentialField out(pixel_map.height(), pixel_map.width(),
                     pixel_map.num_classes());
  auto dst = out.log_values();
  for (std::size_t i = 0; i < means.size(); ++i)
    dst[i] = std::isnan(means[i]) ? 0.0
                                  : w_E * detail::clamped_log(means[i], epsilon);
  return out;
}

// Per patch and class:
//   w_VP * sum_b w_m[b] * log(max(p_b, epsilon))
inline PotentialField patch_unary(const BackboneMaps& maps,
                                  const BackboneWeights& w_m, double w_VP,
                                  double epsilon = kDefaultEpsilon) {
  detail::check_backbones(maps);
  const auto& ref = maps[0];
  PotentialField out(ref.height(), ref.width(), ref.num_classes());
  auto dst = out.log_values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    double acc = 0.0;
    for (std::size_t b = 0; b < kBackbones; ++b)
      acc += w_m[b] * detail::clamped_log(maps[b].data()[i], epsilon);
    dst[i] = w_VP * acc;
  }
  return out;
}

// Mean over the eight lattice neighbours of every patch, in-bounds only.
// `stride` is the neighbour offset in field cells: 1 for a tiled grid,
// patch_size for a dense field of pixel-centred patches. Patches with no
// neighbours get NaN.
inline std::vector<double> patch_neighborhood_mean(const ProbMap& map,
                                                   std::size_t stride = 1) {
  if (stride == 0) throw ConfigError("neighbour stride must be positive");
  const std::size_t h = map.height();
  const std::size_t w = map.width();
  const std::size_t k = map.num_classes();
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::vector<double> means(h * w * k);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t cls = 0; cls < k; ++cls) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
          for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const auto nr = static_cast<std::ptrdiff_t>(r) + dr * s;
            const auto nc = static_cast<std::ptrdiff_t>(c) + dc * s;
            if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(h) ||
                nc >= static_cast<std::ptrdiff_t>(w))
              continue;
            sum += map.at(static_cast<std::size_t>(nr),
                          static_cast<std::size_t>(nc), cls);
            ++count;
          }
        }
        means[(r * w + c) * k + cls] =
            count == 0 ? std::nan("") : sum / static_cast<double>(count);
      }
    }
  }
  return means;
}

// Per patch and class:
//   w_EP * sum_b w_mn[b] * log(max(neighbour mean of p_b, epsilon))
// A patch without neighbours gets the neutral potential (log 0).
inline PotentialField patch_binary(const BackboneMaps& maps,
                                   const BackboneWeights& w_mn, double w_EP,
                                   double epsilon = kDefaultEpsilon,
                                   std::size_t stride = 1) {
  detail::check_backbones(maps);
  const auto& ref = maps[0];
  PotentialField out(ref.height(), ref.width(), ref.num_classes());
  auto dst = out.log_values();
  for (std::size_t b = 0; b < kBackbones; ++b) {
    const auto means = patch_neighborhood_mean(maps[b], stride);
    for (std::size_t i = 0; i < dst.size(); ++i)
      if (!std::isnan(means[i]))
        dst[i] += w_mn[b] * detail::clamped_log(means[i], epsilon);
  }
  for (auto& v : dst) v *= w_EP;
  return out;
}

// Lifts a patch-resolution field to pixel resolution.
//
// grid:     pixel (y, x) takes tile (y / patch_size, x / patch_size); pixels
//           outside the tiled area get the neutral potential. The field must
//           be floor(height / patch_size) x floor(width / patch_size).
// centered: the field is dense, one patch per pixel position indexed by its
//           top-left corner (height x width). Pixel (y, x) takes the patch
//           whose top-left is (y - patch_size/2, x - patch_size/2), clipped
//           so the patch stays inside the image.
inline PotentialField broadcast_patch_field(const PotentialField& field,
                                            std::size_t patch_size,
                                            PatchMode mode, std::size_t height,
                                            std::size_t width) {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  const std::size_t k = field.num_classes();
  PotentialField out(height, width, k);

  if (mode == PatchMode::grid) {
    const auto shape = grid_shape(height, width, patch_size);
    if (field.height() != shape.rows || field.width() != shape.cols)
      throw DimensionError(
          "patch field is " + std::to_string(field.height()) + "x" +
          std::to_string(field.width()) + ", expected " +
          std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
          " for a " + std::to_string(height) + "x" + std::to_string(width) +
          " image with patch size " + std::to_string(patch_size));
    const std::size_t covered_h = shape.rows * patch_size;
    const std::size_t covered_w = shape.cols * patch_size;
    for (std::size_t y = 0; y < covered_h; ++y)
      for (std::size_t x = 0; x < covered_w; ++x)
        for (std::size_t c = 0; c < k; ++c)
          out.log_at(y, x, c) = field.log_at(y / patch_size, x / patch_size, c);
    return out;
  }

  if (field.height() != height || field.width() != width)
    throw DimensionError(
        "centered mode needs a dense patch field matching the image (" +
        std::to_string(height) + "x" + std::to_string(width) + "), got " +
        std::to_string(field.height()) + "x" + std::to_string(field.width()));
  const std::size_t half = patch_size / 2;
  const std::size_t max_r = height > patch_size ? height - patch_size : 0;
  const std::size_t max_c = width > patch_size ? width - patch_size : 0;
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t ty = std::min(y >= half ? y - half : 0, max_r);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t tx = std::min(x >= half ? x - half : 0, max_c);
      for (std::size_t c = 0; c < k; ++c)
        out.log_at(y, x, c) = field.log_at(ty, tx, c);
    }
  }
  return out;
}

}  // namespace hcrf
