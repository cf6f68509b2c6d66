#pragma once

// Shared domain types: probability fields, label masks, patch grids,
// model weights and pipeline configuration.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hcrf {

// Class convention used everywhere in the library.
inline constexpr std::uint16_t kNormal = 0;
inline constexpr std::uint16_t kAbnormal = 1;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Raised when a site's class probabilities do not sum to one. Carries the
// site with the largest deviation.
class DistributionError : public Error {
 public:
  DistributionError(const std::string& what, std::size_t row, std::size_t col,
                    double sum)
      : Error(what), row_(row), col_(col), sum_(sum) {}
  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }
  double sum() const { return sum_; }

 private:
  std::size_t row_;
  std::size_t col_;
  double sum_;
};

// ---------------------------------------------------------------------------
// ProbMap
// ---------------------------------------------------------------------------

// Row-major per-site class probabilities, class index fastest.
class ProbMap {
 public:
  ProbMap() = default;

  ProbMap(std::size_t height, std::size_t width, std::size_t num_classes)
      : height_(height),
        width_(width),
        num_classes_(num_classes),
        data_(height * width * num_classes, 0.0f) {
    check_shape();
  }

  ProbMap(std::size_t height, std::size_t width, std::size_t num_classes,
          std::vector<float> data)
      : height_(height),
        width_(width),
        num_classes_(num_classes),
        data_(std::move(data)) {
    check_shape();
  }

  // Every site carries the same distribution.
  static ProbMap constant(std::size_t height, std::size_t width,
                          std::span<const float> probs) {
    ProbMap m(height, width, probs.size());
    for (std::size_t s = 0; s < height * width; ++s)
      for (std::size_t c = 0; c < probs.size(); ++c)
        m.data_[s * probs.size() + c] = probs[c];
    return m;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t sites() const { return height_ * width_; }

  float at(std::size_t row, std::size_t col, std::size_t cls) const {
    return data_[(row * width_ + col) * num_classes_ + cls];
  }
  float& at(std::size_t row, std::size_t col, std::size_t cls) {
    return data_[(row * width_ + col) * num_classes_ + cls];
  }

  std::span<const float> site(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * width_ + col) * num_classes_, num_classes_};
  }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool same_shape(const ProbMap& o) const {
    return height_ == o.height_ && width_ == o.width_ &&
           num_classes_ == o.num_classes_;
  }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;

 private:
  void check_shape() const {
    if (num_classes_ < 2)
      throw DimensionError("ProbMap needs at least 2 classes, got " +
                           std::to_string(num_classes_));
    if (height_ == 0 || width_ == 0)
      throw DimensionError("ProbMap has zero area");
    if (data_.size() != height_ * width_ * num_classes_)
      throw DimensionError(
          "ProbMap data length " + std::to_string(data_.size()) +
          " != " + std::to_string(height_) + "x" + std::to_string(width_) +
          "x" + std::to_string(num_classes_));
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<float> data_;
};

inline constexpr double kSumTolerance = 1e-5;

// Checks value range and per-site normalization. Returns the map unchanged.
inline const ProbMap& validate_probmap(const ProbMap& map) {
  const auto k = map.num_classes();
  const auto data = map.data();
  if (data.size() != map.sites() * k)
    throw DimensionError("ProbMap data length does not match dimensions");

  double worst_dev = 0.0;
  double worst_sum = 1.0;
  std::size_t worst_site = 0;
  for (std::size_t s = 0; s < map.sites(); ++s) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const float v = data[s * k + c];
      if (!(v >= 0.0f && v <= 1.0f))
        throw RangeError("probability " + std::to_string(v) + " at site (" +
                         std::to_string(s / map.width()) + "," +
                         std::to_string(s % map.width()) +
                         ") class " + std::to_string(c) +
                         " is outside [0,1]");
      sum += v;
    }
    const double dev = std::abs(sum - 1.0);
    if (dev > worst_dev) {
      worst_dev = dev;
      worst_sum = sum;
      worst_site = s;
    }
  }
  if (worst_dev > kSumTolerance) {
    const auto r = worst_site / map.width();
    const auto c = worst_site % map.width();
    throw DistributionError("site (" + std::to_string(r) + "," +
                                std::to_string(c) +
                                ") probabilities sum to " +
                                std::to_string(worst_sum),
                            r, c, worst_sum);
  }
  return map;
}

// ---------------------------------------------------------------------------
// LabelMask
// ---------------------------------------------------------------------------

class LabelMask {
 public:
  LabelMask() = default;

  LabelMask(std::size_t height, std::size_t width, std::size_t num_classes = 2,
            std::uint16_t fill = kNormal)
      : height_(height),
        width_(width),
        num_classes_(num_classes),
        labels_(height * width, fill) {
    if (num_classes_ < 2) throw DimensionError("LabelMask needs >= 2 classes");
    if (fill >= num_classes_) throw RangeError("fill label out of range");
  }

  LabelMask(std::size_t height, std::size_t width, std::size_t num_classes,
            std::vector<std::uint16_t> labels)
      : height_(height),
        width_(width),
        num_classes_(num_classes),
        labels_(std::move(labels)) {
    if (num_classes_ < 2) throw DimensionError("LabelMask needs >= 2 classes");
    if (labels_.size() != height_ * width_)
      throw DimensionError("LabelMask label count does not match dimensions");
    for (auto l : labels_)
      if (l >= num_classes_)
        throw RangeError("label " + std::to_string(l) + " >= num_classes " +
                         std::to_string(num_classes_));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t size() const { return labels_.size(); }

  std::uint16_t at(std::size_t row, std::size_t col) const {
    return labels_[row * width_ + col];
  }
  void set(std::size_t row, std::size_t col, std::uint16_t label) {
    if (label >= num_classes_) throw RangeError("label out of range");
    labels_[row * width_ + col] = label;
  }

  std::span<const std::uint16_t> labels() const { return labels_; }

  std::size_t count(std::uint16_t label) const {
    std::size_t n = 0;
    for (auto l : labels_) n += (l == label);
    return n;
  }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t num_classes_ = 2;
  std::vector<std::uint16_t> labels_;
};

// ---------------------------------------------------------------------------
// PatchGrid
// ---------------------------------------------------------------------------

struct Patch {
  std::size_t row = 0;
  std::size_t col = 0;
  double abnormal_fraction = 0.0;
  bool is_attention = false;
  std::optional<std::vector<double>> class_probs;

  friend bool operator==(const Patch&, const Patch&) = default;
};

// Non-overlapping tiling. Border pixels beyond rows*patch_size or
// cols*patch_size belong to no patch.
struct PatchGrid {
  std::size_t patch_size = 256;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double threshold = 0.5;
  std::vector<Patch> patches;  // row-major

  const Patch& at(std::size_t r, std::size_t c) const {
    return patches[r * cols + c];
  }

  std::size_t attention_count() const {
    std::size_t n = 0;
    for (const auto& p : patches) n += p.is_attention;
    return n;
  }
};

struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

inline GridShape grid_shape(std::size_t height, std::size_t width,
                            std::size_t patch_size) {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  return {height / patch_size, width / patch_size};
}

// ---------------------------------------------------------------------------
// Weights and configuration
// ---------------------------------------------------------------------------

// Backbone order: alpha, beta, gamma.
inline constexpr std::size_t kBackbones = 3;
using BackboneWeights = std::array<double, kBackbones>;

// Exponent weights of the four potentials and of the per-backbone terms
// inside the patch potentials.
struct HcrfWeights {
  double w_V = 1.0;
  double w_E = 0.5;
  double w_VP = 0.5;
  double w_EP = 0.25;
  BackboneWeights w_m{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  BackboneWeights w_mn{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  static HcrfWeights zero() {
    return {0.0, 0.0, 0.0, 0.0, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
  }

  // Multiplies the four potential weights, leaving backbone weights alone.
  HcrfWeights scaled(double lambda) const {
    HcrfWeights w = *this;
    w.w_V *= lambda;
    w.w_E *= lambda;
    w.w_VP *= lambda;
    w.w_EP *= lambda;
    return w;
  }

  void validate() const {
    auto check = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError(std::string("weight ") + name +
                          " must be finite and >= 0");
    };
    check(w_V, "w_V");
    check(w_E, "w_E");
    check(w_VP, "w_VP");
    check(w_EP, "w_EP");
    for (double v : w_m) check(v, "w_m");
    for (double v : w_mn) check(v, "w_mn");
  }

  friend bool operator==(const HcrfWeights&, const HcrfWeights&) = default;
};

enum class PatchMode { grid, centered };
enum class TieBreak { lowest_index, highest_index };

struct PipelineConfig {
  std::size_t patch_size = 256;
  double attention_threshold = 0.5;
  double binarization_threshold = 0.5;
  PatchMode patch_mode = PatchMode::grid;
  double epsilon = 1e-12;
  TieBreak tie_break = TieBreak::lowest_index;
  // Side of the square pixel neighborhood used by the pixel-binary term.
  std::size_t pixel_window = 7;

  void validate() const {
    if (patch_size == 0) throw ConfigError("patch_size must be positive");
    if (!(attention_threshold > 0.0 && attention_threshold < 1.0))
      throw ConfigError("attention_threshold must lie in (0,1)");
    if (!(binarization_threshold > 0.0 && binarization_threshold < 1.0))
      throw ConfigError("binarization_threshold must lie in (0,1)");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw ConfigError("epsilon must be > 0");
    if (pixel_window < 3 || pixel_window % 2 == 0)
      throw ConfigError("pixel_window must be odd and >= 3");
  }

  friend bool operator==(const PipelineConfig&,
                         const PipelineConfig&) = default;
};

}  // namespace hcrf
