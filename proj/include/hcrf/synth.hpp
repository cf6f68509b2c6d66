#pragma once

// Seeded synthetic fixtures: ground-truth masks, probability maps that stand
// in for trained networks, and a brute-force MAP oracle.
//
// Randomness comes from std::mt19937_64, whose output sequence is fixed by
// the C++ standard for a given seed. Only raw 64-bit outputs are used; the
// conversions below are integer arithmetic plus one exact scaling, so
// streams reproduce bit-for-bit on every conforming platform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "hcrf/attention.hpp"
#include "hcrf/core.hpp"
#include "hcrf/inference.hpp"
#include "hcrf/potentials.hpp"

namespace hcrf {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw RangeError("below(0)");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct GroundTruthSpec {
  std::size_t height = 512;
  std::size_t width = 512;
  std::size_t blob_count = 4;
  double blob_scale = 48.0;  // mean ellipse radius in pixels
  std::uint64_t seed = 0;
  // Accepted foreground fraction band; candidates outside are resampled.
  std::optional<std::pair<double, double>> fraction_band;
  std::size_t max_attempts = 1000;
};

struct GroundTruth {
  LabelMask mask;
  double foreground_fraction = 0.0;
  std::size_t attempts = 1;
};

namespace detail {

// 3x3 majority vote (5 of 9, in-bounds cells counted out of 9).
inline LabelMask majority_smooth(const LabelMask& in) {
  LabelMask out(in.height(), in.width(), 2);
  const auto h = static_cast<std::ptrdiff_t>(in.height());
  const auto w = static_cast<std::ptrdiff_t>(in.width());
  for (std::ptrdiff_t r = 0; r < h; ++r)
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      int votes = 0;
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const auto nr = r + dr, nc = c + dc;
          if (nr >= 0 && nc >= 0 && nr < h && nc < w)
            votes += in.at(static_cast<std::size_t>(nr),
                           static_cast<std::size_t>(nc)) == kAbnormal;
        }
      if (votes >= 5)
        out.set(static_cast<std::size_t>(r), static_cast<std::size_t>(c),
                kAbnormal);
    }
  return out;
}

inline LabelMask draw_blobs(const GroundTruthSpec& spec, Rng& rng) {
  LabelMask mask(spec.height, spec.width, 2);
  for (std::size_t b = 0; b < spec.blob_count; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(spec.height));
    const double cx = rng.uniform(0.0, static_cast<double>(spec.width));
    const double ry = std::max(1.0, spec.blob_scale * rng.uniform(0.5, 1.5));
    const double rx = std::max(1.0, spec.blob_scale * rng.uniform(0.5, 1.5));
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - ry)));
    const auto y1 = static_cast<std::size_t>(
        std::min(static_cast<double>(spec.height), std::ceil(cy + ry + 1)));
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - rx)));
    const auto x1 = static_cast<std::size_t>(
        std::min(static_cast<double>(spec.width), std::ceil(cx + rx + 1)));
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) {
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) mask.set(y, x, kAbnormal);
      }
  }
  return majority_smooth(mask);
}

}  // namespace detail

inline GroundTruth gen_ground_truth(const GroundTruthSpec& spec) {
  if (spec.height == 0 || spec.width == 0)
    throw RangeError("ground truth needs a nonzero area");
  if (spec.blob_scale <= 0.0) throw RangeError("blob_scale must be positive");
  Rng rng(spec.seed);
  const double area = static_cast<double>(spec.height * spec.width);
  for (std::size_t attempt = 1; attempt <= std::max<std::size_t>(1, spec.max_attempts);
       ++attempt) {
    auto mask = detail::draw_blobs(spec, rng);
    const double frac = static_cast<double>(mask.count(kAbnormal)) / area;
    if (!spec.fraction_band || (frac >= spec.fraction_band->first &&
                                frac <= spec.fraction_band->second))
      return {std::move(mask), frac, attempt};
  }
  throw RangeError("no blob layout within the requested foreground band after " +
                   std::to_string(spec.max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Probability maps
// ---------------------------------------------------------------------------

struct SyntheticMaps {
  ProbMap pixel_map;
  BackboneMaps patch_maps;
};

namespace detail {

inline void set_binary_site(ProbMap& m, std::size_t r, std::size_t c,
                            double p_abnormal, double epsilon) {
  const double p = std::clamp(p_abnormal, epsilon, 1.0 - epsilon);
  const float abn = static_cast<float>(p);
  m.at(r, c, kAbnormal) = abn;
  m.at(r, c, kNormal) = static_cast<float>(1.0 - static_cast<double>(abn));
}

}  // namespace detail

// Pixel map: p(abnormal) = (1 - noise) * gt + noise * u.
// Patch maps (grid resolution): each backbone blends the tile's ground-truth
// abnormal fraction with its own independent noise the same way.
inline SyntheticMaps gen_probmaps(const LabelMask& gt, double noise,
                                  std::uint64_t seed, std::size_t patch_size,
                                  double epsilon = kDefaultEpsilon) {
  if (!(noise >= 0.0 && noise <= 1.0))
    throw RangeError("noise level must lie in [0,1]");
  if (gt.num_classes() != 2)
    throw DimensionError("synthetic maps need a 2-class mask");
  Rng rng(seed);
  SyntheticMaps out;
  out.pixel_map = ProbMap(gt.height(), gt.width(), 2);
  for (std::size_t r = 0; r < gt.height(); ++r)
    for (std::size_t c = 0; c < gt.width(); ++c) {
      const double g = gt.at(r, c) == kAbnormal ? 1.0 : 0.0;
      detail::set_binary_site(out.pixel_map, r, c,
                              (1.0 - noise) * g + noise * rng.uniform(),
                              epsilon);
    }

  const auto fractions = tile_abnormal_fractions(gt, patch_size);
  const auto shape = grid_shape(gt.height(), gt.width(), patch_size);
  for (auto& m : out.patch_maps) {
    m = ProbMap(shape.rows, shape.cols, 2);
    for (std::size_t r = 0; r < shape.rows; ++r)
      for (std::size_t c = 0; c < shape.cols; ++c)
        detail::set_binary_site(
            m, r, c,
            (1.0 - noise) * fractions[r * shape.cols + c] +
                noise * rng.uniform(),
            epsilon);
  }
  return out;
}

// Map with independent uniform-then-normalized distributions per site.
inline ProbMap random_probmap(std::size_t height, std::size_t width,
                              std::size_t num_classes, Rng& rng) {
  ProbMap m(height, width, num_classes);
  std::vector<double> u(num_classes);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      double sum = 0.0;
      for (auto& v : u) sum += (v = rng.uniform() + 1e-3);
      for (std::size_t k = 0; k < num_classes; ++k)
        m.at(r, c, k) = static_cast<float>(u[k] / sum);
    }
  return m;
}

// ---------------------------------------------------------------------------
// Brute-force MAP oracle
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxBruteForceSites = 16;

// Enumerates every labeling of a grid-mode instance and scores it by the
// explicit product of all potential terms in extended precision. Potentials
// are recomputed here from the raw maps with direct loops and std::pow.
// Exact score ties go to the labeling that wins under config.tie_break
// applied site by site (lexicographically first or last in enumeration).
inline LabelMask brute_force_map(const SegmentInputs& in,
                                 const HcrfWeights& weights,
                                 const PipelineConfig& config) {
  if (config.patch_mode != PatchMode::grid)
    throw ConfigError("brute-force oracle supports grid mode only");
  const auto& px = in.pixel_map;
  const std::size_t h = px.height(), w = px.width(), k = px.num_classes();
  const std::size_t n = h * w;
  if (n > kMaxBruteForceSites)
    throw RangeError("brute-force oracle limited to " +
                     std::to_string(kMaxBruteForceSites) + " sites, got " +
                     std::to_string(n));
  std::uint64_t states = 1;
  for (std::size_t i = 0; i < n; ++i) {
    states *= k;
    if (states > (1u << 20)) throw RangeError("too many labelings to enumerate");
  }

  const double eps = config.epsilon;
  const auto ps = config.patch_size;
  const std::size_t prow = h / ps, pcol = w / ps;
  const auto half = static_cast<std::ptrdiff_t>(config.pixel_window / 2);
  auto clamp_pow = [&](double p, double e) {
    return static_cast<long double>(std::pow(std::max(p, eps), e));
  };

  // factor[site][term][class]
  std::vector<std::array<std::vector<long double>, 4>> factor(n);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto& f = factor[y * w + x];
      for (auto& t : f) t.assign(k, 1.0L);
      for (std::size_t c = 0; c < k; ++c) {
        f[0][c] = clamp_pow(px.at(y, x, c), weights.w_V);

        double sum = 0.0;
        int cnt = 0;
        for (std::ptrdiff_t dy = -half; dy <= half; ++dy)
          for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
            const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
            if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) ||
                nx >= static_cast<std::ptrdiff_t>(w))
              continue;
            sum += px.at(static_cast<std::size_t>(ny),
                         static_cast<std::size_t>(nx), c);
            ++cnt;
          }
        if (cnt > 0) f[1][c] = clamp_pow(sum / cnt, weights.w_E);

        const std::size_t ty = y / ps, tx = x / ps;
        if (ty >= prow || tx >= pcol) continue;
        long double unary = 1.0L, binary = 1.0L;
        bool any_neighbour = false;
        for (std::size_t b = 0; b < kBackbones; ++b) {
          const auto& pm = in.patch_maps[b];
          unary *= clamp_pow(pm.at(ty, tx, c), weights.w_m[b]);
          double s = 0.0;
          int nb = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dy == 0 && dx == 0) continue;
              const long ny = static_cast<long>(ty) + dy;
              const long nx = static_cast<long>(tx) + dx;
              if (ny < 0 || nx < 0 || ny >= static_cast<long>(prow) ||
                  nx >= static_cast<long>(pcol))
                continue;
              s += pm.at(static_cast<std::size_t>(ny),
                         static_cast<std::size_t>(nx), c);
              ++nb;
            }
          if (nb > 0) {
            any_neighbour = true;
            binary *= clamp_pow(s / nb, weights.w_mn[b]);
          }
        }
        f[2][c] = std::pow(unary, static_cast<long double>(weights.w_VP));
        if (any_neighbour)
          f[3][c] = std::pow(binary, static_cast<long double>(weights.w_EP));
      }
    }

  std::vector<std::uint16_t> labels(n, 0), best(n, 0);
  long double best_score = -1.0L;
  for (std::uint64_t s = 0; s < states; ++s) {
    // Site 0 is the most significant digit: lexicographic order.
    std::uint64_t code = s;
    for (std::size_t i = n; i-- > 0;) {
      labels[i] = static_cast<std::uint16_t>(code % k);
      code /= k;
    }
    long double score = 1.0L;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < 4; ++t) score *= factor[i][t][labels[i]];
    const bool better = config.tie_break == TieBreak::lowest_index
                            ? score > best_score
                            : score >= best_score;
    if (better) {
      best_score = score;
      best = labels;
    }
  }
  return {h, w, k, std::move(best)};
}

}  // namespace hcrf
