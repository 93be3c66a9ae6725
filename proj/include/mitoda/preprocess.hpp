#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mitoda/dataio.hpp"
#include "mitoda/error.hpp"
#include "mitoda/image.hpp"
#include "mitoda/random.hpp"

namespace mitoda {

inline constexpr std::size_t kHistogramBins = 256;

struct HistogramModel {
  std::array<double, kHistogramBins> bins{};
  bool zero_corrected = false;
  std::size_t regression_window = 10;

  double total() const noexcept {
    double t = 0;
    for (double b : bins) t += b;
    return t;
  }

  /// Cumulative distribution normalised to end at 1.
  std::array<double, kHistogramBins> cdf() const {
    std::array<double, kHistogramBins> c{};
    const double t = total();
    if (t <= 0) throw ArgumentError("histogram has no mass");
    double acc = 0;
    for (std::size_t i = 0; i < kHistogramBins; ++i) {
      acc += bins[i];
      c[i] = acc / t;
    }
    return c;
  }
};

/// Least-squares line through (k, bins[k]) for k = 1..window, evaluated at 0
/// and clamped at zero. Returns 0 when those bins are all empty.
inline double predict_zero_bin(const std::array<double, kHistogramBins>& bins, std::size_t window) {
  window = std::min(window, kHistogramBins - 1);
  if (window == 0) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  bool any = false;
  for (std::size_t k = 1; k <= window; ++k) {
    const double x = static_cast<double>(k), y = bins[k];
    any = any || y > 0;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (!any) return 0.0;
  const double n = static_cast<double>(window);
  const double denom = n * sxx - sx * sx;
  const double slope = denom != 0 ? (n * sxy - sx * sy) / denom : 0.0;
  const double intercept = (sy - slope * sx) / n;
  return std::max(0.0, intercept);
}

/// 256-bin histogram of one slice. With `correct_zeros`, a non-empty zero bin
/// is replaced by its regression prediction from the following bins.
inline HistogramModel slice_histogram(const Plane& img, bool correct_zeros, std::size_t window = 10) {
  HistogramModel h;
  h.regression_window = window;
  for (float v : img.pixels()) h.bins[to_byte(v)] += 1.0;
  if (correct_zeros) {
    h.zero_corrected = true;
    if (h.bins[0] > 0) h.bins[0] = predict_zero_bin(h.bins, window);
  }
  return h;
}

/// Mean of the per-slice histograms of every slice in `stacks`.
inline HistogramModel mean_target_histogram(std::span<const ImageStack> stacks, bool correct_zeros,
                                            std::size_t window = 10) {
  HistogramModel mean;
  mean.zero_corrected = correct_zeros;
  mean.regression_window = window;
  std::size_t n = 0;
  for (const auto& stack : stacks)
    for (const auto& s : stack.slices) {
      const auto h = slice_histogram(s, correct_zeros, window);
      for (std::size_t i = 0; i < kHistogramBins; ++i) mean.bins[i] += h.bins[i];
      ++n;
    }
  if (n == 0) throw ArgumentError("mean_target_histogram needs at least one slice");
  for (auto& b : mean.bins) b /= static_cast<double>(n);
  return mean;
}

inline HistogramModel mean_target_histogram(const ImageStack& stack, bool correct_zeros,
                                            std::size_t window = 10) {
  return mean_target_histogram(std::span<const ImageStack>(&stack, 1), correct_zeros, window);
}

/// Monotone level lookup table taking `source` onto `target`. Each source
/// level is placed at the mid-point of its CDF step, so a one-level image
/// lands on the target median.
inline std::array<std::uint8_t, kHistogramBins> matching_lut(const HistogramModel& source,
                                                             const HistogramModel& target) {
  const auto tcdf = target.cdf();
  const double stotal = source.total();
  std::array<std::uint8_t, kHistogramBins> lut{};
  double below = 0;
  std::size_t j = 0;
  for (std::size_t k = 0; k < kHistogramBins; ++k) {
    const double mid = stotal > 0 ? (below + 0.5 * source.bins[k]) / stotal : 0.0;
    below += source.bins[k];
    while (j + 1 < kHistogramBins && tcdf[j] < mid - 1e-12) ++j;
    lut[k] = static_cast<std::uint8_t>(j);
  }
  return lut;
}

inline Plane histogram_match(const Plane& src, const HistogramModel& target, bool correct_zeros) {
  const auto lut = matching_lut(slice_histogram(src, correct_zeros, target.regression_window), target);
  Plane out(src.height(), src.width());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = to_unit(lut[to_byte(src[i])]);
  return out;
}

inline ImageStack histogram_match(const ImageStack& src, const HistogramModel& target,
                                  bool correct_zeros) {
  ImageStack out;
  out.name = src.name;
  out.padding_mask = src.padding_mask;
  out.slices.reserve(src.depth());
  for (const auto& s : src.slices) out.slices.push_back(histogram_match(s, target, correct_zeros));
  return out;
}

enum class MatchDirection { source_to_target, target_to_source };

inline MatchDirection parse_direction(const std::string& s) {
  if (s == "s2t") return MatchDirection::source_to_target;
  if (s == "t2s") return MatchDirection::target_to_source;
  throw ArgumentError("direction must be s2t or t2s, got '" + s + "'");
}

inline std::string to_string(MatchDirection d) {
  return d == MatchDirection::source_to_target ? "s2t" : "t2s";
}

struct ClaheConfig {
  /// Relative clip limit; values <= 0 disable clipping.
  double clip_limit = 2.0;
  std::size_t tile_grid = 8;
};

/// Contrast limited adaptive histogram equalisation on 8-bit levels, with
/// bilinear blending of neighbouring tile mappings. Images whose sides are not
/// multiples of the grid are reflect-padded internally.
inline Plane clahe(const Plane& img, const ClaheConfig& cfg = {}) {
  const std::size_t grid = std::max<std::size_t>(cfg.tile_grid, 1);
  const std::size_t h = img.height(), w = img.width();
  if (h == 0 || w == 0) return img;
  const std::size_t ph = (h + grid - 1) / grid * grid, pw = (w + grid - 1) / grid * grid;
  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    if (n == 1) return std::ptrdiff_t{0};
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Image<std::uint8_t> levels(ph, pw);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x)
      levels(y, x) = to_byte(img(static_cast<std::size_t>(reflect(static_cast<std::ptrdiff_t>(y),
                                                                  static_cast<std::ptrdiff_t>(h))),
                                 static_cast<std::size_t>(reflect(static_cast<std::ptrdiff_t>(x),
                                                                  static_cast<std::ptrdiff_t>(w)))));

  const std::size_t th = ph / grid, tw = pw / grid, area = th * tw;
  std::size_t clip = 0;
  if (cfg.clip_limit > 0)
    clip = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.clip_limit * static_cast<double>(area) /
                                                           static_cast<double>(kHistogramBins)));

  std::vector<std::array<double, kHistogramBins>> luts(grid * grid);
  for (std::size_t ty = 0; ty < grid; ++ty)
    for (std::size_t tx = 0; tx < grid; ++tx) {
      std::array<std::size_t, kHistogramBins> hist{};
      for (std::size_t y = ty * th; y < (ty + 1) * th; ++y)
        for (std::size_t x = tx * tw; x < (tx + 1) * tw; ++x) ++hist[levels(y, x)];
      if (clip > 0) {
        std::size_t excess = 0;
        for (auto& c : hist)
          if (c > clip) {
            excess += c - clip;
            c = clip;
          }
        const std::size_t each = excess / kHistogramBins;
        std::size_t residual = excess - each * kHistogramBins;
        for (auto& c : hist) c += each;
        if (residual > 0) {
          const std::size_t step = std::max<std::size_t>(kHistogramBins / residual, 1);
          for (std::size_t i = 0; i < kHistogramBins && residual > 0; i += step, --residual) ++hist[i];
        }
      }
      auto& lut = luts[ty * grid + tx];
      std::size_t acc = 0;
      const double scale = 255.0 / static_cast<double>(area);
      for (std::size_t i = 0; i < kHistogramBins; ++i) {
        acc += hist[i];
        lut[i] = std::min(255.0, std::round(static_cast<double>(acc) * scale));
      }
    }

  Plane out(h, w);
  const auto g = static_cast<std::ptrdiff_t>(grid);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(th) - 0.5;
    const auto y1 = static_cast<std::ptrdiff_t>(std::floor(fy));
    const double ay = fy - static_cast<double>(y1);
    const auto ty1 = std::clamp<std::ptrdiff_t>(y1, 0, g - 1), ty2 = std::clamp<std::ptrdiff_t>(y1 + 1, 0, g - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(tw) - 0.5;
      const auto x1 = static_cast<std::ptrdiff_t>(std::floor(fx));
      const double ax = fx - static_cast<double>(x1);
      const auto tx1 = std::clamp<std::ptrdiff_t>(x1, 0, g - 1), tx2 = std::clamp<std::ptrdiff_t>(x1 + 1, 0, g - 1);
      const auto v = levels(y, x);
      const double top = (1 - ax) * luts[ty1 * g + tx1][v] + ax * luts[ty1 * g + tx2][v];
      const double bot = (1 - ax) * luts[ty2 * g + tx1][v] + ax * luts[ty2 * g + tx2][v];
      out(y, x) = to_unit(static_cast<std::uint8_t>(std::lround(std::clamp((1 - ay) * top + ay * bot, 0.0, 255.0))));
    }
  }
  return out;
}

inline ImageStack clahe(const ImageStack& stack, const ClaheConfig& cfg = {}) {
  ImageStack out;
  out.name = stack.name;
  out.padding_mask = stack.padding_mask;
  for (const auto& s : stack.slices) out.slices.push_back(clahe(s, cfg));
  return out;
}

/// Bilinear resampling with half-pixel centres and clamped borders.
inline Plane resize_bilinear(const Plane& src, std::size_t out_h, std::size_t out_w) {
  Plane out(out_h, out_w);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(out_w);
  const auto max_y = static_cast<double>(src.height() - 1), max_x = static_cast<double>(src.width() - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
    const double ay = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
      const double ax = fx - static_cast<double>(x0);
      const double top = (1 - ax) * src(y0, x0) + ax * src(y0, x1);
      const double bot = (1 - ax) * src(y1, x0) + ax * src(y1, x1);
      out(y, x) = static_cast<float>((1 - ay) * top + ay * bot);
    }
  }
  return out;
}

struct DegradationConfig {
  double noise_mean = 0.0;
  /// Standard deviation as a fraction of the [0, 1] intensity range.
  double noise_sigma = 0.1;
  std::size_t scale_factor = 2;
};

/// Noise only: the first half of degrade_for_ssl.
inline Plane add_clamped_noise(const Plane& patch, const DegradationConfig& cfg, std::uint64_t rng_seed) {
  if (cfg.noise_sigma < 0) throw ArgumentError("noise sigma must be non-negative");
  Plane out = patch;
  if (cfg.noise_sigma == 0 && cfg.noise_mean == 0) return out;
  Rng rng(derive_seed(rng_seed, {0x6e6f697365ULL}));
  NormalSampler normal;
  for (auto& v : out.pixels())
    v = static_cast<float>(std::clamp(v + cfg.noise_mean + cfg.noise_sigma * normal(rng), 0.0, 1.0));
  return out;
}

/// Low-resolution input for the super-resolution pretext task: Gaussian
/// noise, clamp, bilinear down-sampling and bilinear up-sampling back.
inline Plane degrade_for_ssl(const Plane& patch, const DegradationConfig& cfg, std::uint64_t rng_seed) {
  if (cfg.scale_factor < 1) throw ArgumentError("scale factor must be >= 1");
  const std::size_t s = cfg.scale_factor;
  if (patch.height() % s != 0 || patch.width() % s != 0)
    throw ArgumentError("patch " + std::to_string(patch.height()) + "x" + std::to_string(patch.width()) +
                        " is not divisible by scale factor " + std::to_string(s));
  Plane noisy = add_clamped_noise(patch, cfg, rng_seed);
  if (s == 1) return noisy;
  const Plane low = resize_bilinear(noisy, patch.height() / s, patch.width() / s);
  Plane out = resize_bilinear(low, patch.height(), patch.width());
  for (auto& v : out.pixels()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace mitoda
