#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mitoda/png_io.hpp"

namespace mitoda::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{200, 200, 200};
inline constexpr Rgb kBlue{31, 119, 180};
inline constexpr Rgb kOrange{255, 127, 14};
inline constexpr Rgb kGreen{44, 160, 44};

/// RGB raster with alpha-blended drawing primitives.
class Canvas {
 public:
  Canvas(std::size_t height, std::size_t width) : h_(height), w_(width), px_(height * width * 3, 255) {}

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }

  void blend(long x, long y, Rgb c, double a = 1.0) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)) * 3];
    const std::array<std::uint8_t, 3> src{c.r, c.g, c.b};
    for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>(std::lround(a * src[k] + (1.0 - a) * p[k]));
  }

  void line(double x0, double y0, double x1, double y1, Rgb c, int thickness = 1, double dash = 0) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    const auto steps = static_cast<long>(std::ceil(len * 2)) + 1;
    for (long i = 0; i <= steps; ++i) {
      const double t = steps == 0 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps);
      if (dash > 0 && std::fmod(t * len, 2 * dash) >= dash) continue;
      const long x = std::lround(x0 + t * (x1 - x0)), y = std::lround(y0 + t * (y1 - y0));
      for (int dy = -(thickness / 2); dy <= thickness / 2; ++dy)
        for (int dx = -(thickness / 2); dx <= thickness / 2; ++dx) set(x + dx, y + dy, c);
    }
  }

  /// Fills between two curves sampled at the same x positions.
  void band(const std::vector<double>& xs, const std::vector<double>& lo, const std::vector<double>& hi, Rgb c,
            double alpha) {
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      const long xa = std::lround(xs[i]), xb = std::lround(xs[i + 1]);
      for (long x = xa; x <= xb; ++x) {
        const double t = xb == xa ? 0.0 : static_cast<double>(x - xa) / static_cast<double>(xb - xa);
        const double top = hi[i] + t * (hi[i + 1] - hi[i]), bot = lo[i] + t * (lo[i + 1] - lo[i]);
        for (long y = std::lround(std::min(top, bot)); y <= std::lround(std::max(top, bot)); ++y)
          blend(x, y, c, alpha);
      }
    }
  }

  /// 3x5 glyphs for digits, '.', '-' and a few letters, scaled by `scale`.
  void text(long x, long y, const std::string& s, Rgb c, int scale = 2) {
    for (char ch : s) {
      if (const auto* g = glyph(ch))
        for (int r = 0; r < 5; ++r)
          for (int col = 0; col < 3; ++col)
            if ((*g)[static_cast<std::size_t>(r)] >> (2 - col) & 1)
              for (int sy = 0; sy < scale; ++sy)
                for (int sx = 0; sx < scale; ++sx) set(x + col * scale + sx, y + r * scale + sy, c);
      x += 4 * scale;
    }
  }

  void save(const std::filesystem::path& path) const { png::write_rgb8(path, h_, w_, px_); }

 private:
  void set(long x, long y, Rgb c) { blend(x, y, c, 1.0); }

  static const std::array<std::uint8_t, 5>* glyph(char ch) {
    static const std::array<std::array<std::uint8_t, 5>, 10> digits{{{7, 5, 5, 5, 7},
                                                                     {2, 6, 2, 2, 7},
                                                                     {7, 1, 7, 4, 7},
                                                                     {7, 1, 7, 1, 7},
                                                                     {5, 5, 7, 1, 1},
                                                                     {7, 4, 7, 1, 7},
                                                                     {7, 4, 7, 5, 7},
                                                                     {7, 1, 1, 1, 1},
                                                                     {7, 5, 7, 5, 7},
                                                                     {7, 5, 7, 1, 7}}};
    static const std::array<std::uint8_t, 5> dot{0, 0, 0, 0, 2}, minus{0, 0, 7, 0, 0}, S{7, 4, 7, 1, 7},
        I{7, 2, 2, 2, 7}, O{7, 5, 5, 5, 7}, U{5, 5, 5, 5, 7}, E{7, 4, 6, 4, 7}, P{7, 5, 7, 4, 4},
        C{7, 4, 4, 4, 7}, H{5, 5, 7, 5, 5};
    if (ch >= '0' && ch <= '9') return &digits[static_cast<std::size_t>(ch - '0')];
    switch (ch) {
      case '.': return &dot;
      case '-': return &minus;
      case 'S': return &S;
      case 'I': return &I;
      case 'O': return &O;
      case 'U': return &U;
      case 'E': return &E;
      case 'P': return &P;
      case 'C': return &C;
      case 'H': return &H;
      default: return nullptr;
    }
  }

  std::size_t h_, w_;
  std::vector<std::uint8_t> px_;
};

struct Series {
  std::string label;
  Rgb color = kBlue;
  std::vector<double> x, mean;
  /// Envelope half-width per point; empty for a bare line.
  std::vector<double> spread;
};

struct Figure {
  std::vector<Series> series;
  /// Horizontal dashed reference line.
  std::optional<double> reference;
  Rgb reference_color = kBlack;
  double y_min = 0.0, y_max = 1.0;
  std::size_t height = 360, width = 640;
};

/// Line chart with shaded mean +/- spread envelopes, a dashed reference line,
/// y ticks at 0.25 steps and x ticks at the first and last epoch.
inline void render(const Figure& fig, const std::filesystem::path& path) {
  Canvas cv(fig.height, fig.width);
  const double left = 56, right = static_cast<double>(fig.width) - 16, top = 16,
               bottom = static_cast<double>(fig.height) - 36;
  double x_lo = 0, x_hi = 1;
  bool any = false;
  for (const auto& s : fig.series)
    for (double x : s.x) {
      x_lo = any ? std::min(x_lo, x) : x;
      x_hi = any ? std::max(x_hi, x) : x;
      any = true;
    }
  if (x_hi <= x_lo) x_hi = x_lo + 1;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (right - left); };
  auto py = [&](double y) {
    const double t = (std::clamp(y, fig.y_min, fig.y_max) - fig.y_min) / (fig.y_max - fig.y_min);
    return bottom - t * (bottom - top);
  };

  for (int k = 0; k <= 4; ++k) {
    const double v = fig.y_min + (fig.y_max - fig.y_min) * k / 4.0;
    cv.line(left, py(v), right, py(v), kGrey);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    cv.text(4, std::lround(py(v)) - 5, buf, kBlack);
  }
  cv.line(left, top, left, bottom, kBlack);
  cv.line(left, bottom, right, bottom, kBlack);
  cv.text(static_cast<long>(left), static_cast<long>(bottom) + 8, std::to_string(std::lround(x_lo)), kBlack);
  const auto hi_label = std::to_string(std::lround(x_hi));
  cv.text(static_cast<long>(right) - 8 * static_cast<long>(hi_label.size()), static_cast<long>(bottom) + 8, hi_label,
          kBlack);

  for (const auto& s : fig.series) {
    if (s.spread.size() != s.mean.size() || s.x.size() < 2) continue;
    std::vector<double> xs, lo, hi;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xs.push_back(px(s.x[i]));
      lo.push_back(py(s.mean[i] - s.spread[i]));
      hi.push_back(py(s.mean[i] + s.spread[i]));
    }
    cv.band(xs, lo, hi, s.color, 0.25);
  }
  if (fig.reference)
    cv.line(left, py(*fig.reference), right, py(*fig.reference), fig.reference_color, 1, 6);
  for (const auto& s : fig.series) {
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
      cv.line(px(s.x[i]), py(s.mean[i]), px(s.x[i + 1]), py(s.mean[i + 1]), s.color, 2);
    if (s.x.size() == 1) cv.line(px(s.x[0]), py(s.mean[0]), px(s.x[0]), py(s.mean[0]), s.color, 3);
  }
  long lx = static_cast<long>(right) - 90;
  // Bottom right: solidity and IoU curves usually sit near the top.
  long ly = static_cast<long>(bottom) - 16 * static_cast<long>(fig.series.size()) - 4;
  for (const auto& s : fig.series) {
    cv.line(static_cast<double>(lx), static_cast<double>(ly + 5), static_cast<double>(lx + 14),
            static_cast<double>(ly + 5), s.color, 3);
    cv.text(lx + 20, ly, s.label, s.color);
    ly += 16;
  }
  cv.save(path);
}

}  // namespace mitoda::plot
