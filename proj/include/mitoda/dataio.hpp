#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <toml.hpp>

#include "mitoda/error.hpp"
#include "mitoda/image.hpp"
#include "mitoda/png_io.hpp"
#include "mitoda/random.hpp"

namespace mitoda {

namespace fs = std::filesystem;

/// On-disk dataset layout: `<root>/<image_dir>/*.png`, optional
/// `<root>/<label_dir>/*.png` and a TOML manifest.
struct DatasetLayout {
  std::string image_dir = "x";
  std::string label_dir = "y";
  std::string manifest = "dataset.toml";
  /// Label pixels strictly above this value are foreground.
  int label_threshold = 127;
  /// Reject label files with values outside {0, 255} instead of thresholding.
  bool strict_labels = false;
};

inline float to_unit(std::uint8_t v) noexcept { return static_cast<float>(v) / 255.0f; }

inline std::uint8_t to_byte(float v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Rounds every intensity to the nearest k/255 level.
inline void quantize_8bit(Plane& p) noexcept {
  for (auto& v : p.pixels()) v = to_unit(to_byte(v));
}

namespace detail {

inline std::string lower_ext(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

inline std::vector<fs::path> list_slices(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing slice directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = lower_ext(entry.path());
    if (ext == ".png") {
      files.push_back(entry.path());
    } else if (ext == ".tif" || ext == ".tiff") {
      throw IoError("TIFF slices are not supported by this build, convert " +
                    entry.path().string() + " to PNG");
    }
  }
  if (files.empty()) throw IoError("no slice files in " + dir.string());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::string slice_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "slice_%04zu.png", i);
  return buf;
}

}  // namespace detail

inline AnnotatedDataset load_dataset(const fs::path& root, const DatasetLayout& layout = {}) {
  AnnotatedDataset ds;
  ds.images.name = root.filename().string();
  if (ds.images.name.empty()) ds.images.name = root.parent_path().filename().string();

  const auto manifest_path = root / layout.manifest;
  if (fs::exists(manifest_path)) {
    toml::table tbl;
    try {
      tbl = toml::parse_file(manifest_path.string());
    } catch (const toml::parse_error& e) {
      throw IoError("bad manifest " + manifest_path.string() + ": " + std::string(e.description()));
    }
    ds.images.name = tbl["name"].value_or(ds.images.name);
    ds.modality = tbl["modality"].value_or(std::string{});
    ds.partition = parse_partition(tbl["partition"].value_or(std::string{"train"}));
    ds.requires_labels = tbl["requires_labels"].value_or(false);
    if (auto* res = tbl["resolution_nm"].as_array(); res && res->size() == 3)
      for (std::size_t i = 0; i < 3; ++i) ds.pixel_resolution[i] = (*res)[i].value_or(1.0);
  }

  for (const auto& f : detail::list_slices(root / layout.image_dir)) {
    const auto raw = png::read_gray8(f);
    Plane p(raw.height(), raw.width());
    for (std::size_t i = 0; i < raw.size(); ++i) p[i] = to_unit(raw[i]);
    if (!ds.images.slices.empty() && !p.same_shape(ds.images.slices.front()))
      throw GeometryError("slice " + f.string() + " differs in shape from the first slice");
    ds.images.slices.push_back(std::move(p));
  }

  const auto label_dir = root / layout.label_dir;
  if (fs::is_directory(label_dir)) {
    LabelStack labels;
    labels.name = ds.images.name;
    for (const auto& f : detail::list_slices(label_dir)) {
      const auto raw = png::read_gray8(f);
      Mask m(raw.height(), raw.width());
      for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto v = raw[i];
        if (layout.strict_labels && v != 0 && v != 255)
          throw LabelError("label " + f.string() + " has non-binary value " + std::to_string(v));
        m[i] = v > layout.label_threshold ? 1 : 0;
      }
      labels.slices.push_back(std::move(m));
    }
    if (labels.depth() != ds.images.depth())
      throw GeometryError("label slice count does not match image slice count in " +
                          root.string());
    for (const auto& m : labels.slices)
      if (!m.same_shape(ds.images.slices.front()))
        throw GeometryError("label slice shape does not match images in " + root.string());
    ds.labels = std::move(labels);
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const AnnotatedDataset& ds, const fs::path& root,
                         const DatasetLayout& layout = {}) {
  ds.validate();
  fs::create_directories(root / layout.image_dir);
  for (std::size_t i = 0; i < ds.images.depth(); ++i) {
    const auto& p = ds.images.slices[i];
    Image<std::uint8_t> raw(p.height(), p.width());
    for (std::size_t k = 0; k < p.size(); ++k) raw[k] = to_byte(p[k]);
    png::write_gray8(root / layout.image_dir / detail::slice_name(i), raw);
  }
  if (ds.labels) {
    fs::create_directories(root / layout.label_dir);
    for (std::size_t i = 0; i < ds.labels->depth(); ++i) {
      const auto& m = ds.labels->slices[i];
      Image<std::uint8_t> raw(m.height(), m.width());
      for (std::size_t k = 0; k < m.size(); ++k) raw[k] = m[k] ? 255 : 0;
      png::write_gray8(root / layout.label_dir / detail::slice_name(i), raw);
    }
  }
  toml::table tbl{
      {"name", ds.images.name},
      {"modality", ds.modality},
      {"partition", to_string(ds.partition)},
      {"requires_labels", ds.requires_labels},
      {"resolution_nm",
       toml::array{ds.pixel_resolution[0], ds.pixel_resolution[1], ds.pixel_resolution[2]}},
  };
  std::ofstream out(root / layout.manifest);
  if (!out) throw IoError("cannot write manifest in " + root.string());
  out << tbl << "\n";
}

/// Splits a volume along x into a train (left) and test (right) half.
inline std::pair<AnnotatedDataset, AnnotatedDataset> split_vnc_style(
    const AnnotatedDataset& ds, std::optional<std::size_t> split_column = std::nullopt) {
  const std::size_t width = ds.images.width();
  std::size_t col = width / 2;
  if (split_column) {
    col = *split_column;
    if (col == 0 || col >= width) throw SplitError("split column outside (0, width)");
  } else if (width % 2 != 0 || width == 0) {
    throw SplitError("odd width " + std::to_string(width) + " needs an explicit split column");
  }

  auto half = [&](std::size_t x0, std::size_t w, Partition part, const char* suffix) {
    AnnotatedDataset out;
    out.images.name = ds.images.name + suffix;
    out.partition = part;
    out.modality = ds.modality;
    out.pixel_resolution = ds.pixel_resolution;
    out.requires_labels = ds.requires_labels && part != Partition::test;
    const std::size_t h = ds.images.height();
    for (const auto& s : ds.images.slices) out.images.slices.push_back(s.crop(0, x0, h, w));
    for (const auto& m : ds.images.padding_mask) out.images.padding_mask.push_back(m.crop(0, x0, h, w));
    if (ds.labels) {
      LabelStack l;
      l.name = out.images.name;
      for (const auto& m : ds.labels->slices) l.slices.push_back(m.crop(0, x0, h, w));
      out.labels = std::move(l);
    }
    return out;
  };
  return {half(0, col, Partition::train, "_train"),
          half(col, width - col, Partition::test, "_test")};
}

struct PatchSampler {
  std::size_t patch_size = 256;
  std::size_t count = 1000;
  double val_fraction = 0.1;
  std::uint64_t rng_seed = 0;

  std::size_t val_count() const {
    return static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(count) - 1e-9));
  }
};

struct Patch {
  Plane image;
  std::optional<Mask> label;
};

struct PatchSet {
  std::vector<Patch> train;
  std::vector<Patch> val;
};

/// Uniform random crops. The last ceil(val_fraction * count) crops form the
/// validation split. Crops may overlap padding.
inline PatchSet sample_patches(const AnnotatedDataset& ds, const PatchSampler& sampler) {
  if (!(sampler.val_fraction >= 0.0 && sampler.val_fraction < 1.0))
    throw ArgumentError("val_fraction must lie in [0, 1)");
  if (ds.images.depth() == 0) throw SamplingError("cannot sample from an empty stack");
  const std::size_t ps = sampler.patch_size;
  const std::size_t h = ds.images.height(), w = ds.images.width();
  if (ps == 0 || ps > h || ps > w)
    throw SamplingError("patch size " + std::to_string(ps) + " does not fit in " +
                        std::to_string(h) + "x" + std::to_string(w));

  Rng rng(derive_seed(sampler.rng_seed, {0x7061746368ULL}));
  const std::size_t n_val = sampler.val_count();
  PatchSet out;
  out.train.reserve(sampler.count - n_val);
  out.val.reserve(n_val);
  for (std::size_t i = 0; i < sampler.count; ++i) {
    const std::size_t z = uniform_index(rng, ds.images.depth());
    const std::size_t y = uniform_index(rng, h - ps + 1);
    const std::size_t x = uniform_index(rng, w - ps + 1);
    Patch p{ds.images.slices[z].crop(y, x, ps, ps), std::nullopt};
    if (ds.labels) p.label = ds.labels->slices[z].crop(y, x, ps, ps);
    (i < sampler.count - n_val ? out.train : out.val).push_back(std::move(p));
  }
  return out;
}

/// Marks border-connected (4-neighbourhood) zero-intensity regions.
inline Mask detect_padding(const Plane& img) {
  const std::size_t h = img.height(), w = img.width();
  Mask mask(h, w, 0);
  std::vector<std::size_t> stack;
  auto push = [&](std::size_t y, std::size_t x) {
    if (img(y, x) == 0.0f && !mask(y, x)) {
      mask(y, x) = 1;
      stack.push_back(y * w + x);
    }
  };
  for (std::size_t x = 0; x < w; ++x) {
    push(0, x);
    push(h - 1, x);
  }
  for (std::size_t y = 0; y < h; ++y) {
    push(y, 0);
    push(y, w - 1);
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const std::size_t y = i / w, x = i % w;
    if (y > 0) push(y - 1, x);
    if (y + 1 < h) push(y + 1, x);
    if (x > 0) push(y, x - 1);
    if (x + 1 < w) push(y, x + 1);
  }
  return mask;
}

inline std::vector<Mask> detect_padding(const ImageStack& stack) {
  std::vector<Mask> out;
  out.reserve(stack.depth());
  for (const auto& s : stack.slices) out.push_back(detect_padding(s));
  return out;
}

/// Appearance of a synthetic organelle fixture. Domains differ by texture and
/// by the final monotone remap `offset + gain * v^gamma`.
struct FixtureStyle {
  double background = 0.62;
  double organelle = 0.34;
  double membrane = 0.16;
  /// Normalised radius where the darker membrane ring starts.
  double membrane_start = 0.72;
  double texture_amplitude = 0.08;
  int texture_radius = 2;
  double noise_sigma = 0.02;
  double radius_min_frac = 0.07;
  double radius_max_frac = 0.13;
  double gamma = 1.0;
  double gain = 1.0;
  double offset = 0.0;
  /// Width of a zero-intensity frame around the tissue.
  std::size_t padding = 0;
};

namespace detail {

// Three box-blur passes approximate a Gaussian.
inline std::vector<double> smooth_noise(std::size_t h, std::size_t w, int radius, Rng& rng) {
  NormalSampler normal;
  std::vector<double> a(h * w), b(h * w);
  for (auto& v : a) v = normal(rng);
  if (radius <= 0) return a;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };
  for (int pass = 0; pass < 3; ++pass) {
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double s = 0;
        for (std::ptrdiff_t d = -r; d <= r; ++d) s += a[y * W + clampi(x + d, W)];
        b[y * W + x] = s / static_cast<double>(2 * r + 1);
      }
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double s = 0;
        for (std::ptrdiff_t d = -r; d <= r; ++d) s += b[clampi(y + d, H) * W + x];
        a[y * W + x] = s / static_cast<double>(2 * r + 1);
      }
  }
  double mean = 0, sq = 0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(a.size());
  for (double v : a) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(a.size()));
  for (auto& v : a) v = sd > 0 ? (v - mean) / sd : 0.0;
  return a;
}

}  // namespace detail

/// Synthetic EM-like stack: elliptical organelles with a dark rim on a textured
/// background, plus exact binary masks. Intensities are 8-bit quantised.
inline AnnotatedDataset make_blob_fixture(std::size_t n_slices, std::size_t height, std::size_t width,
                                          std::size_t n_blobs, std::uint64_t rng_seed,
                                          const FixtureStyle& style = {}) {
  const double side = static_cast<double>(std::min(height, width));
  const double r_min = std::max(1.5, style.radius_min_frac * side);
  const double r_max = std::max(r_min, style.radius_max_frac * side);
  const double pad = static_cast<double>(style.padding);
  if (n_blobs > 0 && 2.0 * (r_max + pad) + 2.0 >= side)
    throw ArgumentError("organelle radii do not fit in the image");

  AnnotatedDataset ds;
  ds.images.name = "blobs_" + std::to_string(rng_seed);
  ds.partition = Partition::train;
  ds.modality = "synthetic";
  LabelStack labels;
  labels.name = ds.images.name;

  for (std::size_t z = 0; z < n_slices; ++z) {
    Rng rng(derive_seed(rng_seed, {z, 0x626c6f62ULL}));
    NormalSampler normal;
    auto unif = [&](double lo, double hi) { return lo + (hi - lo) * NormalSampler::uniform01(rng); };

    const auto texture = detail::smooth_noise(height, width, style.texture_radius, rng);
    std::vector<double> value(height * width);
    for (std::size_t i = 0; i < value.size(); ++i)
      value[i] = style.background + style.texture_amplitude * texture[i];

    Mask label(height, width, 0);
    for (std::size_t b = 0; b < n_blobs; ++b) {
      const double a = unif(r_min, r_max), c = unif(r_min, r_max);
      const double theta = unif(0.0, 3.14159265358979323846);
      const double cy = unif(pad + r_max + 1.0, static_cast<double>(height) - pad - r_max - 1.0);
      const double cx = unif(pad + r_max + 1.0, static_cast<double>(width) - pad - r_max - 1.0);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
          const double rho = std::sqrt((u / a) * (u / a) + (v / c) * (v / c));
          if (rho > 1.0) continue;
          const auto i = y * width + x;
          const double inner = rho < style.membrane_start ? style.organelle : style.membrane;
          value[i] = inner + 0.5 * style.texture_amplitude * texture[i];
          label(y, x) = 1;
        }
    }

    Plane p(height, width);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const auto i = y * width + x;
        const bool in_pad = y < style.padding || x < style.padding || y >= height - style.padding ||
                            x >= width - style.padding;
        if (in_pad) {
          p[i] = 0.0f;
          label[i] = 0;
          continue;
        }
        double v = std::clamp(value[i] + style.noise_sigma * normal(rng), 0.0, 1.0);
        v = std::clamp(style.offset + style.gain * std::pow(v, style.gamma), 0.0, 1.0);
        // Keep tissue strictly above zero so it is never mistaken for padding.
        p[i] = to_unit(std::max<std::uint8_t>(to_byte(static_cast<float>(v)), 1));
      }
    ds.images.slices.push_back(std::move(p));
    labels.slices.push_back(std::move(label));
  }
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

}  // namespace mitoda
