#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mitoda/error.hpp"

namespace mitoda {

/// Dense row-major 2D array.
template <class T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) noexcept { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool same_shape(const auto& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  /// Copies the rectangle [y0, y0+h) x [x0, x0+w).
  Image crop(std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) const {
    Image out(h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(y, x) = (*this)(y0 + y, x0 + x);
    return out;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using Plane = Image<float>;
using Mask = Image<std::uint8_t>;

/// Ordered grayscale slices sharing one geometry, intensities in [0, 1].
struct ImageStack {
  std::string name;
  std::vector<Plane> slices;
  /// Per-slice padding masks (1 = non-tissue padding). Empty when unknown.
  std::vector<Mask> padding_mask;

  std::size_t height() const noexcept { return slices.empty() ? 0 : slices.front().height(); }
  std::size_t width() const noexcept { return slices.empty() ? 0 : slices.front().width(); }
  std::size_t depth() const noexcept { return slices.size(); }

  void validate() const {
    for (const auto& s : slices) {
      if (!s.same_shape(slices.front()))
        throw GeometryError("stack '" + name + "' has slices of differing shape");
      for (float v : s.pixels())
        if (!(v >= 0.0f && v <= 1.0f))
          throw GeometryError("stack '" + name + "' has intensity outside [0,1]");
    }
    if (!padding_mask.empty()) {
      if (padding_mask.size() != slices.size())
        throw GeometryError("padding mask count does not match slice count");
      for (const auto& m : padding_mask)
        if (!m.same_shape(slices.front())) throw GeometryError("padding mask shape mismatch");
    }
  }

  friend bool operator==(const ImageStack&, const ImageStack&) = default;
};

/// Binary masks, 0 = background and 1 = mitochondrion.
struct LabelStack {
  std::string name;
  std::vector<Mask> slices;

  std::size_t height() const noexcept { return slices.empty() ? 0 : slices.front().height(); }
  std::size_t width() const noexcept { return slices.empty() ? 0 : slices.front().width(); }
  std::size_t depth() const noexcept { return slices.size(); }

  std::size_t foreground_pixels() const noexcept {
    std::size_t n = 0;
    for (const auto& s : slices)
      for (auto v : s.pixels()) n += v;
    return n;
  }

  void validate() const {
    for (const auto& s : slices) {
      if (!s.same_shape(slices.front()))
        throw GeometryError("label stack '" + name + "' has slices of differing shape");
      for (auto v : s.pixels())
        if (v > 1) throw LabelError("label stack '" + name + "' is not binary");
    }
  }

  friend bool operator==(const LabelStack&, const LabelStack&) = default;
};

enum class Partition { train, val, test };

inline std::string to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::test: return "test";
  }
  return "train";
}

inline Partition parse_partition(const std::string& s) {
  if (s == "train") return Partition::train;
  if (s == "val") return Partition::val;
  if (s == "test") return Partition::test;
  throw ArgumentError("unknown partition '" + s + "'");
}

struct AnnotatedDataset {
  ImageStack images;
  std::optional<LabelStack> labels;
  Partition partition = Partition::train;
  std::string modality;
  /// (x, y, z) voxel size in nanometres.
  std::array<double, 3> pixel_resolution{1.0, 1.0, 1.0};
  /// A source dataset's train/val partitions carry supervision.
  bool requires_labels = false;

  bool labeled() const noexcept { return labels.has_value(); }

  void validate() const {
    images.validate();
    if (labels) {
      labels->validate();
      if (labels->depth() != images.depth() || labels->height() != images.height() ||
          labels->width() != images.width())
        throw GeometryError("labels of '" + images.name + "' do not match image geometry");
    } else if (requires_labels) {
      throw LabelError("dataset '" + images.name + "' requires labels for partition " +
                       to_string(partition));
    }
  }

  friend bool operator==(const AnnotatedDataset&, const AnnotatedDataset&) = default;
};

}  // namespace mitoda
