#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "mitoda/error.hpp"
#include "mitoda/image.hpp"

namespace mitoda {

/// Channel-major feature map (C, H, W) for a single sample.
template <class T>
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t channels, std::size_t height, std::size_t width, T fill = T{})
      : c(channels), h(height), w(width), data(channels * height * width, fill) {}

  std::size_t plane() const noexcept { return h * w; }
  std::size_t size() const noexcept { return data.size(); }
  T* channel(std::size_t i) noexcept { return data.data() + i * plane(); }
  const T* channel(std::size_t i) const noexcept { return data.data() + i * plane(); }
  T& at(std::size_t ch, std::size_t y, std::size_t x) noexcept { return data[(ch * h + y) * w + x]; }
  const T& at(std::size_t ch, std::size_t y, std::size_t x) const noexcept {
    return data[(ch * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const noexcept { return c == o.c && h == o.h && w == o.w; }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
Tensor<T> from_plane(const Plane& p) {
  Tensor<T> t(1, p.height(), p.width());
  for (std::size_t i = 0; i < p.size(); ++i) t.data[i] = static_cast<T>(p[i]);
  return t;
}

template <class T>
Tensor<T> from_mask(const Mask& m) {
  Tensor<T> t(1, m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = static_cast<T>(m[i]);
  return t;
}

template <class T>
Plane to_plane(const Tensor<T>& t, std::size_t channel = 0) {
  Plane p(t.h, t.w);
  const T* src = t.channel(channel);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(src[i]);
  return p;
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace mitoda
