#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "mitoda/image.hpp"
#include "mitoda/tensor.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mitoda") {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline mitoda::Mask random_mask(std::size_t h, std::size_t w, double p, std::mt19937& rng) {
  std::bernoulli_distribution d(p);
  mitoda::Mask m(h, w);
  for (auto& v : m.pixels()) v = d(rng) ? 1 : 0;
  return m;
}

template <class T>
mitoda::Tensor<T> random_tensor(std::size_t c, std::size_t h, std::size_t w, std::mt19937& rng, double lo = 0.0,
                                double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  mitoda::Tensor<T> t(c, h, w);
  for (auto& v : t.data) v = static_cast<T>(d(rng));
  return t;
}

inline mitoda::Mask rect_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t rh,
                              std::size_t rw) {
  mitoda::Mask m(h, w, 0);
  for (std::size_t y = y0; y < y0 + rh; ++y)
    for (std::size_t x = x0; x < x0 + rw; ++x) m(y, x) = 1;
  return m;
}

}  // namespace testing_support
