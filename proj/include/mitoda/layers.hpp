#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mitoda/error.hpp"
#include "mitoda/random.hpp"
#include "mitoda/tensor.hpp"

namespace mitoda {

/// Parameter groups used for selective freezing.
enum class Group : std::uint8_t { encoder, bottleneck, seg_decoder, rec_decoder, attention_gates };

inline constexpr std::array<Group, 5> kAllGroups{Group::encoder, Group::bottleneck, Group::seg_decoder,
                                                 Group::rec_decoder, Group::attention_gates};

inline std::string to_string(Group g) {
  switch (g) {
    case Group::encoder: return "encoder";
    case Group::bottleneck: return "bottleneck";
    case Group::seg_decoder: return "seg_decoder";
    case Group::rec_decoder: return "rec_decoder";
    case Group::attention_gates: return "attention_gates";
  }
  return "encoder";
}

inline Group parse_group(const std::string& s) {
  for (auto g : kAllGroups)
    if (to_string(g) == s) return g;
  throw ArgumentError("unknown parameter group '" + s + "'");
}

template <class T>
struct Param {
  std::string name;
  Group group = Group::encoder;
  std::vector<T> value;
  std::vector<T> grad;
};

template <class T>
struct ParamStore {
  std::vector<Param<T>> params;

  /// Adds a tensor drawn from N(0, stddev^2); stddev 0 gives zeros.
  std::size_t add(std::string name, Group group, std::size_t n, double stddev, Rng& rng) {
    Param<T> p{std::move(name), group, std::vector<T>(n, T{}), std::vector<T>(n, T{})};
    if (stddev > 0) {
      NormalSampler normal;
      for (auto& v : p.value) v = static_cast<T>(stddev * normal(rng));
    }
    params.push_back(std::move(p));
    return params.size() - 1;
  }

  void zero_grad() {
    for (auto& p : params) std::fill(p.grad.begin(), p.grad.end(), T{});
  }
};

enum class Activation : std::uint8_t { elu, relu };

inline Activation parse_activation(const std::string& s) {
  if (s == "elu") return Activation::elu;
  if (s == "relu") return Activation::relu;
  throw ArgumentError("unknown activation '" + s + "'");
}

inline std::string to_string(Activation a) { return a == Activation::elu ? "elu" : "relu"; }

template <class T>
void activate(Tensor<T>& t, Activation a) {
  if (a == Activation::elu) {
    for (auto& v : t.data) v = v > T{0} ? v : std::expm1(v);
  } else {
    for (auto& v : t.data) v = std::max(v, T{0});
  }
}

/// Multiplies `grad` by the activation derivative, written in terms of the
/// activation output `y`.
template <class T>
void activate_backward(Tensor<T>& grad, const Tensor<T>& y, Activation a) {
  if (a == Activation::elu) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
      if (y.data[i] <= T{0}) grad.data[i] *= y.data[i] + T{1};
  } else {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
      if (y.data[i] <= T{0}) grad.data[i] = T{0};
  }
}

template <class T>
T sigmoid(T z) {
  return T{1} / (T{1} + std::exp(-z));
}

/// Same-padded square convolution with bias (odd kernel, stride 1).
template <class T>
struct Conv2d {
  std::size_t cin = 0, cout = 0, k = 3;
  std::size_t weight = 0, bias = 0;

  struct Cache {
    std::vector<T> col;  // (cin*k*k, h*w)
    std::size_t h = 0, w = 0;
  };

  static Conv2d make(ParamStore<T>& store, const std::string& name, Group group, std::size_t cin,
                     std::size_t cout, std::size_t k, Rng& rng) {
    Conv2d c;
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    const double he = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    c.weight = store.add(name + ".weight", group, cout * cin * k * k, he, rng);
    c.bias = store.add(name + ".bias", group, cout, 0.0, rng);
    return c;
  }

  std::size_t parameter_count() const noexcept { return cout * cin * k * k + cout; }

  void im2col(const Tensor<T>& in, std::vector<T>& col) const {
    const std::size_t h = in.h, w = in.w, hw = h * w;
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    col.assign(cin * k * k * hw, T{});
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* src = in.channel(ci);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* dst = col.data() + ((ci * k + ky) * k + kx) * hw;
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w), static_cast<std::ptrdiff_t>(w) - dx));
            const T* srow = src + static_cast<std::size_t>(sy) * w;
            T* drow = dst + y * w;
            for (std::size_t x = x0; x < x1; ++x) drow[x] = srow[static_cast<std::ptrdiff_t>(x) + dx];
          }
        }
    }
  }

  void col2im(const std::vector<T>& col, Tensor<T>& out) const {
    const std::size_t h = out.h, w = out.w, hw = h * w;
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      T* dst = out.channel(ci);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T* src = col.data() + ((ci * k + ky) * k + kx) * hw;
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - r;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - r;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w), static_cast<std::ptrdiff_t>(w) - dx));
            T* drow = dst + static_cast<std::size_t>(sy) * w;
            const T* srow = src + y * w;
            for (std::size_t x = x0; x < x1; ++x) drow[static_cast<std::ptrdiff_t>(x) + dx] += srow[x];
          }
        }
    }
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& in, Cache* cache) const {
    if (in.c != cin)
      throw ShapeError("conv expects " + std::to_string(cin) + " channels, got " + std::to_string(in.c));
    const std::size_t hw = in.plane();
    Tensor<T> out(cout, in.h, in.w);
    ConstMatrixMap<T> W(store.params[weight].value.data(), static_cast<Eigen::Index>(cout),
                        static_cast<Eigen::Index>(cin * k * k));
    MatrixMap<T> O(out.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
    std::vector<T> local;
    std::vector<T>* col = cache ? &cache->col : &local;
    if (k == 1) {
      ConstMatrixMap<T> X(in.data.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
      O.noalias() = W * X;
      if (cache) cache->col = in.data;
    } else {
      im2col(in, *col);
      ConstMatrixMap<T> X(col->data(), static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(hw));
      O.noalias() = W * X;
    }
    const auto& b = store.params[bias].value;
    for (std::size_t co = 0; co < cout; ++co) {
      T* row = out.channel(co);
      for (std::size_t i = 0; i < hw; ++i) row[i] += b[co];
    }
    if (cache) {
      cache->h = in.h;
      cache->w = in.w;
    }
    return out;
  }

  /// Accumulates parameter gradients; returns the input gradient when asked.
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dout, const Cache& cache,
                     bool input_grad) const {
    const std::size_t hw = cache.h * cache.w;
    const auto rows = static_cast<Eigen::Index>(cin * k * k);
    ConstMatrixMap<T> dO(dout.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
    ConstMatrixMap<T> X(cache.col.data(), rows, static_cast<Eigen::Index>(hw));
    MatrixMap<T> dW(store.params[weight].grad.data(), static_cast<Eigen::Index>(cout), rows);
    dW.noalias() += dO * X.transpose();
    auto& db = store.params[bias].grad;
    for (std::size_t co = 0; co < cout; ++co) {
      const T* row = dout.channel(co);
      T s{};
      for (std::size_t i = 0; i < hw; ++i) s += row[i];
      db[co] += s;
    }
    Tensor<T> din;
    if (!input_grad) return din;
    ConstMatrixMap<T> Wm(store.params[weight].value.data(), static_cast<Eigen::Index>(cout), rows);
    din = Tensor<T>(cin, cache.h, cache.w);
    if (k == 1) {
      MatrixMap<T> dX(din.data.data(), rows, static_cast<Eigen::Index>(hw));
      dX.noalias() = Wm.transpose() * dO;
    } else {
      std::vector<T> dcol(cin * k * k * hw);
      MatrixMap<T> dC(dcol.data(), rows, static_cast<Eigen::Index>(hw));
      dC.noalias() = Wm.transpose() * dO;
      col2im(dcol, din);
    }
    return din;
  }
};

/// 2x2 transposed convolution with stride 2 (doubles the resolution).
template <class T>
struct UpConv2x2 {
  std::size_t cin = 0, cout = 0;
  std::size_t weight = 0, bias = 0;  // weight laid out (cout*4, cin)

  struct Cache {
    Tensor<T> input;
  };

  static UpConv2x2 make(ParamStore<T>& store, const std::string& name, Group group, std::size_t cin,
                        std::size_t cout, Rng& rng) {
    UpConv2x2 u;
    u.cin = cin;
    u.cout = cout;
    const double he = std::sqrt(2.0 / static_cast<double>(cin));
    u.weight = store.add(name + ".weight", group, cout * 4 * cin, he, rng);
    u.bias = store.add(name + ".bias", group, cout, 0.0, rng);
    return u;
  }

  std::size_t parameter_count() const noexcept { return cout * 4 * cin + cout; }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& in, Cache* cache) const {
    if (in.c != cin) throw ShapeError("up-convolution channel mismatch");
    const std::size_t hw = in.plane();
    ConstMatrixMap<T> W(store.params[weight].value.data(), static_cast<Eigen::Index>(cout * 4),
                        static_cast<Eigen::Index>(cin));
    ConstMatrixMap<T> X(in.data.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
    RowMatrix<T> tmp = W * X;
    Tensor<T> out(cout, in.h * 2, in.w * 2);
    const auto& b = store.params[bias].value;
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const T* src = tmp.data() + (co * 4 + dy * 2 + dx) * hw;
          for (std::size_t y = 0; y < in.h; ++y)
            for (std::size_t x = 0; x < in.w; ++x)
              out.at(co, 2 * y + dy, 2 * x + dx) = src[y * in.w + x] + b[co];
        }
    if (cache) cache->input = in;
    return out;
  }

  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dout, const Cache& cache, bool input_grad) const {
    const auto& in = cache.input;
    const std::size_t hw = in.plane();
    RowMatrix<T> dtmp(static_cast<Eigen::Index>(cout * 4), static_cast<Eigen::Index>(hw));
    auto& db = store.params[bias].grad;
    for (std::size_t co = 0; co < cout; ++co) {
      T s{};
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          T* dst = dtmp.data() + (co * 4 + dy * 2 + dx) * hw;
          for (std::size_t y = 0; y < in.h; ++y)
            for (std::size_t x = 0; x < in.w; ++x) {
              const T g = dout.at(co, 2 * y + dy, 2 * x + dx);
              dst[y * in.w + x] = g;
              s += g;
            }
        }
      db[co] += s;
    }
    ConstMatrixMap<T> X(in.data.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
    MatrixMap<T> dW(store.params[weight].grad.data(), static_cast<Eigen::Index>(cout * 4),
                    static_cast<Eigen::Index>(cin));
    dW.noalias() += dtmp * X.transpose();
    Tensor<T> din;
    if (!input_grad) return din;
    ConstMatrixMap<T> W(store.params[weight].value.data(), static_cast<Eigen::Index>(cout * 4),
                        static_cast<Eigen::Index>(cin));
    din = Tensor<T>(cin, in.h, in.w);
    MatrixMap<T> dX(din.data.data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(hw));
    dX.noalias() = W.transpose() * dtmp;
    return din;
  }
};

template <class T>
struct MaxPool2 {
  struct Cache {
    std::vector<std::uint32_t> argmax;
    std::size_t c = 0, h = 0, w = 0;
  };

  static Tensor<T> forward(const Tensor<T>& in, Cache* cache) {
    if (in.h % 2 != 0 || in.w % 2 != 0) throw ShapeError("max pooling needs even spatial size");
    Tensor<T> out(in.c, in.h / 2, in.w / 2);
    if (cache) {
      cache->argmax.resize(out.size());
      cache->c = in.c;
      cache->h = in.h;
      cache->w = in.w;
    }
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x) {
          std::size_t best = (c * in.h + 2 * y) * in.w + 2 * x;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = (c * in.h + 2 * y + dy) * in.w + 2 * x + dx;
              if (in.data[i] > in.data[best]) best = i;
            }
          const std::size_t o = (c * out.h + y) * out.w + x;
          out.data[o] = in.data[best];
          if (cache) cache->argmax[o] = static_cast<std::uint32_t>(best);
        }
    return out;
  }

  static Tensor<T> backward(const Tensor<T>& dout, const Cache& cache) {
    Tensor<T> din(cache.c, cache.h, cache.w);
    for (std::size_t o = 0; o < dout.size(); ++o) din.data[cache.argmax[o]] += dout.data[o];
    return din;
  }
};

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("concat spatial mismatch");
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t first) {
  Tensor<T> a(first, t.h, t.w), b(t.c - first, t.h, t.w);
  std::copy(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), t.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

/// Two same-padded 3x3 convolutions, each followed by the activation.
template <class T>
struct ConvBlock {
  Conv2d<T> first, second;
  Activation act = Activation::elu;

  struct Cache {
    typename Conv2d<T>::Cache c1, c2;
    Tensor<T> y1, y2;
  };

  static ConvBlock make(ParamStore<T>& store, const std::string& name, Group group, std::size_t cin,
                        std::size_t cout, Activation act, Rng& rng) {
    ConvBlock b;
    b.first = Conv2d<T>::make(store, name + ".conv1", group, cin, cout, 3, rng);
    b.second = Conv2d<T>::make(store, name + ".conv2", group, cout, cout, 3, rng);
    b.act = act;
    return b;
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& in, Cache* cache) const {
    Tensor<T> y1 = first.forward(store, in, cache ? &cache->c1 : nullptr);
    activate(y1, act);
    Tensor<T> y2 = second.forward(store, y1, cache ? &cache->c2 : nullptr);
    activate(y2, act);
    if (cache) {
      cache->y1 = y1;
      cache->y2 = y2;
    }
    return y2;
  }

  Tensor<T> backward(ParamStore<T>& store, Tensor<T> dout, const Cache& cache, bool input_grad) const {
    activate_backward(dout, cache.y2, act);
    Tensor<T> d1 = second.backward(store, dout, cache.c2, true);
    activate_backward(d1, cache.y1, act);
    return first.backward(store, d1, cache.c1, input_grad);
  }
};

enum class GateMode : std::uint8_t { learned, forced_open, forced_closed };

/// Additive attention gate on a skip connection. The gating signal is the
/// up-sampled decoder feature at the skip's resolution:
///   a = sigmoid(psi(relu(theta(skip) + phi(gating)))),  out = skip * a.
template <class T>
struct AttentionGate {
  Conv2d<T> theta, phi, psi;

  struct Cache {
    typename Conv2d<T>::Cache theta, phi, psi;
    Tensor<T> hidden;  // relu output
    Tensor<T> coeff;   // (1, h, w)
    Tensor<T> skip;
  };

  static AttentionGate make(ParamStore<T>& store, const std::string& name, std::size_t skip_channels,
                            std::size_t gating_channels, std::size_t inter_channels, Rng& rng) {
    AttentionGate g;
    g.theta = Conv2d<T>::make(store, name + ".theta", Group::attention_gates, skip_channels, inter_channels, 1, rng);
    g.phi = Conv2d<T>::make(store, name + ".phi", Group::attention_gates, gating_channels, inter_channels, 1, rng);
    g.psi = Conv2d<T>::make(store, name + ".psi", Group::attention_gates, inter_channels, 1, 1, rng);
    return g;
  }

  std::size_t parameter_count() const noexcept {
    return theta.parameter_count() + phi.parameter_count() + psi.parameter_count();
  }

  /// Returns the gated skip tensor; `coeff_out` receives the coefficients.
  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& gating, const Tensor<T>& skip, Cache* cache,
                    GateMode mode = GateMode::learned, Tensor<T>* coeff_out = nullptr) const {
    if (skip.c != theta.cin || gating.c != phi.cin)
      throw ShapeError("attention gate channel mismatch: skip " + std::to_string(skip.c) + " vs " +
                       std::to_string(theta.cin) + ", gating " + std::to_string(gating.c) + " vs " +
                       std::to_string(phi.cin));
    if (skip.h != gating.h || skip.w != gating.w) throw ShapeError("attention gate spatial mismatch");
    Tensor<T> a(1, skip.h, skip.w);
    Tensor<T> hidden;
    if (mode == GateMode::learned) {
      hidden = theta.forward(store, skip, cache ? &cache->theta : nullptr);
      hidden += phi.forward(store, gating, cache ? &cache->phi : nullptr);
      for (auto& v : hidden.data) v = std::max(v, T{0});
      Tensor<T> z = psi.forward(store, hidden, cache ? &cache->psi : nullptr);
      for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = sigmoid(z.data[i]);
    } else {
      std::fill(a.data.begin(), a.data.end(), mode == GateMode::forced_open ? T{1} : T{0});
    }
    Tensor<T> out(skip.c, skip.h, skip.w);
    const std::size_t hw = skip.plane();
    for (std::size_t c = 0; c < skip.c; ++c)
      for (std::size_t i = 0; i < hw; ++i) out.data[c * hw + i] = skip.data[c * hw + i] * a.data[i];
    if (coeff_out) *coeff_out = a;
    if (cache) {
      cache->hidden = std::move(hidden);
      cache->coeff = std::move(a);
      cache->skip = skip;
    }
    return out;
  }

  /// Returns (d gating, d skip). Forced gates pass no gradient to gating.
  std::pair<Tensor<T>, Tensor<T>> backward(ParamStore<T>& store, const Tensor<T>& dout, const Cache& cache,
                                           GateMode mode = GateMode::learned) const {
    const auto& skip = cache.skip;
    const auto& a = cache.coeff;
    const std::size_t hw = skip.plane();
    Tensor<T> dskip(skip.c, skip.h, skip.w);
    Tensor<T> dz(1, skip.h, skip.w);
    for (std::size_t c = 0; c < skip.c; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        dskip.data[c * hw + i] = dout.data[c * hw + i] * a.data[i];
        dz.data[i] += dout.data[c * hw + i] * skip.data[c * hw + i];
      }
    if (mode != GateMode::learned) return {Tensor<T>(phi.cin, skip.h, skip.w), std::move(dskip)};
    for (std::size_t i = 0; i < hw; ++i) dz.data[i] *= a.data[i] * (T{1} - a.data[i]);
    Tensor<T> dh = psi.backward(store, dz, cache.psi, true);
    for (std::size_t i = 0; i < dh.size(); ++i)
      if (cache.hidden.data[i] <= T{0}) dh.data[i] = T{0};
    dskip += theta.backward(store, dh, cache.theta, true);
    Tensor<T> dg = phi.backward(store, dh, cache.phi, true);
    return {std::move(dg), std::move(dskip)};
  }
};

}  // namespace mitoda
