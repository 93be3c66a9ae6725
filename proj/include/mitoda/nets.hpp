#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mitoda/error.hpp"
#include "mitoda/layers.hpp"
#include "mitoda/random.hpp"
#include "mitoda/tensor.hpp"

namespace mitoda {

enum class Variant : std::uint8_t { attention_unet, attention_ynet };

inline std::string to_string(Variant v) {
  return v == Variant::attention_unet ? "attention_unet" : "attention_ynet";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "attention_unet" || s == "unet") return Variant::attention_unet;
  if (s == "attention_ynet" || s == "ynet") return Variant::attention_ynet;
  throw ArgumentError("unknown network variant '" + s + "'");
}

enum class OutputActivation : std::uint8_t { sigmoid, linear };

struct NetworkSpec {
  Variant variant = Variant::attention_unet;
  /// Number of resolution levels; the deepest one is the bottleneck.
  std::size_t depth = 4;
  std::size_t base_filters = 16;
  double filter_growth = 2.0;
  Activation activation = Activation::elu;
  std::size_t input_channels = 1;
  std::size_t seg_output_channels = 1;
  std::size_t rec_output_channels = 1;
  OutputActivation rec_activation = OutputActivation::sigmoid;

  std::size_t filters(std::size_t level) const {
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(base_filters) * std::pow(filter_growth, static_cast<double>(level))));
  }

  /// Inputs must have sides divisible by this.
  std::size_t size_multiple() const { return std::size_t{1} << (depth - 1); }

  void validate() const {
    if (depth < 2) throw ArgumentError("network depth must be >= 2");
    if (base_filters < 1) throw ArgumentError("base_filters must be >= 1");
    for (std::size_t l = 1; l < depth; ++l)
      if (filters(l) <= filters(l - 1)) throw ArgumentError("filters must strictly increase with level");
    if (input_channels < 1 || seg_output_channels != 1 || rec_output_channels != 1)
      throw ArgumentError("only single-channel heads are supported");
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"variant", to_string(s.variant)},
          {"depth", s.depth},
          {"base_filters", s.base_filters},
          {"filter_growth", s.filter_growth},
          {"activation", to_string(s.activation)},
          {"input_channels", s.input_channels},
          {"seg_output_channels", s.seg_output_channels},
          {"rec_output_channels", s.rec_output_channels},
          {"rec_activation", s.rec_activation == OutputActivation::sigmoid ? "sigmoid" : "linear"}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.variant = parse_variant(j.value("variant", std::string("attention_unet")));
  s.depth = j.value("depth", s.depth);
  s.base_filters = j.value("base_filters", s.base_filters);
  s.filter_growth = j.value("filter_growth", s.filter_growth);
  s.activation = parse_activation(j.value("activation", std::string("elu")));
  s.input_channels = j.value("input_channels", s.input_channels);
  s.seg_output_channels = j.value("seg_output_channels", s.seg_output_channels);
  s.rec_output_channels = j.value("rec_output_channels", s.rec_output_channels);
  const auto ra = j.value("rec_activation", std::string("sigmoid"));
  if (ra != "sigmoid" && ra != "linear") throw ArgumentError("rec_activation must be sigmoid or linear");
  s.rec_activation = ra == "sigmoid" ? OutputActivation::sigmoid : OutputActivation::linear;
  s.validate();
  return s;
}

/// Attention U-Net, optionally with a second skip-free reconstruction decoder
/// (Attention Y-Net). Forward caches activations for one backward pass.
template <class T>
class Network {
 public:
  struct Output {
    Tensor<T> seg;
    std::optional<Tensor<T>> rec;
  };

  struct Cache {
    std::vector<typename ConvBlock<T>::Cache> enc;
    std::vector<typename MaxPool2<T>::Cache> pool;
    typename ConvBlock<T>::Cache bottleneck;
    Tensor<T> bottleneck_out;
    std::vector<typename UpConv2x2<T>::Cache> up;
    std::vector<typename AttentionGate<T>::Cache> gate;
    std::vector<typename ConvBlock<T>::Cache> dec;
    typename Conv2d<T>::Cache seg_head;
    std::vector<typename UpConv2x2<T>::Cache> rup;
    std::vector<typename ConvBlock<T>::Cache> rdec;
    typename Conv2d<T>::Cache rec_head;
    Output out;
  };

  Network() = default;

  /// Parameters are drawn in the order encoder, bottleneck, segmentation path,
  /// reconstruction path, so a Y-Net and a U-Net built from the same seed
  /// share every segmentation-path weight.
  static Network build(const NetworkSpec& spec, std::uint64_t rng_seed) {
    spec.validate();
    Network n;
    n.spec_ = spec;
    Rng rng(derive_seed(rng_seed, {0x6e6574ULL}));
    const std::size_t D = spec.depth;
    auto& st = n.store_;
    std::size_t cin = spec.input_channels;
    for (std::size_t l = 0; l + 1 < D; ++l) {
      n.enc_.push_back(ConvBlock<T>::make(st, "enc" + std::to_string(l), Group::encoder, cin, spec.filters(l),
                                          spec.activation, rng));
      cin = spec.filters(l);
    }
    n.bottleneck_ = ConvBlock<T>::make(st, "bottleneck", Group::bottleneck, cin, spec.filters(D - 1),
                                       spec.activation, rng);
    n.up_.resize(D - 1);
    n.gate_.resize(D - 1);
    n.dec_.resize(D - 1);
    for (std::size_t i = D - 1; i-- > 0;) {
      const std::size_t f = spec.filters(i), fin = spec.filters(i + 1);
      const auto tag = std::to_string(i);
      n.up_[i] = UpConv2x2<T>::make(st, "seg_up" + tag, Group::seg_decoder, fin, f, rng);
      n.gate_[i] = AttentionGate<T>::make(st, "gate" + tag, f, f, std::max<std::size_t>(1, f / 2), rng);
      n.dec_[i] = ConvBlock<T>::make(st, "seg_dec" + tag, Group::seg_decoder, 2 * f, f, spec.activation, rng);
    }
    n.seg_head_ = Conv2d<T>::make(st, "seg_head", Group::seg_decoder, spec.filters(0), 1, 1, rng);
    if (spec.variant == Variant::attention_ynet) {
      n.rup_.resize(D - 1);
      n.rdec_.resize(D - 1);
      for (std::size_t i = D - 1; i-- > 0;) {
        const std::size_t f = spec.filters(i), fin = spec.filters(i + 1);
        const auto tag = std::to_string(i);
        n.rup_[i] = UpConv2x2<T>::make(st, "rec_up" + tag, Group::rec_decoder, fin, f, rng);
        n.rdec_[i] = ConvBlock<T>::make(st, "rec_dec" + tag, Group::rec_decoder, f, f, spec.activation, rng);
      }
      n.rec_head_ = Conv2d<T>::make(st, "rec_head", Group::rec_decoder, spec.filters(0), 1, 1, rng);
    }
    for (auto g : kAllGroups) n.trainable_[g] = true;
    return n;
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  bool has_reconstruction() const noexcept { return spec_.variant == Variant::attention_ynet; }

  ParamStore<T>& store() noexcept { return store_; }
  const ParamStore<T>& store() const noexcept { return store_; }
  std::vector<Param<T>>& params() noexcept { return store_.params; }
  const std::vector<Param<T>>& params() const noexcept { return store_.params; }
  void zero_grad() { store_.zero_grad(); }

  bool trainable(Group g) const { return trainable_.at(g); }

  /// Sets the trainable flag of every listed group.
  void set_trainable(const std::set<Group>& groups, bool flag) {
    for (auto g : groups) trainable_[g] = flag;
  }

  void set_trainable(const std::vector<std::string>& groups, bool flag) {
    std::set<Group> parsed;
    for (const auto& g : groups) parsed.insert(parse_group(g));
    set_trainable(parsed, flag);
  }

  /// Number of scalar parameters per group.
  std::map<Group, std::size_t> census() const {
    std::map<Group, std::size_t> out;
    for (auto g : kAllGroups) out[g] = 0;
    for (const auto& p : store_.params) out[p.group] += p.value.size();
    return out;
  }

  /// Parameters feeding skip connections into the given decoder: attention
  /// gates for the segmentation decoder, none for the reconstruction decoder.
  std::size_t skip_path_parameters(Group decoder) const {
    std::size_t n = 0;
    if (decoder == Group::seg_decoder)
      for (const auto& g : gate_) n += g.parameter_count();
    if (decoder == Group::rec_decoder)
      for (std::size_t i = 0; i < rdec_.size(); ++i)
        if (rdec_[i].first.cin != rup_[i].cout) n += rdec_[i].first.parameter_count();
    return n;
  }

  void set_gate_mode(GateMode m) noexcept { gate_mode_ = m; }
  GateMode gate_mode() const noexcept { return gate_mode_; }

  const std::vector<AttentionGate<T>>& gates() const noexcept { return gate_; }

  /// Attention coefficients of the most recent forward call, per level.
  const std::vector<Tensor<T>>& last_attention() const noexcept { return last_attention_; }

  void check_input(const Tensor<T>& x) const {
    const std::size_t m = spec_.size_multiple();
    if (x.c != spec_.input_channels) throw ShapeError("input channel count mismatch");
    if (x.h == 0 || x.w == 0 || x.h % m != 0 || x.w % m != 0)
      throw ShapeError("input " + std::to_string(x.h) + "x" + std::to_string(x.w) + " not divisible by " +
                       std::to_string(m));
  }

  Output forward(const Tensor<T>& x, Cache* cache = nullptr) {
    check_input(x);
    const std::size_t L = spec_.depth - 1;
    if (cache) {
      cache->enc.resize(L);
      cache->pool.resize(L);
      cache->up.resize(L);
      cache->gate.resize(L);
      cache->dec.resize(L);
      cache->rup.resize(has_reconstruction() ? L : 0);
      cache->rdec.resize(has_reconstruction() ? L : 0);
    }
    std::vector<Tensor<T>> skips(L);
    Tensor<T> t = x;
    for (std::size_t l = 0; l < L; ++l) {
      skips[l] = enc_[l].forward(store_, t, cache ? &cache->enc[l] : nullptr);
      t = MaxPool2<T>::forward(skips[l], cache ? &cache->pool[l] : nullptr);
    }
    const Tensor<T> b = bottleneck_.forward(store_, t, cache ? &cache->bottleneck : nullptr);

    Output out;
    last_attention_.assign(L, Tensor<T>{});
    Tensor<T> u = b;
    for (std::size_t i = L; i-- > 0;) {
      Tensor<T> up = up_[i].forward(store_, u, cache ? &cache->up[i] : nullptr);
      Tensor<T> gated = gate_[i].forward(store_, up, skips[i], cache ? &cache->gate[i] : nullptr, gate_mode_,
                                         &last_attention_[i]);
      u = dec_[i].forward(store_, concat_channels(up, gated), cache ? &cache->dec[i] : nullptr);
    }
    out.seg = seg_head_.forward(store_, u, cache ? &cache->seg_head : nullptr);
    for (auto& v : out.seg.data) v = sigmoid(v);

    if (has_reconstruction()) {
      Tensor<T> r = b;
      for (std::size_t i = L; i-- > 0;) {
        r = rup_[i].forward(store_, r, cache ? &cache->rup[i] : nullptr);
        r = rdec_[i].forward(store_, r, cache ? &cache->rdec[i] : nullptr);
      }
      Tensor<T> rec = rec_head_.forward(store_, r, cache ? &cache->rec_head : nullptr);
      if (spec_.rec_activation == OutputActivation::sigmoid)
        for (auto& v : rec.data) v = sigmoid(v);
      out.rec = std::move(rec);
    }
    if (cache) cache->out = out;
    return out;
  }

  /// Back-propagates loss gradients w.r.t. the output maps (after the output
  /// activation). Either may be null. Gradients accumulate into the store.
  void backward(const Cache& cache, const Tensor<T>* dseg, const Tensor<T>* drec) {
    const std::size_t L = spec_.depth - 1;
    std::optional<Tensor<T>> db;
    std::vector<std::optional<Tensor<T>>> dskips(L);
    auto accumulate = [](std::optional<Tensor<T>>& acc, Tensor<T>&& g) {
      if (acc)
        *acc += g;
      else
        acc = std::move(g);
    };

    if (dseg) {
      Tensor<T> dz = *dseg;
      const auto& s = cache.out.seg;
      for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] *= s.data[i] * (T{1} - s.data[i]);
      Tensor<T> du = seg_head_.backward(store_, dz, cache.seg_head, true);
      for (std::size_t i = 0; i < L; ++i) {
        Tensor<T> dcat = dec_[i].backward(store_, std::move(du), cache.dec[i], true);
        auto [dup, dgated] = split_channels(dcat, up_[i].cout);
        auto [dgating, dskip] = gate_[i].backward(store_, dgated, cache.gate[i], gate_mode_);
        dup += dgating;
        accumulate(dskips[i], std::move(dskip));
        du = up_[i].backward(store_, dup, cache.up[i], true);
      }
      accumulate(db, std::move(du));
    }

    if (drec && has_reconstruction()) {
      Tensor<T> dz = *drec;
      if (spec_.rec_activation == OutputActivation::sigmoid) {
        const auto& r = *cache.out.rec;
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] *= r.data[i] * (T{1} - r.data[i]);
      }
      Tensor<T> dr = rec_head_.backward(store_, dz, cache.rec_head, true);
      for (std::size_t i = 0; i < L; ++i) {
        dr = rdec_[i].backward(store_, std::move(dr), cache.rdec[i], true);
        dr = rup_[i].backward(store_, dr, cache.rup[i], true);
      }
      accumulate(db, std::move(dr));
    }

    if (!db) return;
    // A frozen encoder needs neither its own gradients nor the bottleneck's
    // input gradient.
    const bool need_encoder = trainable(Group::encoder);
    Tensor<T> dt = bottleneck_.backward(store_, std::move(*db), cache.bottleneck, need_encoder);
    if (!need_encoder) return;
    for (std::size_t l = L; l-- > 0;) {
      Tensor<T> d = MaxPool2<T>::backward(dt, cache.pool[l]);
      if (dskips[l]) d += *dskips[l];
      dt = enc_[l].backward(store_, std::move(d), cache.enc[l], l > 0);
    }
  }

  /// Copies parameter values from another network of identical layout.
  template <class U>
  void copy_parameters_from(const Network<U>& other) {
    if (other.params().size() != store_.params.size()) throw ShapeError("parameter layout mismatch");
    for (std::size_t i = 0; i < store_.params.size(); ++i) {
      const auto& src = other.params()[i].value;
      auto& dst = store_.params[i].value;
      if (src.size() != dst.size()) throw ShapeError("parameter size mismatch");
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<T>(src[k]);
    }
  }

 private:
  NetworkSpec spec_;
  ParamStore<T> store_;
  std::map<Group, bool> trainable_;
  GateMode gate_mode_ = GateMode::learned;
  std::vector<ConvBlock<T>> enc_;
  ConvBlock<T> bottleneck_;
  std::vector<UpConv2x2<T>> up_;
  std::vector<AttentionGate<T>> gate_;
  std::vector<ConvBlock<T>> dec_;
  Conv2d<T> seg_head_;
  std::vector<UpConv2x2<T>> rup_;
  std::vector<ConvBlock<T>> rdec_;
  Conv2d<T> rec_head_;
  std::vector<Tensor<T>> last_attention_;
};

/// Full-image prediction: reflect-pads the plane up to the network's size
/// multiple, runs the segmentation head and crops back.
template <class T>
Plane predict_plane(Network<T>& net, const Plane& img, bool reconstruction = false) {
  const std::size_t m = net.spec().size_multiple();
  const std::size_t h = img.height(), w = img.width();
  const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  Tensor<T> x(1, ph, pw);
  auto reflect = [](std::size_t i, std::size_t n) {
    if (n == 1) return std::size_t{0};
    const std::size_t period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
  };
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t xx = 0; xx < pw; ++xx) x.at(0, y, xx) = static_cast<T>(img(reflect(y, h), reflect(xx, w)));
  auto out = net.forward(x, nullptr);
  const Tensor<T>& src = reconstruction ? out.rec.value() : out.seg;
  Plane p(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) p(y, xx) = static_cast<float>(src.at(0, y, xx));
  return p;
}

}  // namespace mitoda
