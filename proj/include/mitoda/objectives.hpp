#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mitoda/error.hpp"
#include "mitoda/image.hpp"
#include "mitoda/tensor.hpp"

namespace mitoda {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kBceEpsilon = 1e-7;

template <class T>
double mse_loss(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw ShapeError("MSE operands differ in size");
  if (pred.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

template <class T>
double bce_loss(std::span<const T> prob, std::span<const T> label) {
  if (prob.size() != label.size()) throw ShapeError("BCE operands differ in size");
  if (prob.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prob[i]), kBceEpsilon, 1.0 - kBceEpsilon);
    const double y = static_cast<double>(label[i]);
    s -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return s / static_cast<double>(prob.size());
}

struct CombinedLossConfig {
  /// Weight of the reconstruction term; 1 - alpha weighs segmentation.
  double alpha = 0.98;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
  }
};

template <class T>
struct LossTerms {
  double total = 0;
  double mse = 0;
  double bce = 0;
  std::optional<Tensor<T>> dseg;  // gradient w.r.t. segmentation probabilities
  std::optional<Tensor<T>> drec;  // gradient w.r.t. reconstruction
};

/// alpha * MSE(rec, image) + (1 - alpha) * BCE(seg, label). A missing label
/// contributes a zero BCE term. `rec_pred` may be null only when alpha == 0.
template <class T>
LossTerms<T> combined_loss(const Tensor<T>& seg_pred, const Tensor<T>* rec_pred, const Tensor<T>* label,
                           const Tensor<T>& image, const CombinedLossConfig& cfg, bool with_grad = false) {
  cfg.validate();
  if (label && !label->same_shape(seg_pred)) throw ShapeError("label and segmentation differ in shape");
  if (rec_pred && !rec_pred->same_shape(image)) throw ShapeError("reconstruction and image differ in shape");
  if (!rec_pred && cfg.alpha > 0) throw ShapeError("reconstruction term needs a reconstruction output");

  LossTerms<T> out;
  if (rec_pred) out.mse = mse_loss<T>(rec_pred->data, image.data);
  if (label) out.bce = bce_loss<T>(seg_pred.data, label->data);
  out.total = cfg.alpha * out.mse + (1.0 - cfg.alpha) * out.bce;
  if (!with_grad) return out;

  if (rec_pred && cfg.alpha > 0) {
    Tensor<T> g(rec_pred->c, rec_pred->h, rec_pred->w);
    const double scale = 2.0 * cfg.alpha / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data[i] = static_cast<T>(scale * (static_cast<double>(rec_pred->data[i]) - static_cast<double>(image.data[i])));
    out.drec = std::move(g);
  }
  if (label && cfg.alpha < 1) {
    Tensor<T> g(seg_pred.c, seg_pred.h, seg_pred.w);
    const double scale = (1.0 - cfg.alpha) / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double p = static_cast<double>(seg_pred.data[i]);
      if (p < kBceEpsilon || p > 1.0 - kBceEpsilon) continue;  // clamped region is flat
      const double y = static_cast<double>(label->data[i]);
      g.data[i] = static_cast<T>(scale * (-y / p + (1.0 - y) / (1.0 - p)));
    }
    out.dseg = std::move(g);
  }
  return out;
}

/// Pixel counts of the foreground class.
struct MetricReport {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double iou_f = 1.0;
  double threshold = 0.5;

  /// Empty prediction and empty ground truth count as a perfect score.
  void finalize() noexcept {
    const auto denom = tp + fp + fn;
    iou_f = denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }

  MetricReport& operator+=(const MetricReport& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    finalize();
    return *this;
  }
};

/// Foreground IoU with predictions binarised as `prob > threshold`.
template <class P>
MetricReport iou_f(std::span<const P> pred, std::span<const std::uint8_t> gt, double threshold = 0.5) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth differ in size");
  MetricReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = static_cast<double>(pred[i]) > threshold;
    const bool g = gt[i] != 0;
    r.tp += p && g;
    r.fp += p && !g;
    r.fn += !p && g;
  }
  r.finalize();
  return r;
}

inline MetricReport iou_f(const Plane& pred, const Mask& gt, double threshold = 0.5) {
  if (!pred.same_shape(gt)) throw ShapeError("prediction and ground truth differ in shape");
  return iou_f<float>(pred.pixels(), gt.pixels(), threshold);
}

/// Pooled over every slice of a stack.
inline MetricReport iou_f(std::span<const Plane> preds, const LabelStack& gt, double threshold = 0.5) {
  if (preds.size() != gt.depth()) throw ShapeError("prediction and label stacks differ in depth");
  MetricReport total;
  total.threshold = threshold;
  for (std::size_t i = 0; i < preds.size(); ++i) total += iou_f(preds[i], gt.slices[i], threshold);
  total.finalize();
  return total;
}

inline Mask binarize(const Plane& prob, double threshold = 0.5) {
  Mask m(prob.height(), prob.width());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = static_cast<double>(prob[i]) > threshold ? 1 : 0;
  return m;
}

}  // namespace mitoda
