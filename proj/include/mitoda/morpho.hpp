#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mitoda/error.hpp"
#include "mitoda/image.hpp"

namespace mitoda {

enum class Connectivity : std::uint8_t { four = 4, eight = 8 };

struct Point {
  std::int64_t x = 0, y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

inline std::int64_t cross(const Point& o, const Point& a, const Point& b) noexcept {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Andrew's monotone chain. Returns the strictly convex hull in
/// counter-clockwise order (collinear points dropped).
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Lattice points inside or on a convex lattice polygon, by Pick's theorem:
/// interior + boundary = area + boundary / 2 + 1.
inline std::uint64_t hull_pixel_count(const std::vector<Point>& hull) {
  if (hull.empty()) return 0;
  std::int64_t twice_area = 0, boundary = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    twice_area += a.x * b.y - b.x * a.y;
    boundary += std::gcd(std::llabs(b.x - a.x), std::llabs(b.y - a.y));
  }
  twice_area = std::llabs(twice_area);
  return static_cast<std::uint64_t>((twice_area + boundary) / 2 + 1);
}

struct ObjectStats {
  std::uint64_t area = 0;
  std::uint64_t hull_area = 0;
  double solidity = 0;
};

struct ObjectSet {
  Connectivity connectivity = Connectivity::eight;
  /// 0 = background, k = object k-1.
  Image<std::int32_t> labels;
  std::vector<ObjectStats> objects;
};

/// Labels maximal connected foreground regions and measures each one. Hull
/// areas count pixel centres inside or on the convex hull of the object's
/// pixel centres.
inline ObjectSet connected_components(const Mask& mask, Connectivity conn = Connectivity::eight) {
  const std::size_t h = mask.height(), w = mask.width();
  ObjectSet set;
  set.connectivity = conn;
  set.labels = Image<std::int32_t>(h, w, 0);
  std::vector<std::size_t> stack;
  std::vector<Point> pixels;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || set.labels[start]) continue;
    const auto id = static_cast<std::int32_t>(set.objects.size() + 1);
    pixels.clear();
    stack.assign(1, start);
    set.labels[start] = id;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const auto y = static_cast<std::int64_t>(i / w), x = static_cast<std::int64_t>(i % w);
      pixels.push_back({x, y});
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          if ((dy == 0 && dx == 0) || (conn == Connectivity::four && dy != 0 && dx != 0)) continue;
          const auto ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<std::int64_t>(h) || nx >= static_cast<std::int64_t>(w)) continue;
          const auto j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mask[j] && !set.labels[j]) {
            set.labels[j] = id;
            stack.push_back(j);
          }
        }
    }
    ObjectStats s;
    s.area = pixels.size();
    s.hull_area = hull_pixel_count(convex_hull(pixels));
    s.solidity = static_cast<double>(s.area) / static_cast<double>(s.hull_area);
    set.objects.push_back(s);
  }
  return set;
}

inline constexpr std::size_t kMinObjectPixels = 10;

/// Accumulates per-object solidities; objects smaller than `min_object_px`
/// are discarded.
class SolidityAccumulator {
 public:
  explicit SolidityAccumulator(std::size_t min_object_px = kMinObjectPixels,
                               Connectivity conn = Connectivity::eight)
      : min_px_(min_object_px), conn_(conn) {}

  void add(const Mask& mask) {
    for (const auto& o : connected_components(mask, conn_).objects)
      if (o.area >= min_px_) {
        sum_ += o.solidity;
        ++count_;
      }
  }

  std::size_t objects() const noexcept { return count_; }

  /// Mean solidity, or nullopt when no object survived.
  std::optional<double> mean() const noexcept {
    if (count_ == 0) return std::nullopt;
    return sum_ / static_cast<double>(count_);
  }

 private:
  std::size_t min_px_;
  Connectivity conn_;
  double sum_ = 0;
  std::size_t count_ = 0;
};

inline std::optional<double> average_solidity(const Mask& mask, std::size_t min_object_px = kMinObjectPixels,
                                              Connectivity conn = Connectivity::eight) {
  SolidityAccumulator acc(min_object_px, conn);
  acc.add(mask);
  return acc.mean();
}

/// Objects are 2D per slice and pooled across the stack.
inline std::optional<double> average_solidity(std::span<const Mask> stack,
                                              std::size_t min_object_px = kMinObjectPixels,
                                              Connectivity conn = Connectivity::eight) {
  SolidityAccumulator acc(min_object_px, conn);
  for (const auto& m : stack) acc.add(m);
  return acc.mean();
}

inline std::optional<double> objective_solidity(const LabelStack& source_labels,
                                                std::size_t min_object_px = kMinObjectPixels) {
  return average_solidity(std::span<const Mask>(source_labels.slices), min_object_px);
}

struct TraceEntry {
  std::size_t epoch = 0;
  std::optional<double> target_solidity;
  std::optional<double> target_iou;
  std::optional<double> source_val_iou;
  // Bookkeeping, not used for selection.
  std::string phase;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
  std::optional<double> lr;
};

struct SolidityTrace {
  std::optional<double> objective_solidity;
  std::size_t min_object_px = kMinObjectPixels;
  std::vector<TraceEntry> entries;

  void validate() const {
    for (std::size_t i = 1; i < entries.size(); ++i)
      if (entries[i].epoch <= entries[i - 1].epoch) throw SelectionError("trace entries must be ordered by epoch");
  }
};

enum class Criterion : std::uint8_t { source_val, last_epoch, solidity };

inline constexpr std::array<Criterion, 3> kAllCriteria{Criterion::source_val, Criterion::last_epoch,
                                                       Criterion::solidity};

inline std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::source_val: return "source_val";
    case Criterion::last_epoch: return "last_epoch";
    case Criterion::solidity: return "solidity";
  }
  return "solidity";
}

inline Criterion parse_criterion(const std::string& s) {
  for (auto c : kAllCriteria)
    if (to_string(c) == s) return c;
  throw ArgumentError("unknown stopping criterion '" + s + "'");
}

/// Epoch whose target solidity is closest to the objective. Ties go to the
/// later epoch; entries with undefined solidity are skipped.
inline std::size_t select_by_solidity(const SolidityTrace& trace) {
  trace.validate();
  if (!trace.objective_solidity) throw SelectionError("trace has no objective solidity");
  const double objective = *trace.objective_solidity;
  std::optional<std::size_t> best;
  double best_gap = 0;
  for (const auto& e : trace.entries) {
    if (!e.target_solidity) continue;
    const double gap = std::abs(*e.target_solidity - objective);
    if (!best || gap <= best_gap) {
      best = e.epoch;
      best_gap = gap;
    }
  }
  if (!best) throw SelectionError("no trace entry has a defined solidity");
  return *best;
}

inline std::size_t select_by_criterion(const SolidityTrace& trace, Criterion criterion) {
  trace.validate();
  switch (criterion) {
    case Criterion::last_epoch:
      if (trace.entries.empty()) throw SelectionError("empty trace");
      return trace.entries.back().epoch;
    case Criterion::source_val: {
      // Strict improvement, like keeping the best checkpoint.
      std::optional<std::size_t> best;
      double best_iou = 0;
      for (const auto& e : trace.entries)
        if (e.source_val_iou && (!best || *e.source_val_iou > best_iou)) {
          best = e.epoch;
          best_iou = *e.source_val_iou;
        }
      if (!best) throw SelectionError("trace has no source validation IoU");
      return *best;
    }
    case Criterion::solidity: return select_by_solidity(trace);
  }
  throw SelectionError("unknown criterion");
}

inline const TraceEntry& entry_at(const SolidityTrace& trace, std::size_t epoch) {
  for (const auto& e : trace.entries)
    if (e.epoch == epoch) return e;
  throw SelectionError("epoch " + std::to_string(epoch) + " not in trace");
}

namespace detail {

inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const TraceEntry& e) {
  nlohmann::json j{{"epoch", e.epoch},
                   {"target_solidity", detail::opt(e.target_solidity)},
                   {"target_iou", detail::opt(e.target_iou)},
                   {"source_val_iou", detail::opt(e.source_val_iou)}};
  if (!e.phase.empty()) j["phase"] = e.phase;
  if (e.train_loss) j["train_loss"] = *e.train_loss;
  if (e.val_loss) j["val_loss"] = *e.val_loss;
  if (e.lr) j["lr"] = *e.lr;
  return j;
}

inline TraceEntry trace_entry_from_json(const nlohmann::json& j) {
  TraceEntry e;
  e.epoch = j.at("epoch").get<std::size_t>();
  e.target_solidity = detail::opt_from(j, "target_solidity");
  e.target_iou = detail::opt_from(j, "target_iou");
  e.source_val_iou = detail::opt_from(j, "source_val_iou");
  e.phase = j.value("phase", std::string{});
  e.train_loss = detail::opt_from(j, "train_loss");
  e.val_loss = detail::opt_from(j, "val_loss");
  e.lr = detail::opt_from(j, "lr");
  return e;
}

inline nlohmann::json to_json(const SolidityTrace& t) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : t.entries) entries.push_back(to_json(e));
  return {{"objective_solidity", detail::opt(t.objective_solidity)},
          {"min_object_px", t.min_object_px},
          {"entries", entries}};
}

inline SolidityTrace solidity_trace_from_json(const nlohmann::json& j) {
  SolidityTrace t;
  t.objective_solidity = detail::opt_from(j, "objective_solidity");
  t.min_object_px = j.value("min_object_px", kMinObjectPixels);
  for (const auto& e : j.at("entries")) t.entries.push_back(trace_entry_from_json(e));
  t.validate();
  return t;
}

}  // namespace mitoda
