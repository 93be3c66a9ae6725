#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include "mitoda/error.hpp"

namespace mitoda {

struct OneCycleConfig {
  double max_lr = 5e-4;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
};

/// Step of the warm-up/anneal boundary for a cycle of `total_steps`.
inline std::size_t one_cycle_peak(std::size_t total_steps, double pct_start = 0.3) {
  if (total_steps < 2) return 0;
  const auto peak = static_cast<std::size_t>(std::lround(pct_start * static_cast<double>(total_steps - 1)));
  return std::clamp<std::size_t>(peak, 1, total_steps - 1);
}

/// One-cycle policy with cosine warm-up from max_lr/div_factor to max_lr and
/// cosine annealing down to max_lr/(div_factor*final_div_factor).
inline double lr_one_cycle(std::size_t step, std::size_t total_steps, const OneCycleConfig& cfg) {
  if (total_steps == 0 || step >= total_steps)
    throw ArgumentError("one-cycle step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  constexpr double pi = 3.14159265358979323846;
  const std::size_t peak = one_cycle_peak(total_steps, cfg.pct_start);
  if (step == peak) return cfg.max_lr;
  const double initial = cfg.max_lr / cfg.div_factor;
  const double floor_lr = initial / cfg.final_div_factor;
  if (step < peak) {
    const double t = static_cast<double>(step) / static_cast<double>(peak);
    return initial + (cfg.max_lr - initial) * 0.5 * (1.0 - std::cos(pi * t));
  }
  const double t = static_cast<double>(step - peak) / static_cast<double>(total_steps - 1 - peak);
  return floor_lr + (cfg.max_lr - floor_lr) * 0.5 * (1.0 + std::cos(pi * t));
}

inline double lr_one_cycle(std::size_t step, std::size_t total_steps, double max_lr) {
  return lr_one_cycle(step, total_steps, OneCycleConfig{.max_lr = max_lr});
}

/// Reduce-on-plateau for a minimised quantity: after `patience` consecutive
/// epochs without a new best, lr is multiplied by `factor` and the wait
/// counter restarts.
class ReduceOnPlateau {
 public:
  ReduceOnPlateau(double lr, std::size_t patience, double factor, double min_lr = 0.0)
      : lr_(lr), patience_(patience), factor_(factor), min_lr_(min_lr) {
    if (!(factor > 0.0 && factor < 1.0)) throw ArgumentError("plateau factor must lie in (0, 1)");
  }

  double step(double monitored) {
    if (monitored < best_) {
      best_ = monitored;
      wait_ = 0;
      since_best_ = 0;
      return lr_;
    }
    ++wait_;
    ++since_best_;
    if (wait_ >= patience_) {
      lr_ = std::max(lr_ * factor_, min_lr_);
      wait_ = 0;
      ++reductions_;
    }
    return lr_;
  }

  double lr() const noexcept { return lr_; }
  std::size_t reductions() const noexcept { return reductions_; }
  /// Epochs since the last improvement.
  std::size_t since_best() const noexcept { return since_best_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t wait_ = 0;
  std::size_t since_best_ = 0;
  std::size_t reductions_ = 0;
};

/// Replays a monitored history through ReduceOnPlateau and returns the
/// resulting learning rate.
inline double lr_reduce_on_plateau(std::span<const double> history, std::size_t patience, double factor, double lr) {
  ReduceOnPlateau s(lr, patience, factor);
  for (double v : history) s.step(v);
  return s.lr();
}

}  // namespace mitoda
