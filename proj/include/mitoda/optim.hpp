#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mitoda/error.hpp"
#include "mitoda/nets.hpp"

namespace mitoda {

enum class OptimizerKind : std::uint8_t { adam, sgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

/// Adam or SGD (optional momentum). Parameters of frozen groups are skipped,
/// so they stay bit-identical.
template <class T>
class Optimizer {
 public:
  struct Settings {
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    double momentum = 0.0;
  };

  explicit Optimizer(Settings s) : s_(s) {}

  void step(Network<T>& net, double lr) {
    auto& params = net.params();
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].value.size(), 0.0);
        if (s_.kind == OptimizerKind::adam) v_[i].assign(params[i].value.size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!net.trainable(p.group)) continue;
      auto& m = m_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = static_cast<double>(p.grad[k]);
        double update = 0;
        if (s_.kind == OptimizerKind::adam) {
          m[k] = s_.beta1 * m[k] + (1.0 - s_.beta1) * g;
          v_[i][k] = s_.beta2 * v_[i][k] + (1.0 - s_.beta2) * g * g;
          update = lr * (m[k] / bc1) / (std::sqrt(v_[i][k] / bc2) + s_.epsilon);
        } else {
          m[k] = s_.momentum * m[k] + g;
          update = lr * m[k];
        }
        p.value[k] = static_cast<T>(static_cast<double>(p.value[k]) - update);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  Settings s_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace mitoda
