#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smmix/tensor.hpp"

namespace smmix {

struct OptimizerConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay AdamW over an ordered parameter list.
template <class S>
class AdamW {
 public:
  AdamW(OptimizerConfig cfg, const std::vector<std::pair<std::string, Tensor<S>>>& params)
      : cfg_(cfg) {
    for (const auto& [name, t] : params) {
      m_.emplace_back(t.size(), S(0));
      v_.emplace_back(t.size(), S(0));
    }
  }

  void step(std::vector<std::pair<std::string, Tensor<S>>>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor<S>& w = params[p].second;
      // LayerNorm scales and biases are 1-D; skip their weight decay.
      const double wd = w.ndim() >= 2 ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        double g = static_cast<double>(w.grad()[i]);
        double m = cfg_.beta1 * static_cast<double>(m_[p][i]) + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * static_cast<double>(v_[p][i]) + (1.0 - cfg_.beta2) * g * g;
        m_[p][i] = static_cast<S>(m);
        v_[p][i] = static_cast<S>(v);
        double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        double value = static_cast<double>(w.value()[i]);
        w.value()[i] = static_cast<S>(value - lr * (update + wd * value));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<std::vector<S>>& m_state() { return m_; }
  std::vector<std::vector<S>>& v_state() { return v_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

// Linear warmup to base_lr, then cosine decay to zero over the remaining
// steps. `step` is 0-based.
inline double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                    double base_lr) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  std::int64_t decay_span = std::max<std::int64_t>(1, total_steps - warmup_steps);
  double t = static_cast<double>(step - warmup_steps) / static_cast<double>(decay_span);
  if (t > 1.0) t = 1.0;
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace smmix
