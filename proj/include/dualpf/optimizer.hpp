#pragma once

#include <cstddef>
#include <vector>

#include "dualpf/param_store.hpp"

namespace dualpf {

struct AdamConfig {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup = 400;
  // Keep parameters and moments exactly representable as binary32.
  bool f32_state = false;
};

// peak * min(step / warmup, sqrt(warmup / step)); step counts from 1.
double inverse_sqrt_lr(double peak, std::size_t warmup, std::size_t step);

class Adam {
 public:
  Adam(const ParamStore& store, AdamConfig config);

  // Applies one update using the store's gradients and the scheduled rate.
  void step(ParamStore& store);
  // Same, with an explicit learning rate for this step.
  void step(ParamStore& store, double lr);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  double scheduled_lr(std::size_t step) const { return inverse_sqrt_lr(config_.peak_lr, config_.warmup, step); }

  // Moments indexed by parameter id; exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t steps) { steps_ = steps; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

// Throws NumericalError naming the first parameter with a non-finite gradient.
void check_finite_grads(const ParamStore& store, const char* model_tag = "");

}  // namespace dualpf
