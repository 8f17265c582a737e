#include "dualpf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dualpf/errors.hpp"

namespace dualpf {

double inverse_sqrt_lr(double peak, std::size_t warmup, std::size_t step) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  if (warmup == 0) return peak;
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(const ParamStore& store, AdamConfig config) : config_(config) {
  m_.resize(store.size());
  v_.resize(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_[i].assign(store.shape(i).numel(), 0.0);
    v_[i].assign(store.shape(i).numel(), 0.0);
  }
}

void check_finite_grads(const ParamStore& store, const char* model_tag) {
  for (std::size_t id : store.ordered())
    for (double g : store.grad(id))
      if (!std::isfinite(g))
        throw NumericalError(std::string("non-finite gradient in parameter '") + model_tag + store.name(id) + "'");
}

void Adam::step(ParamStore& store) { step(store, scheduled_lr(steps_ + 1)); }

void Adam::step(ParamStore& store, double lr) {
  if (store.size() != m_.size()) throw DimensionError("Adam: parameter store changed size");
  check_finite_grads(store);
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t id = 0; id < store.size(); ++id) {
    auto g = store.grad(id);
    auto w = store.value_mut(id);
    auto& m = m_[id];
    auto& v = v_[id];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      if (config_.f32_state) {
        m[k] = static_cast<float>(m[k]);
        v[k] = static_cast<float>(v[k]);
      }
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  if (config_.f32_state) store.round_to_f32();
}

}  // namespace dualpf
