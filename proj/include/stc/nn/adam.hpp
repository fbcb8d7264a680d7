#pragma once

#include <cmath>
#include <span>

#include "stc/error.hpp"
#include "stc/nn/tensor.hpp"

namespace stc::nn {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update on every parameter, using p->grad.
// Throws TrainingError (without touching any parameter) if a gradient is
// non-finite.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, double lr, const AdamConfig& cfg = {}) {
  for (const Parameter<T>* p : params)
    if (!p->grad.all_finite()) throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
  for (Parameter<T>* p : params) {
    ++p->step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      p->m[i] = b1 * p->m[i] + (T(1) - b1) * g;
      p->v[i] = b2 * p->v[i] + (T(1) - b2) * g * g;
      const double mhat = p->m[i] / c1;
      const double vhat = p->v[i] / c2;
      p->value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <class T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) p->zero_grad();
}

}  // namespace stc::nn
