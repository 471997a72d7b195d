#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "clue/autograd.hpp"

namespace clue {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 40;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::vector<double> class_weights = std::vector<double>(7, 1.0);

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ParameterError("learning rate must be finite and non-negative");
    if (epochs < 0) throw ParameterError("epochs must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ParameterError("Adam betas must lie in [0,1)");
    if (!(epsilon > 0.0)) throw ParameterError("Adam epsilon must be > 0");
    if (class_weights.empty()) throw ParameterError("class weights are empty");
    for (double w : class_weights)
      if (!(w > 0.0)) throw ParameterError("class weights must all be > 0");
  }
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update at step `t` (1-based). Zero gradients leave
/// the parameter buffers bit-for-bit unchanged.
template <class T>
void adam_step(std::vector<Parameter<T>*>& params, AdamState<T>& state, const TrainConfig& cfg,
               std::int64_t t) {
  if (t < 1) throw ParameterError("Adam step index must be >= 1");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value().shape());
      state.v.emplace_back(p->value().shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("Adam state does not match parameter count");
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.shape() != p.value().shape()) throw DimensionError("Adam state shape mismatch for " + p.name);
    T* __restrict mp = m.ptr();
    T* __restrict vp = v.ptr();
    T* __restrict th = p.mutable_value().ptr();
    const std::size_t n = m.size();
    if (!p.var.has_grad()) {
      // Same arithmetic as a zero gradient.
      for (std::size_t i = 0; i < n; ++i) {
        mp[i] = b1 * mp[i];
        vp[i] = b2 * vp[i];
        th[i] -= lr * (mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps);
      }
    } else {
      const Tensor<T>& g = p.var.node()->grad;
      if (g.shape() != m.shape()) throw DimensionError("gradient shape mismatch for " + p.name);
      const T* __restrict gp = g.ptr();
      for (std::size_t i = 0; i < n; ++i) {
        mp[i] = b1 * mp[i] + (T{1} - b1) * gp[i];
        vp[i] = b2 * vp[i] + (T{1} - b2) * gp[i] * gp[i];
        th[i] -= lr * (mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps);
      }
    }
  }
  state.t = t;
}

}  // namespace clue
