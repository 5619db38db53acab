#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "mpqg/errors.hpp"
#include "mpqg/tape.hpp"

namespace mpqg {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update from the gradients stored in `params`.
// Frozen parameters are skipped and keep no moments.
inline void adam_step(ModelParams& params, AdamState& state, double lr) {
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    if (p.frozen) continue;
    if (p.grad.shape() != p.value.shape())
      throw ContractError("adam_step: gradient of " + name + " has shape " + shape_string(p.grad.shape()) +
                          ", parameter " + shape_string(p.value.shape()));
    auto [mi, m_new] = state.m.try_emplace(name, Tensor::zeros(p.value.shape()));
    auto [vi, v_new] = state.v.try_emplace(name, Tensor::zeros(p.value.shape()));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape())
      throw ContractError("adam_step: moment shapes of " + name + " do not match the parameter");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

inline double grad_global_norm(const ModelParams& params) {
  double s = 0.0;
  for (const auto& [_, p] : params)
    if (!p.frozen)
      for (double g : p.grad.values()) s += g * g;
  return std::sqrt(s);
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ModelParams& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [_, p] : params)
      if (!p.frozen)
        for (double& g : p.grad.values()) g *= k;
  }
  return norm;
}

}  // namespace mpqg
