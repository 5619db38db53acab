#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpqg/errors.hpp"
#include "mpqg/tape.hpp"

namespace mpqg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<input>[<coordinate>]" of the worst coordinate
  std::size_t coordinates = 0;
};

namespace detail {

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

inline double scalar_head(const Var& v) {
  if (v.size() != 1)
    throw ContractError("grad_check needs a scalar loss head, got shape " + shape_string(v.shape()));
  return v.value()[0];
}

}  // namespace detail

using LossOfInputs = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients of a scalar function of `inputs` against
// central differences with step h.
inline GradCheckResult grad_check(const LossOfInputs& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.input(x));
    Var loss = f(tape, vars);
    detail::scalar_head(loss);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return detail::scalar_head(f(tape, vars));
  };
  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double up = eval(probe);
      probe[k][i] = x0 - h;
      const double down = eval(probe);
      probe[k][i] = x0;
      const double err = detail::rel_error(analytic[k][i], (up - down) / (2.0 * h));
      ++result.coordinates;
      if (result.worst.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

using LossOfParams = std::function<Var(Tape&)>;

// Same check against the named parameters (all non-frozen ones when `names`
// is empty). `f` must read parameters through Tape::param on every call.
inline GradCheckResult grad_check_params(const LossOfParams& f, ModelParams& params,
                                         const std::vector<std::string>& names = {}, double h = 1e-5) {
  std::vector<std::string> selected = names;
  if (selected.empty())
    for (auto& [name, p] : params)
      if (!p.frozen) selected.push_back(name);

  params.zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    detail::scalar_head(loss);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    return detail::scalar_head(f(tape));
  };
  GradCheckResult result;
  for (const auto& name : selected) {
    Parameter& p = params.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value[i];
      p.value[i] = x0 + h;
      const double up = eval();
      p.value[i] = x0 - h;
      const double down = eval();
      p.value[i] = x0;
      const double err = detail::rel_error(p.grad[i], (up - down) / (2.0 * h));
      ++result.coordinates;
      if (result.worst.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace mpqg
