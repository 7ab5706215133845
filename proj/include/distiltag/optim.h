#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "distiltag/error.h"
#include "distiltag/graph.h"
#include "distiltag/tensor.h"

namespace distiltag {

// Adam with a fixed learning rate and bias correction. m and v are created on
// the first step to mirror the parameter list.
struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Applies one update using each parameter's gradient buffer (a missing
// buffer counts as zero gradient).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::kDimension, "adam: state tracks " + std::to_string(state.m.size()) +
                                    " tensors, got " + std::to_string(params.size()));
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) {
      fail(ErrorKind::kDimension, "adam: state for tensor " + std::to_string(k) + " has " +
                                      std::to_string(m.size()) + " entries, parameter has " +
                                      std::to_string(p.size()));
    }
    const bool has_grad = p.has_grad();
    if (!has_grad) {
      // Zero gradient still decays the moments.
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] *= state.beta1;
        v[i] *= state.beta2;
      }
    }
    auto values = p.values();
    const std::span<const T> g = has_grad ? p.grad() : std::span<const T>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (has_grad) {
        const double gi = static_cast<double>(g[i]);
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      }
      if (m[i] == 0.0) continue;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                 state.lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

// Central-difference gradient check. Returns the largest elementwise
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// over every parameter entry. `loss_fn` must be deterministic.
template <typename T>
double grad_check(const std::function<Tensor<T>(Graph<T>&)>& loss_fn,
                  std::span<Tensor<T>> params, double epsilon) {
  auto evaluate = [&]() {
    Graph<T> g(false);
    const double value = static_cast<double>(loss_fn(g).item());
    if (!std::isfinite(value)) fail(ErrorKind::kContract, "grad_check: non-finite loss");
    return value;
  };

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.grad();
    p.zero_grad();
  }
  {
    Graph<T> g(true);
    auto loss = loss_fn(g);
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      fail(ErrorKind::kContract, "grad_check: non-finite loss");
    }
    g.backward(loss);
  }

  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<T> analytic(p.grad().begin(), p.grad().end());
    auto values = p.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(static_cast<double>(saved) + epsilon);
      const double plus = evaluate();
      values[i] = static_cast<T>(static_cast<double>(saved) - epsilon);
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = static_cast<double>(analytic[i]);
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace distiltag
