#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lemmatag/nn/tensor.hpp"

namespace lemmatag::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment accumulators mirror the parameter store in registration order.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Buffer<T>> first_moment;
  std::vector<Buffer<T>> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const ParamStore<T>& params, AdamConfig cfg = {}) : config(cfg) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.size(), T(0));
      second_moment.emplace_back(p.size(), T(0));
    }
  }
};

// One bias-corrected Adam update from the gradients held in the store.
// Throws NumericError before touching anything if a gradient is not finite.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double learning_rate) {
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state does not match parameter store");
  std::size_t k = 0;
  for (const auto& p : params) {
    if (state.first_moment[k].size() != p.size()) {
      throw ShapeError("adam_step: moment shape differs for '" + p.name + "'");
    }
    if (!all_finite(p.grad)) throw NumericError("adam_step: non-finite gradient in '" + p.name + "'");
    ++k;
  }
  ++state.step;
  const auto& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step_size = static_cast<T>(learning_rate / correction1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(correction2));
  const T eps = static_cast<T>(c.epsilon);
  k = 0;
  for (auto& p : params) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto& w = p.value.values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
    }
    ++k;
  }
}

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// true when scaling happened.
template <typename T>
bool clip_global_norm(ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    for (T g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return false;
  const T scale = static_cast<T>(max_norm / norm);
  for (auto& p : params) {
    for (auto& g : p.grad) g *= scale;
  }
  return true;
}

}  // namespace lemmatag::nn
