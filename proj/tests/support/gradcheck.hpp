#pragma once

// Central finite-difference gradient checker over every scalar of a
// ParamStore<double>. The loss builder receives a fresh tape and must build
// the whole graph from tape.param(...) bindings.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "lemmatag/nn/tape.hpp"

namespace lemmatag::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  // "param[index] analytic vs numeric"
  std::size_t checked = 0;
};

using LossBuilder = std::function<nn::Var(nn::Tape<double>&)>;

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

// Below kGradFloor a central difference at h = 1e-4 is dominated by
// roundoff (about 1e-16 * |loss| / h), so the denominator is floored there.
inline constexpr double kGradFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
  return std::abs(analytic - numeric) / denom;
}

// max_per_param > 0 samples that many evenly spaced entries per tensor.
inline GradCheckResult grad_check(nn::ParamStore<double>& store, const LossBuilder& build, double h = 1e-4,
                                  std::size_t max_per_param = 0) {
  store.zero_grad();
  {
    nn::Tape<double> tape(true);
    tape.backward(build(tape));
  }
  auto eval = [&] {
    nn::Tape<double> tape(false);
    return tape.value(build(tape))[0];
  };
  GradCheckResult r;
  for (auto& p : store) {
    const std::size_t n = p.size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      double& v = p.value.values[i];
      const double saved = v;
      v = saved + h;
      const double up = eval();
      v = saved - h;
      const double down = eval();
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(p.grad[i], numeric);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p.name + "[" + std::to_string(i) + "] " + fmt(p.grad[i]) + " vs " + fmt(numeric);
      }
    }
  }
  return r;
}

}  // namespace lemmatag::testing
