#pragma once

// Differentiable operations on Tape values. All matrices are row-major;
// "[n, d]" means n rows of d features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lemmatag/nn/tape.hpp"

namespace lemmatag::nn {

namespace detail {

inline void expect(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

// y = x W^T (+ b). x [n, in], W [out, in], b [out].
template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, const Var* b = nullptr) {
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  detail::expect(xs.size() == 2 && ws.size() == 2, "dense", "expected x [n, in] and W [out, in]");
  detail::expect(xs[1] == ws[1],
                 "dense", "x has " + std::to_string(xs[1]) + " features, W expects [*, " + std::to_string(ws[1]) + "]");
  const std::size_t n = xs[0], in = xs[1], out = ws[0];
  if (b) detail::expect(tape.shape(*b) == Shape{out}, "dense", "bias must have shape [" + std::to_string(out) + "]");

  Buffer<T> y(n * out);
  MatrixMap<T> Y(y.data(), n, out);
  ConstMatrixMap<T> X(tape.value(x).data(), n, in);
  ConstMatrixMap<T> W(tape.value(w).data(), out, in);
  Y.noalias() = X * W.transpose();
  if (b) Y.rowwise() += ConstRowVectorMap<T>(tape.value(*b).data(), out);

  const bool needs = tape.requires_grad(x) || tape.requires_grad(w) || (b && tape.requires_grad(*b));
  Var bias = b ? *b : Var{};
  Var self{tape.size()};
  return tape.push({n, out}, std::move(y), needs, [&tape, x, w, bias, self, n, in, out] {
    ConstMatrixMap<T> dY(tape.grad(self).data(), n, out);
    if (tape.requires_grad(x)) {
      MatrixMap<T> dX(tape.grad(x).data(), n, in);
      dX.noalias() += dY * ConstMatrixMap<T>(tape.value(w).data(), out, in);
    }
    if (tape.requires_grad(w)) {
      MatrixMap<T> dW(tape.grad(w).data(), out, in);
      dW.noalias() += dY.transpose() * ConstMatrixMap<T>(tape.value(x).data(), n, in);
    }
    if (bias.index != Var{}.index && tape.requires_grad(bias)) {
      RowVectorMap<T>(tape.grad(bias).data(), out) += dY.colwise().sum();
    }
  }, "dense");
}

template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, Var b) {
  return dense(tape, x, w, &b);
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  detail::expect(tape.shape(a) == tape.shape(b), "add",
                 "operand shapes " + to_string(tape.shape(a)) + " and " + to_string(tape.shape(b)) + " differ");
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  Buffer<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  Var self{tape.size()};
  return tape.push(tape.shape(a), std::move(y), tape.requires_grad(a) || tape.requires_grad(b), [&tape, a, b, self] {
    const auto& g = tape.grad(self);
    for (Var in : {a, b}) {
      if (!tape.requires_grad(in)) continue;
      auto& d = tape.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  }, "add");
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  detail::expect(tape.shape(a) == tape.shape(b), "mul",
                 "operand shapes " + to_string(tape.shape(a)) + " and " + to_string(tape.shape(b)) + " differ");
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  Buffer<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  Var self{tape.size()};
  return tape.push(tape.shape(a), std::move(y), tape.requires_grad(a) || tape.requires_grad(b), [&tape, a, b, self] {
    const auto& g = tape.grad(self);
    if (tape.requires_grad(a)) {
      auto& d = tape.grad(a);
      const auto& bv = tape.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(b)) {
      auto& d = tape.grad(b);
      const auto& av = tape.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  }, "mul");
}

template <typename T>
Var tanh(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  Buffer<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(av[i]);
  Var self{tape.size()};
  return tape.push(tape.shape(a), std::move(y), tape.requires_grad(a), [&tape, a, self] {
    const auto& g = tape.grad(self);
    const auto& y = tape.value(self);
    auto& d = tape.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (T(1) - y[i] * y[i]);
  }, "tanh");
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  Buffer<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = detail::sigmoid(av[i]);
  Var self{tape.size()};
  return tape.push(tape.shape(a), std::move(y), tape.requires_grad(a), [&tape, a, self] {
    const auto& g = tape.grad(self);
    const auto& y = tape.value(self);
    auto& d = tape.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (T(1) - y[i]);
  }, "sigmoid");
}

// Concatenates 2-D operands [n, d_i] along the feature axis.
template <typename T>
Var concat(Tape<T>& tape, std::span<const Var> parts) {
  detail::expect(!parts.empty(), "concat", "no operands");
  const std::size_t n = tape.shape(parts[0]).at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool needs = false;
  for (Var p : parts) {
    const Shape& s = tape.shape(p);
    detail::expect(s.size() == 2 && s[0] == n, "concat",
                   "operand shape " + to_string(s) + " does not have " + std::to_string(n) + " rows");
    widths.push_back(s[1]);
    total += s[1];
    needs = needs || tape.requires_grad(p);
  }
  Buffer<T> y(n * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = tape.value(parts[k]);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  y.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Var self{tape.size()};
  return tape.push({n, total}, std::move(y), needs, [&tape, inputs, widths, self, n, total] {
    const auto& g = tape.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (tape.requires_grad(inputs[k])) {
        auto& d = tape.grad(inputs[k]);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) d[r * widths[k] + c] += g[r * total + offset + c];
        }
      }
      offset += widths[k];
    }
  }, "concat");
}

template <typename T>
Var concat(Tape<T>& tape, std::initializer_list<Var> parts) {
  return concat(tape, std::span<const Var>(parts.begin(), parts.size()));
}

// Rows of `table` [V, d] selected by ids; gradients scatter-add back.
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids) {
  const Shape& ts = tape.shape(table);
  detail::expect(ts.size() == 2, "embedding", "table must be [vocab, dim]");
  const std::size_t vocab = ts[0], dim = ts[1];
  const auto& tv = tape.value(table);
  Buffer<T> y(ids.size() * dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    detail::expect(ids[r] >= 0 && static_cast<std::size_t>(ids[r]) < vocab, "embedding",
                   "id " + std::to_string(ids[r]) + " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[r]) * dim), dim,
                y.begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  Var self{tape.size()};
  return tape.push({ids.size(), dim}, std::move(y), tape.requires_grad(table), [&tape, table, id_copy, self, dim] {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(table);
    for (std::size_t r = 0; r < id_copy.size(); ++r) {
      const std::size_t base = static_cast<std::size_t>(id_copy[r]) * dim;
      for (std::size_t c = 0; c < dim; ++c) d[base + c] += g[r * dim + c];
    }
  }, "embedding");
}

// Zeroes rows of x [n, d] whose mask entry is 0.
template <typename T>
Var mask_rows(Tape<T>& tape, Var x, std::span<const std::uint8_t> mask) {
  const Shape& s = tape.shape(x);
  detail::expect(s.size() == 2 && s[0] == mask.size(), "mask_rows", "mask length must equal row count");
  const std::size_t d = s[1];
  Buffer<T> y = tape.value(x);
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) std::fill_n(y.begin() + static_cast<std::ptrdiff_t>(r * d), d, T(0));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Var self{tape.size()};
  return tape.push(s, std::move(y), tape.requires_grad(x), [&tape, x, m, self, d] {
    const auto& g = tape.grad(self);
    auto& dx = tape.grad(x);
    for (std::size_t r = 0; r < m.size(); ++r) {
      if (!m[r]) continue;
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += g[r * d + c];
    }
  }, "mask_rows");
}

// Same values under a new shape with equal element count.
template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  detail::expect(num_elements(shape) == tape.value(x).size(), "reshape",
                 "cannot view " + to_string(tape.shape(x)) + " as " + to_string(shape));
  Var self{tape.size()};
  return tape.push(std::move(shape), tape.value(x), tape.requires_grad(x), [&tape, x, self] {
    const auto& g = tape.grad(self);
    auto& d = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  }, "reshape");
}

// Stacks per-step [n, d] tensors into [n, steps, d].
template <typename T>
Var stack_steps(Tape<T>& tape, std::span<const Var> steps) {
  detail::expect(!steps.empty(), "stack_steps", "no steps");
  const Shape s0 = tape.shape(steps[0]);
  detail::expect(s0.size() == 2, "stack_steps", "steps must be [n, d]");
  const std::size_t n = s0[0], d = s0[1], len = steps.size();
  Buffer<T> y(n * len * d);
  bool needs = false;
  for (std::size_t t = 0; t < len; ++t) {
    detail::expect(tape.shape(steps[t]) == s0, "stack_steps", "step " + std::to_string(t) + " has a different shape");
    const auto& v = tape.value(steps[t]);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * d), d,
                  y.begin() + static_cast<std::ptrdiff_t>((r * len + t) * d));
    }
    needs = needs || tape.requires_grad(steps[t]);
  }
  std::vector<Var> inputs(steps.begin(), steps.end());
  Var self{tape.size()};
  return tape.push({n, len, d}, std::move(y), needs, [&tape, inputs, self, n, d, len] {
    const auto& g = tape.grad(self);
    for (std::size_t t = 0; t < len; ++t) {
      if (!tape.requires_grad(inputs[t])) continue;
      auto& dx = tape.grad(inputs[t]);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += g[(r * len + t) * d + c];
      }
    }
  }, "stack_steps");
}

// Per-row normalization over the last axis (eps = 1e-5), then gain/bias.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias) {
  const Shape& s = tape.shape(x);
  detail::expect(!s.empty() && s.back() >= 1, "layer_norm", "input needs a non-empty last axis");
  const std::size_t d = s.back();
  const std::size_t rows = num_elements(s) / d;
  detail::expect(tape.shape(gain) == Shape{d} && tape.shape(bias) == Shape{d}, "layer_norm",
                 "gain and bias must have shape [" + std::to_string(d) + "]");
  constexpr T kEps = T(1e-5);
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gain);
  const auto& bv = tape.value(bias);
  auto xhat = std::make_shared<Buffer<T>>(xv.size());
  auto inv_std = std::make_shared<Buffer<T>>(rows);
  Buffer<T> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + kEps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mean) * is;
      (*xhat)[r * d + c] = h;
      y[r * d + c] = gv[c] * h + bv[c];
    }
  }
  const bool needs = tape.requires_grad(x) || tape.requires_grad(gain) || tape.requires_grad(bias);
  Var self{tape.size()};
  return tape.push(s, std::move(y), needs, [&tape, x, gain, bias, self, xhat, inv_std, rows, d] {
    const auto& g = tape.grad(self);
    const auto& gv = tape.value(gain);
    if (tape.requires_grad(gain)) {
      auto& dg = tape.grad(gain);
      for (std::size_t i = 0; i < g.size(); ++i) dg[i % d] += g[i] * (*xhat)[i];
    }
    if (tape.requires_grad(bias)) {
      auto& db = tape.grad(bias);
      for (std::size_t i = 0; i < g.size(); ++i) db[i % d] += g[i];
    }
    if (tape.requires_grad(x)) {
      auto& dx = tape.grad(x);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g[r * d + c] * gv[c];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[r * d + c];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g[r * d + c] * gv[c];
          dx[r * d + c] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + c] * mean_dh_h);
        }
      }
    }
  }, "layer_norm");
}

// Mean negative log-softmax probability of the targets over unmasked
// positions. logits [n, steps, classes]; targets and mask are row-major
// [n, steps].
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const Shape& s = tape.shape(logits);
  detail::expect(s.size() == 3, "softmax_cross_entropy", "logits must be [batch, steps, classes]");
  const std::size_t positions = s[0] * s[1], classes = s[2];
  detail::expect(targets.size() == positions && mask.size() == positions, "softmax_cross_entropy",
                 "targets and mask must be [batch, steps]");
  std::size_t count = 0;
  for (std::size_t p = 0; p < positions; ++p) {
    if (!mask[p]) continue;
    ++count;
    detail::expect(targets[p] >= 0 && static_cast<std::size_t>(targets[p]) < classes, "softmax_cross_entropy",
                   "target " + std::to_string(targets[p]) + " outside [0, " + std::to_string(classes) + ")");
  }
  if (count == 0) throw ShapeError("softmax_cross_entropy: no unmasked positions");

  const auto& z = tape.value(logits);
  auto probs = std::make_shared<Buffer<T>>(z.size(), T(0));
  T loss = 0;
  for (std::size_t p = 0; p < positions; ++p) {
    if (!mask[p]) continue;
    const T* zr = z.data() + p * classes;
    T* pr = probs->data() + p * classes;
    const T mx = *std::max_element(zr, zr + classes);
    T sum = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      pr[c] = std::exp(zr[c] - mx);
      sum += pr[c];
    }
    for (std::size_t c = 0; c < classes; ++c) pr[c] /= sum;
    loss -= zr[static_cast<std::size_t>(targets[p])] - mx - std::log(sum);
  }
  loss /= static_cast<T>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Var self{tape.size()};
  return tape.push({1}, {loss}, tape.requires_grad(logits),
                   [&tape, logits, self, probs, tgt, m, positions, classes, count] {
    const T scale = tape.grad(self)[0] / static_cast<T>(count);
    auto& d = tape.grad(logits);
    for (std::size_t p = 0; p < positions; ++p) {
      if (!m[p]) continue;
      for (std::size_t c = 0; c < classes; ++c) d[p * classes + c] += scale * (*probs)[p * classes + c];
      d[p * classes + static_cast<std::size_t>(tgt[p])] -= scale;
    }
  }, "softmax_cross_entropy");
}

// Σ w_i x_i with constant weights; used to reduce a tensor to a scalar
// objective.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, std::span<const T> weights) {
  const auto& xv = tape.value(x);
  detail::expect(weights.size() == xv.size(), "weighted_sum", "weight count must equal element count");
  T acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  Buffer<T> w(weights.begin(), weights.end());
  Var self{tape.size()};
  return tape.push({1}, {acc}, tape.requires_grad(x), [&tape, x, self, w] {
    const T g = tape.grad(self)[0];
    auto& d = tape.grad(x);
    for (std::size_t i = 0; i < w.size(); ++i) d[i] += g * w[i];
  }, "weighted_sum");
}

}  // namespace lemmatag::nn
