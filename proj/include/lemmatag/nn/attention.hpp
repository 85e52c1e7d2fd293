#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lemmatag/nn/ops.hpp"

namespace lemmatag::nn {

// Additive (Bahdanau) attention: e_i = v . tanh(W_q q + W_k m_i).
template <typename T>
struct AttentionParams {
  Parameter<T>* query_weights = nullptr;   // W_q [A, Dq]
  Parameter<T>* memory_weights = nullptr;  // W_k [A, Dm]
  Parameter<T>* score_vector = nullptr;    // v [A]
};

template <typename T>
AttentionParams<T> make_attention(ParamStore<T>& store, const std::string& name, std::size_t query_dim,
                                  std::size_t memory_dim, std::size_t attention_dim, SplitMix64& rng) {
  AttentionParams<T> p;
  p.query_weights = &store.add(name + ".query_weights", {attention_dim, query_dim});
  p.memory_weights = &store.add(name + ".memory_weights", {attention_dim, memory_dim});
  p.score_vector = &store.add(name + ".score_vector", {attention_dim});
  init_uniform(*p.query_weights, 1.0 / std::sqrt(static_cast<double>(query_dim)), rng);
  init_uniform(*p.memory_weights, 1.0 / std::sqrt(static_cast<double>(memory_dim)), rng);
  init_uniform(*p.score_vector, 1.0 / std::sqrt(static_cast<double>(attention_dim)), rng);
  return p;
}

struct AttentionResult {
  Var context;  // [batch, Dm]
  Var weights;  // [batch, steps]; constant, for inspection
};

// Projects memory [batch, steps, Dm] through W_k once so that repeated
// decoder steps can reuse it. Result is [batch, steps, A].
template <typename T>
Var project_memory(Tape<T>& tape, const AttentionParams<T>& params, Var memory) {
  const Shape ms = tape.shape(memory);
  detail::expect(ms.size() == 3, "bahdanau_attention", "memory must be [batch, steps, dim]");
  const Var flat = reshape(tape, memory, {ms[0] * ms[1], ms[2]});
  const Var keys = dense(tape, flat, tape.param(*params.memory_weights));
  return reshape(tape, keys, {ms[0], ms[1], tape.shape(keys)[1]});
}

// Scores projected keys against a query, softmaxes over valid positions and
// returns the weighted memory sum. mask is row-major [batch, steps].
template <typename T>
AttentionResult attend(Tape<T>& tape, const AttentionParams<T>& params, Var query, Var projected_memory, Var memory,
                       std::span<const std::uint8_t> mask) {
  const Shape ms = tape.shape(memory);
  const Shape ks = tape.shape(projected_memory);
  detail::expect(ms.size() == 3 && ks.size() == 3 && ks[0] == ms[0] && ks[1] == ms[1], "bahdanau_attention",
                 "memory " + to_string(ms) + " and projected memory " + to_string(ks) + " disagree");
  const std::size_t n = ms[0], steps = ms[1], dm = ms[2], A = ks[2];
  detail::expect(tape.shape(query).size() == 2 && tape.shape(query)[0] == n, "bahdanau_attention",
                 "query must be [" + std::to_string(n) + ", dim]");
  detail::expect(mask.size() == n * steps, "bahdanau_attention", "mask must be [batch, steps]");
  for (std::size_t r = 0; r < n; ++r) {
    bool any = false;
    for (std::size_t i = 0; i < steps; ++i) any = any || mask[r * steps + i];
    if (!any) throw ShapeError("bahdanau_attention: row " + std::to_string(r) + " has no valid memory position");
  }

  const Var q = dense(tape, query, tape.param(*params.query_weights));
  const Var v = tape.param(*params.score_vector);
  detail::expect(tape.shape(q)[1] == A, "bahdanau_attention", "W_q and W_k produce different attention dims");

  const auto& qv = tape.value(q);
  const auto& kv = tape.value(projected_memory);
  const auto& mv = tape.value(memory);
  const auto& vv = tape.value(v);
  auto act = std::make_shared<Buffer<T>>(n * steps * A);  // tanh(q + k_i)
  auto alpha = std::make_shared<Buffer<T>>(n * steps, T(0));
  Buffer<T> ctx(n * dm, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    Buffer<T> scores(steps, T(0));
    for (std::size_t i = 0; i < steps; ++i) {
      if (!mask[r * steps + i]) continue;
      T e = 0;
      T* a = act->data() + (r * steps + i) * A;
      const T* k = kv.data() + (r * steps + i) * A;
      for (std::size_t j = 0; j < A; ++j) {
        a[j] = std::tanh(qv[r * A + j] + k[j]);
        e += vv[j] * a[j];
      }
      scores[i] = e;
      mx = std::max(mx, e);
    }
    T sum = 0;
    for (std::size_t i = 0; i < steps; ++i) {
      if (!mask[r * steps + i]) continue;
      const T w = std::exp(scores[i] - mx);
      (*alpha)[r * steps + i] = w;
      sum += w;
    }
    for (std::size_t i = 0; i < steps; ++i) {
      T& w = (*alpha)[r * steps + i];
      w /= sum;
      if (w == T(0)) continue;
      const T* m = mv.data() + (r * steps + i) * dm;
      for (std::size_t c = 0; c < dm; ++c) ctx[r * dm + c] += w * m[c];
    }
  }

  const bool needs = tape.requires_grad(q) || tape.requires_grad(projected_memory) || tape.requires_grad(memory) ||
                     tape.requires_grad(v);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Var self{tape.size()};
  const Var context = tape.push({n, dm}, std::move(ctx), needs,
                                [&tape, self, q, projected_memory, memory, v, act, alpha, m, n, steps, dm, A] {
    const auto& g = tape.grad(self);
    const auto& mv = tape.value(memory);
    const auto& vv = tape.value(v);
    Buffer<T> dq(n * A, T(0));
    Buffer<T> dv(A, T(0));
    Buffer<T> dk(n * steps * A, T(0));
    Buffer<T> dalpha(steps);
    for (std::size_t r = 0; r < n; ++r) {
      const T* gr = g.data() + r * dm;
      T dot = 0;
      for (std::size_t i = 0; i < steps; ++i) {
        dalpha[i] = 0;
        if (!m[r * steps + i]) continue;
        const T* mi = mv.data() + (r * steps + i) * dm;
        for (std::size_t c = 0; c < dm; ++c) dalpha[i] += gr[c] * mi[c];
        dot += (*alpha)[r * steps + i] * dalpha[i];
      }
      for (std::size_t i = 0; i < steps; ++i) {
        if (!m[r * steps + i]) continue;
        const T a_i = (*alpha)[r * steps + i];
        const T ds = a_i * (dalpha[i] - dot);
        const T* a = act->data() + (r * steps + i) * A;
        for (std::size_t j = 0; j < A; ++j) {
          dv[j] += ds * a[j];
          const T dpre = ds * vv[j] * (T(1) - a[j] * a[j]);
          dq[r * A + j] += dpre;
          dk[(r * steps + i) * A + j] += dpre;
        }
      }
    }
    if (tape.requires_grad(memory)) {
      auto& dm_grad = tape.grad(memory);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < steps; ++i) {
          const T a_i = (*alpha)[r * steps + i];
          if (a_i == T(0)) continue;
          for (std::size_t c = 0; c < dm; ++c) dm_grad[(r * steps + i) * dm + c] += a_i * g[r * dm + c];
        }
      }
    }
    auto accumulate = [&tape](Var target, const Buffer<T>& src) {
      if (!tape.requires_grad(target)) return;
      auto& d = tape.grad(target);
      for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
    };
    accumulate(q, dq);
    accumulate(projected_memory, dk);
    accumulate(v, dv);
  }, "bahdanau_attention");
  const Var weights = tape.constant(Tensor<T>({n, steps}, *alpha));
  return {context, weights};
}

// Convenience form that projects the memory itself.
template <typename T>
AttentionResult bahdanau_attention(Tape<T>& tape, const AttentionParams<T>& params, Var query, Var memory,
                                   std::span<const std::uint8_t> mask) {
  return attend(tape, params, query, project_memory(tape, params, memory), memory, mask);
}

}  // namespace lemmatag::nn
