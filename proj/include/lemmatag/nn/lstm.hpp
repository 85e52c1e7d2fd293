#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lemmatag/nn/ops.hpp"

namespace lemmatag::nn {

// Gate blocks are stacked in the order input, forget, cell, output.
template <typename T>
struct LstmCell {
  Parameter<T>* input_weights = nullptr;      // [4H, in]
  Parameter<T>* recurrent_weights = nullptr;  // [4H, H]
  Parameter<T>* biases = nullptr;             // [4H]
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
};

// Weights uniform in ±1/sqrt(fan_in); biases zero except the forget block,
// which starts at 1.
template <typename T>
LstmCell<T> make_lstm_cell(ParamStore<T>& store, const std::string& name, std::size_t input_dim,
                           std::size_t hidden_dim, SplitMix64& rng) {
  LstmCell<T> cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  cell.input_weights = &store.add(name + ".input_weights", {4 * hidden_dim, input_dim});
  cell.recurrent_weights = &store.add(name + ".recurrent_weights", {4 * hidden_dim, hidden_dim});
  cell.biases = &store.add(name + ".biases", {4 * hidden_dim});
  init_uniform(*cell.input_weights, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
  init_uniform(*cell.recurrent_weights, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
  for (std::size_t i = hidden_dim; i < 2 * hidden_dim; ++i) cell.biases->value.values[i] = T(1);
  return cell;
}

struct LstmState {
  Var h;
  Var c;
};

// One recurrence step for a batch. Rows whose mask entry is 0 carry (h, c)
// through unchanged; an empty mask means every row is active.
template <typename T>
LstmState lstm_step(Tape<T>& tape, const LstmCell<T>& cell, Var x, LstmState state,
                    std::span<const std::uint8_t> mask = {}) {
  const std::size_t H = cell.hidden_dim, in = cell.input_dim;
  const Shape& xs = tape.shape(x);
  detail::expect(xs.size() == 2 && xs[1] == in, "lstm_step",
                 "x has shape " + to_string(xs) + ", expected [batch, " + std::to_string(in) + "]");
  const std::size_t n = xs[0];
  detail::expect(tape.shape(state.h) == Shape{n, H}, "lstm_step",
                 "h has shape " + to_string(tape.shape(state.h)) + ", expected [" + std::to_string(n) + ", " +
                     std::to_string(H) + "]");
  detail::expect(tape.shape(state.c) == Shape{n, H}, "lstm_step",
                 "c has shape " + to_string(tape.shape(state.c)) + ", expected [" + std::to_string(n) + ", " +
                     std::to_string(H) + "]");
  detail::expect(mask.empty() || mask.size() == n, "lstm_step", "mask length must equal batch size");

  const Var wx = tape.param(*cell.input_weights);
  const Var wh = tape.param(*cell.recurrent_weights);
  const Var b = tape.param(*cell.biases);

  auto gates = std::make_shared<Buffer<T>>(n * 4 * H);
  MatrixMap<T> Z(gates->data(), n, 4 * H);
  Z.noalias() = ConstMatrixMap<T>(tape.value(x).data(), n, in) *
                ConstMatrixMap<T>(tape.value(wx).data(), 4 * H, in).transpose();
  Z.noalias() += ConstMatrixMap<T>(tape.value(state.h).data(), n, H) *
                 ConstMatrixMap<T>(tape.value(wh).data(), 4 * H, H).transpose();
  Z.rowwise() += ConstRowVectorMap<T>(tape.value(b).data(), 4 * H);

  const auto& hv = tape.value(state.h);
  const auto& cv = tape.value(state.c);
  auto tanh_c = std::make_shared<Buffer<T>>(n * H);
  Buffer<T> h_new(n * H), c_new(n * H);
  std::vector<std::uint8_t> active(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask.empty()) active[r] = mask[r];
    T* z = gates->data() + r * 4 * H;
    for (std::size_t k = 0; k < H; ++k) {
      z[k] = detail::sigmoid(z[k]);
      z[H + k] = detail::sigmoid(z[H + k]);
      z[2 * H + k] = std::tanh(z[2 * H + k]);
      z[3 * H + k] = detail::sigmoid(z[3 * H + k]);
      const std::size_t j = r * H + k;
      if (active[r]) {
        const T c = z[H + k] * cv[j] + z[k] * z[2 * H + k];
        const T tc = std::tanh(c);
        (*tanh_c)[j] = tc;
        c_new[j] = c;
        h_new[j] = z[3 * H + k] * tc;
      } else {
        c_new[j] = cv[j];
        h_new[j] = hv[j];
      }
    }
  }

  const bool needs = tape.requires_grad(x) || tape.requires_grad(state.h) || tape.requires_grad(state.c) ||
                     tape.requires_grad(wx) || tape.requires_grad(wh) || tape.requires_grad(b);
  // The h node carries no closure; the c node, pushed right after it,
  // back-propagates both outputs at once (every consumer of h comes later).
  const Var h_out = tape.push({n, H}, std::move(h_new), needs, {}, "lstm_step");
  const Var c_out{tape.size()};
  const Var x_in = x, h_in = state.h, c_in = state.c;
  tape.push({n, H}, std::move(c_new), needs,
            [&tape, gates, tanh_c, active, h_out, c_out, x_in, h_in, c_in, wx, wh, b, n, H, in] {
    const auto& dh_out = tape.grad(h_out);
    const auto& dc_out = tape.grad(c_out);
    const auto& cv = tape.value(c_in);
    Buffer<T> dz(n * 4 * H, T(0));
    Buffer<T> dh_prev(n * H, T(0)), dc_prev(n * H, T(0));
    for (std::size_t r = 0; r < n; ++r) {
      const T* z = gates->data() + r * 4 * H;
      for (std::size_t k = 0; k < H; ++k) {
        const std::size_t j = r * H + k;
        if (!active[r]) {
          dh_prev[j] = dh_out[j];
          dc_prev[j] = dc_out[j];
          continue;
        }
        const T i = z[k], f = z[H + k], g = z[2 * H + k], o = z[3 * H + k];
        const T tc = (*tanh_c)[j];
        const T dc = dc_out[j] + dh_out[j] * o * (T(1) - tc * tc);
        T* d = dz.data() + r * 4 * H;
        d[k] = dc * g * i * (T(1) - i);
        d[H + k] = dc * cv[j] * f * (T(1) - f);
        d[2 * H + k] = dc * i * (T(1) - g * g);
        d[3 * H + k] = dh_out[j] * tc * o * (T(1) - o);
        dc_prev[j] = dc * f;
      }
    }
    ConstMatrixMap<T> dZ(dz.data(), n, 4 * H);
    // Masked rows have dz == 0, so the matrix products only add their
    // pass-through terms below.
    if (tape.requires_grad(x_in)) {
      MatrixMap<T>(tape.grad(x_in).data(), n, in).noalias() +=
          dZ * ConstMatrixMap<T>(tape.value(wx).data(), 4 * H, in);
    }
    if (tape.requires_grad(h_in)) {
      MatrixMap<T> dH(tape.grad(h_in).data(), n, H);
      dH.noalias() += dZ * ConstMatrixMap<T>(tape.value(wh).data(), 4 * H, H);
      dH += ConstMatrixMap<T>(dh_prev.data(), n, H);
    }
    if (tape.requires_grad(c_in)) {
      MatrixMap<T>(tape.grad(c_in).data(), n, H) += ConstMatrixMap<T>(dc_prev.data(), n, H);
    }
    if (tape.requires_grad(wx)) {
      MatrixMap<T>(tape.grad(wx).data(), 4 * H, in).noalias() +=
          dZ.transpose() * ConstMatrixMap<T>(tape.value(x_in).data(), n, in);
    }
    if (tape.requires_grad(wh)) {
      MatrixMap<T>(tape.grad(wh).data(), 4 * H, H).noalias() +=
          dZ.transpose() * ConstMatrixMap<T>(tape.value(h_in).data(), n, H);
    }
    if (tape.requires_grad(b)) RowVectorMap<T>(tape.grad(b).data(), 4 * H) += dZ.colwise().sum();
  }, "lstm_step");
  return {h_out, c_out};
}

template <typename T>
LstmState zero_state(Tape<T>& tape, std::size_t batch, std::size_t hidden) {
  return {tape.constant(Tensor<T>({batch, hidden})), tape.constant(Tensor<T>({batch, hidden}))};
}

template <typename T>
struct BiLstm {
  LstmCell<T> forward;
  LstmCell<T> backward;

  std::size_t output_dim() const { return forward.hidden_dim + backward.hidden_dim; }
};

template <typename T>
BiLstm<T> make_bilstm(ParamStore<T>& store, const std::string& name, std::size_t input_dim, std::size_t hidden_dim,
                      SplitMix64& rng) {
  return {make_lstm_cell(store, name + ".fwd", input_dim, hidden_dim, rng),
          make_lstm_cell(store, name + ".bwd", input_dim, hidden_dim, rng)};
}

struct BiLstmOutput {
  std::vector<Var> outputs;  // per position [batch, 2H]; zero at padded positions
  Var final_forward;         // hidden state after the last valid position
  Var final_backward;        // hidden state after the first position
};

// Runs both directions over a right-padded sequence. masks[t][r] marks
// whether position t of row r is a real symbol.
template <typename T>
BiLstmOutput run_bilstm(Tape<T>& tape, const BiLstm<T>& layer, std::span<const Var> inputs,
                        const std::vector<std::vector<std::uint8_t>>& masks) {
  detail::expect(!inputs.empty() && masks.size() == inputs.size(), "bilstm", "need one mask per position");
  const std::size_t len = inputs.size();
  const std::size_t n = tape.shape(inputs[0]).at(0);
  std::vector<Var> fwd(len), bwd(len);
  LstmState s = zero_state(tape, n, layer.forward.hidden_dim);
  for (std::size_t t = 0; t < len; ++t) {
    s = lstm_step(tape, layer.forward, inputs[t], s, masks[t]);
    fwd[t] = s.h;
  }
  const Var final_fwd = s.h;
  s = zero_state(tape, n, layer.backward.hidden_dim);
  for (std::size_t t = len; t-- > 0;) {
    s = lstm_step(tape, layer.backward, inputs[t], s, masks[t]);
    bwd[t] = s.h;
  }
  BiLstmOutput out;
  out.final_forward = final_fwd;
  out.final_backward = s.h;
  out.outputs.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    out.outputs.push_back(mask_rows(tape, concat(tape, {fwd[t], bwd[t]}), masks[t]));
  }
  return out;
}

}  // namespace lemmatag::nn
