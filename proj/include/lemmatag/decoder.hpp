#pragma once

// Step-wise decoder. One step:
//
//   x        = output_embedding(previous symbol)
//   a        = LSTM-A(x)
//   b        = LSTM-B(a)
//   u        = LayerNorm(a + b)
//   ctx      = attention(u, char memory)
//   v        = LayerNorm(u + ctx)
//   z        = LayerNorm(v + Dense(v))
//   logits   = Classifier(z)
//
// Step 0 feeds <start>; LSTM-A's initial hidden state is the encoder's fused
// vector, its cell state is zero.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lemmatag/encoder.hpp"
#include "lemmatag/nn/attention.hpp"
#include "lemmatag/tagset.hpp"

namespace lemmatag {

template <typename T>
struct LayerNormParams {
  nn::Parameter<T>* gain = nullptr;
  nn::Parameter<T>* bias = nullptr;
};

template <typename T>
struct DecoderParams {
  nn::Parameter<T>* output_embedding = nullptr;  // [out_vocab, D]
  nn::LstmCell<T> lstm_a;
  nn::LstmCell<T> lstm_b;
  nn::AttentionParams<T> attention;
  DenseLayer<T> post_attention;
  std::array<LayerNormParams<T>, 3> norms;
  DenseLayer<T> classifier;
  StateHandoff handoff = StateHandoff::b_to_a;
  std::size_t dim = 0;
  std::size_t vocab = 0;
};

template <typename T>
DecoderParams<T> make_decoder(nn::ParamStore<T>& store, const ModelSpec& spec, nn::SplitMix64& rng) {
  const std::size_t D = spec.dims.decoder_dim();
  DecoderParams<T> p;
  p.dim = D;
  p.vocab = spec.output_vocab();
  p.handoff = spec.dims.state_handoff;
  p.output_embedding = &store.add("decoder.output_embedding", {p.vocab, D});
  nn::init_uniform(*p.output_embedding, 1.0 / std::sqrt(static_cast<double>(D)), rng);
  p.lstm_a = nn::make_lstm_cell(store, "decoder.lstm_a", D, D, rng);
  p.lstm_b = nn::make_lstm_cell(store, "decoder.lstm_b", D, D, rng);
  p.attention = nn::make_attention(store, "decoder.attention", D, 2 * spec.dims.hidden, D, rng);
  p.post_attention = make_dense(store, "decoder.post_attention", D, D, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    auto& g = store.add("decoder.norm" + std::to_string(k + 1) + ".gain", {D});
    auto& b = store.add("decoder.norm" + std::to_string(k + 1) + ".bias", {D});
    std::fill(g.value.values.begin(), g.value.values.end(), T(1));
    p.norms[k] = {&g, &b};
  }
  p.classifier = make_dense(store, "decoder.classifier", D, p.vocab, rng);
  return p;
}

struct DecodeState {
  nn::LstmState a;
  nn::LstmState b;
  std::vector<int> previous;  // one symbol id per batch row
  std::size_t step = 0;
  std::size_t max_steps = 0;
};

// Encoder memory plus its attention projection, computed once per batch.
struct DecoderMemory {
  nn::Var memory;
  nn::Var projected;
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
};

template <typename T>
DecoderMemory prepare_memory(nn::Tape<T>& tape, const DecoderParams<T>& params, const EncoderOutput& enc) {
  return {enc.char_memory, nn::project_memory(tape, params.attention, enc.char_memory), enc.char_mask, enc.batch};
}

template <typename T>
DecodeState initial_state(nn::Tape<T>& tape, const DecoderParams<T>& params, const EncoderOutput& enc,
                          std::size_t max_steps) {
  const auto& fs = tape.shape(enc.fused_init);
  if (fs != nn::Shape{enc.batch, params.dim}) {
    throw ShapeError("decoder: fused vector has shape " + nn::to_string(fs) + ", expected [" +
                     std::to_string(enc.batch) + ", " + std::to_string(params.dim) + "]");
  }
  DecodeState s;
  const nn::Var zero_c = tape.constant(nn::Tensor<T>({enc.batch, params.dim}));
  s.a = {enc.fused_init, zero_c};
  s.b = {enc.fused_init, zero_c};
  s.previous.assign(enc.batch, Vocabulary::kStart);
  s.max_steps = max_steps;
  return s;
}

struct StepOutput {
  nn::Var logits;             // [batch, out_vocab]
  nn::Var attention_weights;  // [batch, max_chars]
  DecodeState state;
};

template <typename T>
StepOutput decode_step(nn::Tape<T>& tape, const DecoderParams<T>& params, const DecodeState& state,
                       const DecoderMemory& memory) {
  if (state.step >= state.max_steps) {
    throw ConfigError("decode_step: step " + std::to_string(state.step) + " reaches max_steps " +
                      std::to_string(state.max_steps));
  }
  if (state.previous.size() != memory.batch) throw ShapeError("decode_step: previous symbols do not match batch size");
  auto norm = [&](std::size_t k, nn::Var x) {
    return nn::layer_norm(tape, x, tape.param(*params.norms[k].gain), tape.param(*params.norms[k].bias));
  };

  const nn::Var x = nn::embedding(tape, tape.param(*params.output_embedding), std::span<const int>(state.previous));
  const nn::LstmState a = nn::lstm_step(tape, params.lstm_a, x, state.a);
  const nn::LstmState b_in = params.handoff == StateHandoff::b_to_a ? a : state.b;
  const nn::LstmState b = nn::lstm_step(tape, params.lstm_b, a.h, b_in);
  const nn::Var u = norm(0, nn::add(tape, a.h, b.h));
  const auto att = nn::attend(tape, params.attention, u, memory.projected, memory.memory, memory.mask);
  const nn::Var v = norm(1, nn::add(tape, u, att.context));
  const nn::Var z = norm(2, nn::add(tape, v, apply(tape, params.post_attention, v)));

  StepOutput out;
  out.logits = apply(tape, params.classifier, z);
  out.attention_weights = att.weights;
  out.state.a = params.handoff == StateHandoff::b_to_a ? b : a;
  out.state.b = b;
  out.state.step = state.step + 1;
  out.state.max_steps = state.max_steps;
  return out;
}

// Teacher forcing: gold rows are content + END + padding. Step t consumes
// gold symbol t-1 (START at t = 0). Returns logits [batch, steps, out_vocab].
template <typename T>
nn::Var decode_teacher_forced(nn::Tape<T>& tape, const DecoderParams<T>& params, const EncoderOutput& enc,
                              const SymbolBatch& gold) {
  if (gold.batch != enc.batch) throw ShapeError("decode_teacher_forced: gold batch size differs from encoder batch");
  for (std::size_t r = 0; r < gold.batch; ++r) {
    bool has_end = false;
    for (std::size_t t = 0; t < gold.length; ++t) {
      has_end = has_end || (gold.mask[r * gold.length + t] && gold.ids[r * gold.length + t] == Vocabulary::kEnd);
    }
    if (!has_end) throw ShapeError("decode_teacher_forced: gold row " + std::to_string(r) + " lacks an <end> symbol");
  }
  const DecoderMemory memory = prepare_memory(tape, params, enc);
  DecodeState state = initial_state(tape, params, enc, gold.length);
  std::vector<nn::Var> logits;
  logits.reserve(gold.length);
  for (std::size_t t = 0; t < gold.length; ++t) {
    if (t > 0) {
      for (std::size_t r = 0; r < gold.batch; ++r) {
        const int prev = gold.ids[r * gold.length + t - 1];
        state.previous[r] = gold.mask[r * gold.length + t - 1] ? prev : Vocabulary::kPad;
      }
    }
    auto step = decode_step(tape, params, state, memory);
    logits.push_back(step.logits);
    const auto prev = std::move(state.previous);
    state = std::move(step.state);
    state.previous = prev;
  }
  return nn::stack_steps(tape, std::span<const nn::Var>(logits));
}

struct GreedyResult {
  std::vector<int> symbols;  // content symbols, END excluded
  bool truncated = false;    // hit max_steps without emitting END
};

// Argmax feedback decoding. Each row stops at END or at its own step limit;
// PAD and START are never emitted and ties go to the lower id.
template <typename T>
std::vector<GreedyResult> decode_greedy(nn::Tape<T>& tape, const DecoderParams<T>& params, const EncoderOutput& enc,
                                        std::span<const std::size_t> max_steps) {
  if (max_steps.size() != enc.batch) throw ShapeError("decode_greedy: need one step limit per row");
  std::size_t limit = 0;
  for (auto m : max_steps) {
    if (m == 0) throw ConfigError("decode_greedy: max_steps must be at least 1");
    limit = std::max(limit, m);
  }
  std::vector<GreedyResult> results(enc.batch);
  std::vector<std::uint8_t> done(enc.batch, 0);
  const DecoderMemory memory = prepare_memory(tape, params, enc);
  DecodeState state = initial_state(tape, params, enc, limit);
  std::size_t remaining = enc.batch;
  for (std::size_t t = 0; t < limit && remaining > 0; ++t) {
    auto step = decode_step(tape, params, state, memory);
    const auto& z = tape.value(step.logits);
    std::vector<int> next(enc.batch, Vocabulary::kEnd);
    for (std::size_t r = 0; r < enc.batch; ++r) {
      if (done[r]) continue;
      int best = -1;
      for (std::size_t c = 0; c < params.vocab; ++c) {
        const int id = static_cast<int>(c);
        if (id == Vocabulary::kPad || id == Vocabulary::kStart) continue;
        if (best < 0 || z[r * params.vocab + c] > z[r * params.vocab + static_cast<std::size_t>(best)]) best = id;
      }
      next[r] = best;
      if (best == Vocabulary::kEnd) {
        done[r] = 1;
        --remaining;
      } else {
        results[r].symbols.push_back(best);
        if (results[r].symbols.size() >= max_steps[r]) {
          results[r].truncated = true;
          done[r] = 1;
          --remaining;
        }
      }
    }
    state = std::move(step.state);
    state.previous = std::move(next);
  }
  return results;
}

template <typename T>
std::vector<GreedyResult> decode_greedy(nn::Tape<T>& tape, const DecoderParams<T>& params, const EncoderOutput& enc,
                                        std::size_t max_steps) {
  std::vector<std::size_t> limits(enc.batch, max_steps);
  return decode_greedy(tape, params, enc, std::span<const std::size_t>(limits));
}

}  // namespace lemmatag
