#pragma once

// Gradient-check scenarios shared by the unit suite and the acceptance run.
// Each case draws random shapes and values from its seed, reduces the op's
// output to a scalar with fixed random weights and compares backprop with
// central differences.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "lemmatag/decoder.hpp"
#include "lemmatag/encoder.hpp"
#include "lemmatag/nn/attention.hpp"
#include "lemmatag/nn/lstm.hpp"
#include "lemmatag/nn/ops.hpp"

namespace lemmatag::testing {

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

namespace grad_detail {

using nn::Parameter;
using nn::ParamStore;
using nn::Shape;
using nn::SplitMix64;
using nn::Tape;
using nn::Var;

inline Parameter<double>& random_param(ParamStore<double>& store, const std::string& name, Shape shape,
                                       SplitMix64& rng, double bound = 1.0) {
  auto& p = store.add(name, std::move(shape));
  nn::init_uniform(p, bound, rng);
  return p;
}

inline std::size_t dim(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Projects any tensor to a scalar with weights fixed by the seed.
struct Reducer {
  std::vector<double> weights;
  Reducer(std::size_t n, SplitMix64& rng) : weights(n) {
    for (auto& w : weights) w = rng.uniform(-1, 1);
  }
  Var operator()(Tape<double>& tape, Var x) const {
    return nn::weighted_sum(tape, x, std::span<const double>(weights));
  }
};

inline std::vector<std::uint8_t> random_mask(SplitMix64& rng, std::size_t n, bool keep_first) {
  std::vector<std::uint8_t> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = (keep_first && i == 0) || rng.below(3) != 0;
  return m;
}

inline GradCheckResult dense_case(std::uint64_t seed, bool with_bias) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 4), in = dim(rng, 1, 6), out = dim(rng, 1, 5);
  ParamStore<double> store;
  auto& x = random_param(store, "x", {n, in}, rng);
  auto& w = random_param(store, "w", {out, in}, rng);
  auto& b = random_param(store, "b", {out}, rng);
  Reducer red(n * out, rng);
  return grad_check(store, [&](Tape<double>& t) {
    Var bias = t.param(b);
    return red(t, nn::dense(t, t.param(x), t.param(w), with_bias ? &bias : nullptr));
  });
}

template <typename F>
GradCheckResult unary_case(std::uint64_t seed, F op) {
  SplitMix64 rng(seed);
  const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
  ParamStore<double> store;
  auto& x = random_param(store, "x", s, rng, 2.0);
  Reducer red(nn::num_elements(s), rng);
  return grad_check(store, [&](Tape<double>& t) { return red(t, op(t, t.param(x))); });
}

template <typename F>
GradCheckResult binary_case(std::uint64_t seed, F op) {
  SplitMix64 rng(seed);
  const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
  ParamStore<double> store;
  auto& a = random_param(store, "a", s, rng);
  auto& b = random_param(store, "b", s, rng);
  Reducer red(nn::num_elements(s), rng);
  return grad_check(store, [&](Tape<double>& t) { return red(t, op(t, t.param(a), t.param(b))); });
}

// Same operand on both sides exercises gradient accumulation.
inline GradCheckResult shared_operand_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const Shape s{dim(rng, 1, 3), dim(rng, 1, 5)};
  ParamStore<double> store;
  auto& a = random_param(store, "a", s, rng);
  Reducer red(nn::num_elements(s), rng);
  return grad_check(store, [&](Tape<double>& t) {
    const Var v = t.param(a);
    return red(t, nn::mul(t, nn::add(t, v, v), nn::tanh(t, v)));
  });
}

inline GradCheckResult concat_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 4), parts = dim(rng, 1, 3);
  ParamStore<double> store;
  std::vector<Parameter<double>*> ps;
  std::size_t total = 0;
  for (std::size_t k = 0; k < parts; ++k) {
    const std::size_t d = dim(rng, 1, 4);
    total += d;
    ps.push_back(&random_param(store, "p" + std::to_string(k), {n, d}, rng));
  }
  Reducer red(n * total, rng);
  return grad_check(store, [&](Tape<double>& t) {
    std::vector<Var> vs;
    for (auto* p : ps) vs.push_back(t.param(*p));
    return red(t, nn::concat(t, std::span<const Var>(vs)));
  });
}

inline GradCheckResult embedding_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t vocab = dim(rng, 2, 6), d = dim(rng, 1, 5), n = dim(rng, 1, 7);
  ParamStore<double> store;
  auto& table = random_param(store, "table", {vocab, d}, rng);
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(rng.below(vocab));  // repeats exercise scatter-add
  Reducer red(n * d, rng);
  return grad_check(store, [&](Tape<double>& t) {
    return red(t, nn::embedding(t, t.param(table), std::span<const int>(ids)));
  });
}

inline GradCheckResult mask_reshape_stack_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 4), d = dim(rng, 1, 4), steps = dim(rng, 1, 4);
  ParamStore<double> store;
  std::vector<Parameter<double>*> ps;
  for (std::size_t k = 0; k < steps; ++k) ps.push_back(&random_param(store, "s" + std::to_string(k), {n, d}, rng));
  const auto mask = random_mask(rng, n, false);
  Reducer red(n * steps * d, rng);
  return grad_check(store, [&](Tape<double>& t) {
    std::vector<Var> vs;
    for (auto* p : ps) vs.push_back(nn::mask_rows(t, t.param(*p), std::span<const std::uint8_t>(mask)));
    const Var stacked = nn::stack_steps(t, std::span<const Var>(vs));
    return red(t, nn::reshape(t, stacked, {n * steps, d}));
  });
}

inline GradCheckResult layer_norm_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t rows = dim(rng, 1, 4), d = dim(rng, 2, 7);
  ParamStore<double> store;
  auto& x = random_param(store, "x", {rows, d}, rng, 2.0);
  auto& g = random_param(store, "gain", {d}, rng);
  auto& b = random_param(store, "bias", {d}, rng);
  Reducer red(rows * d, rng);
  return grad_check(store, [&](Tape<double>& t) {
    return red(t, nn::layer_norm(t, t.param(x), t.param(g), t.param(b)));
  });
}

inline GradCheckResult cross_entropy_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 3), steps = dim(rng, 1, 4), classes = dim(rng, 2, 6);
  ParamStore<double> store;
  auto& z = random_param(store, "logits", {n, steps, classes}, rng, 3.0);
  std::vector<int> targets(n * steps);
  for (auto& c : targets) c = static_cast<int>(rng.below(classes));
  const auto mask = random_mask(rng, n * steps, true);
  return grad_check(store, [&](Tape<double>& t) {
    return nn::softmax_cross_entropy(t, t.param(z), std::span<const int>(targets), std::span<const std::uint8_t>(mask));
  });
}

inline GradCheckResult lstm_step_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 3), in = dim(rng, 1, 4), H = dim(rng, 1, 4);
  ParamStore<double> store;
  auto cell = nn::make_lstm_cell(store, "cell", in, H, rng);
  for (auto& v : cell.biases->value.values) v += rng.uniform(-0.5, 0.5);
  auto& x = random_param(store, "x", {n, in}, rng);
  auto& h = random_param(store, "h", {n, H}, rng);
  auto& c = random_param(store, "c", {n, H}, rng);
  const auto mask = random_mask(rng, n, true);
  Reducer rh(n * H, rng), rc(n * H, rng);
  return grad_check(store, [&](Tape<double>& t) {
    const auto s = nn::lstm_step(t, cell, t.param(x), {t.param(h), t.param(c)}, std::span<const std::uint8_t>(mask));
    return nn::add(t, rh(t, s.h), rc(t, s.c));
  });
}

inline GradCheckResult bilstm_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 3), in = dim(rng, 1, 3), H = dim(rng, 1, 3), len = dim(rng, 1, 4);
  ParamStore<double> store;
  auto layer = nn::make_bilstm(store, "bi", in, H, rng);
  std::vector<Parameter<double>*> xs;
  for (std::size_t k = 0; k < len; ++k) xs.push_back(&random_param(store, "x" + std::to_string(k), {n, in}, rng));
  // Right-padded rows of random lengths >= 1.
  std::vector<std::vector<std::uint8_t>> masks(len, std::vector<std::uint8_t>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t l = dim(rng, 1, len);
    for (std::size_t t = 0; t < len; ++t) masks[t][r] = t < l;
  }
  Reducer rf(n * H, rng), rb(n * H, rng);
  std::vector<Reducer> ro;
  for (std::size_t t = 0; t < len; ++t) ro.emplace_back(n * 2 * H, rng);
  return grad_check(store, [&](Tape<double>& t) {
    std::vector<Var> in_vars;
    for (auto* p : xs) in_vars.push_back(t.param(*p));
    const auto out = nn::run_bilstm(t, layer, std::span<const Var>(in_vars), masks);
    Var acc = nn::add(t, rf(t, out.final_forward), rb(t, out.final_backward));
    for (std::size_t k = 0; k < len; ++k) acc = nn::add(t, acc, ro[k](t, out.outputs[k]));
    return acc;
  });
}

inline GradCheckResult attention_case(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = dim(rng, 1, 3), steps = dim(rng, 1, 5), dq = dim(rng, 1, 4), dm = dim(rng, 1, 4),
                    A = dim(rng, 1, 4);
  ParamStore<double> store;
  auto params = nn::make_attention(store, "att", dq, dm, A, rng);
  auto& q = random_param(store, "query", {n, dq}, rng);
  auto& m = random_param(store, "memory", {n, steps, dm}, rng);
  std::vector<std::uint8_t> mask(n * steps);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t l = dim(rng, 1, steps);
    for (std::size_t t = 0; t < steps; ++t) mask[r * steps + t] = t < l;
  }
  Reducer red(n * dm, rng);
  return grad_check(store, [&](Tape<double>& t) {
    const auto res = nn::bahdanau_attention(t, params, t.param(q), t.param(m), std::span<const std::uint8_t>(mask));
    return red(t, res.context);
  });
}

inline ModelSpec tiny_spec(Task task, StateHandoff handoff = StateHandoff::b_to_a) {
  ModelSpec spec;
  spec.task = task;
  spec.dims.char_embedding = 3;
  spec.dims.hidden = 2;
  spec.dims.tag_embedding = 2;
  spec.dims.tag_hidden = 2;
  spec.dims.state_handoff = handoff;
  spec.meaning_dim = 3;
  spec.char_vocab = 8;
  spec.tag_vocab = 7;
  spec.max_tag_length = 3;
  return spec;
}

inline std::vector<std::vector<int>> random_rows(SplitMix64& rng, std::size_t n, std::size_t max_len,
                                                 std::size_t vocab) {
  std::vector<std::vector<int>> rows(n);
  for (auto& r : rows) {
    r.resize(dim(rng, 1, max_len));
    for (auto& id : r) id = 4 + static_cast<int>(rng.below(vocab - 4));
  }
  return rows;
}

inline GradCheckResult encoder_case(std::uint64_t seed, bool sequenced) {
  SplitMix64 rng(seed);
  const auto spec = tiny_spec(sequenced ? Task::lemmatizer_sequenced : Task::lemmatizer_separate);
  ParamStore<double> store;
  const auto enc = make_encoder(store, spec, rng);
  const std::size_t n = dim(rng, 1, 3);
  auto& meaning = random_param(store, "meaning", {n, spec.meaning_dim}, rng);
  const auto chars = SymbolBatch::from_rows(random_rows(rng, n, 4, spec.char_vocab));
  const auto tags = SymbolBatch::from_rows(random_rows(rng, n, 3, spec.tag_vocab));
  Reducer rm(n * chars.length * 2 * spec.dims.hidden, rng), rf(n * spec.dims.decoder_dim(), rng);
  return grad_check(store, [&](Tape<double>& t) {
    const auto out = encode_word(t, enc, chars, t.param(meaning), sequenced ? &tags : nullptr);
    return nn::add(t, rm(t, out.char_memory), rf(t, out.fused_init));
  });
}

// Encoder plus three teacher-forced decoder steps into the training loss.
inline GradCheckResult decoder_case(std::uint64_t seed, StateHandoff handoff) {
  SplitMix64 rng(seed);
  const auto spec = tiny_spec(Task::lemmatizer_separate, handoff);
  ParamStore<double> store;
  const auto enc = make_encoder(store, spec, rng);
  const auto dec = make_decoder(store, spec, rng);
  const std::size_t n = dim(rng, 1, 3);
  auto& meaning = random_param(store, "meaning", {n, spec.meaning_dim}, rng);
  const auto chars = SymbolBatch::from_rows(random_rows(rng, n, 4, spec.char_vocab));
  auto gold_rows = random_rows(rng, n, 2, spec.char_vocab);
  for (auto& r : gold_rows) r.push_back(Vocabulary::kEnd);
  gold_rows[0] = {4, 5, Vocabulary::kEnd};  // at least one row spans all three steps
  const auto gold = SymbolBatch::from_rows(gold_rows);
  return grad_check(store, [&](Tape<double>& t) {
    const auto out = encode_word(t, enc, chars, t.param(meaning));
    const Var logits = decode_teacher_forced(t, dec, out, gold);
    return nn::softmax_cross_entropy(t, logits, std::span<const int>(gold.ids), std::span<const std::uint8_t>(gold.mask));
  });
}

}  // namespace grad_detail

inline std::vector<GradCase> gradient_cases() {
  using namespace grad_detail;
  return {
      {"dense", [](std::uint64_t s) { return dense_case(s, true); }},
      {"matmul", [](std::uint64_t s) { return dense_case(s, false); }},
      {"add", [](std::uint64_t s) { return binary_case(s, [](auto& t, Var a, Var b) { return nn::add(t, a, b); }); }},
      {"mul", [](std::uint64_t s) { return binary_case(s, [](auto& t, Var a, Var b) { return nn::mul(t, a, b); }); }},
      {"tanh", [](std::uint64_t s) { return unary_case(s, [](auto& t, Var a) { return nn::tanh(t, a); }); }},
      {"sigmoid", [](std::uint64_t s) { return unary_case(s, [](auto& t, Var a) { return nn::sigmoid(t, a); }); }},
      {"shared_operand", shared_operand_case},
      {"concat", concat_case},
      {"embedding", embedding_case},
      {"mask_reshape_stack", mask_reshape_stack_case},
      {"layer_norm", layer_norm_case},
      {"softmax_cross_entropy", cross_entropy_case},
      {"lstm_step", lstm_step_case},
      {"bilstm", bilstm_case},
      {"bahdanau_attention", attention_case},
      {"encoder", [](std::uint64_t s) { return encoder_case(s, false); }},
      {"encoder_with_tags", [](std::uint64_t s) { return encoder_case(s, true); }},
      {"decoder_3_steps", [](std::uint64_t s) { return decoder_case(s, StateHandoff::b_to_a); }},
      {"decoder_3_steps_independent", [](std::uint64_t s) { return decoder_case(s, StateHandoff::independent); }},
  };
}

}  // namespace lemmatag::testing
