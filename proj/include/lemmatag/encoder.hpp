#pragma once

// Word encoder: character BiLSTM stack with residual connections, optional
// tag BiLSTM, and a dense fusion with the meaning vector that initializes the
// decoder.
//
//   E    = char_embedding(chars)
//   out1 = BiLSTM1(E)
//   r    = out1 + BiLSTM2(out1)
//   mem  = r + BiLSTM3(r)                     per-character memory
//   s    = [fwd final ; bwd final] of BiLSTM3  spelling vector
//   init = tanh(Dense(meaning ; s [; tags]))

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lemmatag/model_config.hpp"
#include "lemmatag/nn/lstm.hpp"

namespace lemmatag {

// Right-padded integer ids, row-major [batch, length], with validity mask.
struct SymbolBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;

  static SymbolBatch from_rows(const std::vector<std::vector<int>>& rows, int pad_id = 0) {
    SymbolBatch b;
    b.batch = rows.size();
    for (const auto& r : rows) b.length = std::max(b.length, r.size());
    b.ids.assign(b.batch * b.length, pad_id);
    b.mask.assign(b.batch * b.length, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t t = 0; t < rows[i].size(); ++t) {
        b.ids[i * b.length + t] = rows[i][t];
        b.mask[i * b.length + t] = 1;
      }
    }
    return b;
  }

  std::vector<int> column(std::size_t t) const {
    std::vector<int> c(batch);
    for (std::size_t r = 0; r < batch; ++r) c[r] = ids[r * length + t];
    return c;
  }
  std::vector<std::uint8_t> mask_column(std::size_t t) const {
    std::vector<std::uint8_t> c(batch);
    for (std::size_t r = 0; r < batch; ++r) c[r] = mask[r * length + t];
    return c;
  }
  std::size_t row_length(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < length; ++t) n += mask[r * length + t];
    return n;
  }
};

template <typename T>
struct DenseLayer {
  nn::Parameter<T>* weights = nullptr;  // [out, in]
  nn::Parameter<T>* bias = nullptr;     // [out]
};

template <typename T>
DenseLayer<T> make_dense(nn::ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                         nn::SplitMix64& rng) {
  DenseLayer<T> d;
  d.weights = &store.add(name + ".weights", {out, in});
  d.bias = &store.add(name + ".bias", {out});
  nn::init_uniform(*d.weights, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  return d;
}

template <typename T>
nn::Var apply(nn::Tape<T>& tape, const DenseLayer<T>& layer, nn::Var x) {
  return nn::dense(tape, x, tape.param(*layer.weights), tape.param(*layer.bias));
}

template <typename T>
struct EncoderParams {
  nn::Parameter<T>* char_embedding = nullptr;  // [char_vocab, d_c]
  std::array<nn::BiLstm<T>, 3> layers;
  nn::Parameter<T>* tag_embedding = nullptr;  // [tag_vocab, d_t], sequenced only
  std::optional<nn::BiLstm<T>> tag_lstm;
  std::vector<DenseLayer<T>> fusion;
  std::size_t meaning_dim = 0;

  bool sequenced() const { return tag_embedding != nullptr; }
  std::size_t memory_dim() const { return layers[0].output_dim(); }
};

template <typename T>
EncoderParams<T> make_encoder(nn::ParamStore<T>& store, const ModelSpec& spec, nn::SplitMix64& rng) {
  const auto& d = spec.dims;
  EncoderParams<T> p;
  p.meaning_dim = spec.meaning_dim;
  p.char_embedding = &store.add("encoder.char_embedding", {spec.char_vocab, d.char_embedding});
  nn::init_uniform(*p.char_embedding, 1.0 / std::sqrt(static_cast<double>(d.char_embedding)), rng);
  std::size_t in = d.char_embedding;
  for (std::size_t k = 0; k < 3; ++k) {
    p.layers[k] = nn::make_bilstm(store, "encoder.bilstm" + std::to_string(k + 1), in, d.hidden, rng);
    in = 2 * d.hidden;
  }
  std::size_t fused_in = spec.meaning_dim + 2 * d.hidden;
  if (spec.uses_tag_input()) {
    p.tag_embedding = &store.add("encoder.tag_embedding", {spec.tag_vocab, d.tag_embedding});
    nn::init_uniform(*p.tag_embedding, 1.0 / std::sqrt(static_cast<double>(d.tag_embedding)), rng);
    p.tag_lstm = nn::make_bilstm(store, "encoder.tag_bilstm", d.tag_embedding, d.tag_hidden, rng);
    fused_in += 2 * d.tag_hidden;
  }
  for (std::size_t k = 0; k < d.fusion_layers; ++k) {
    p.fusion.push_back(make_dense(store, "encoder.fusion" + std::to_string(k + 1), k == 0 ? fused_in : d.decoder_dim(),
                                  d.decoder_dim(), rng));
  }
  return p;
}

struct EncoderOutput {
  nn::Var char_memory;  // [batch, max_chars, 2H], zero at padded positions
  std::vector<std::uint8_t> char_mask;  // row-major [batch, max_chars]
  nn::Var spelling;     // [batch, 2H]
  nn::Var fused_init;   // [batch, 2H]
  std::size_t batch = 0;
  std::size_t length = 0;
};

namespace encoder_detail {

inline std::vector<std::vector<std::uint8_t>> position_masks(const SymbolBatch& b) {
  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(b.length);
  for (std::size_t t = 0; t < b.length; ++t) masks.push_back(b.mask_column(t));
  return masks;
}

inline void require_nonempty_rows(const SymbolBatch& b, const char* what) {
  if (b.length == 0 && b.batch > 0) throw ShapeError(std::string(what) + ": every row is padding");
  for (std::size_t r = 0; r < b.batch; ++r) {
    if (b.row_length(r) == 0) throw ShapeError(std::string(what) + ": row " + std::to_string(r) + " is all padding");
    for (std::size_t t = 1; t < b.length; ++t) {
      if (b.mask[r * b.length + t] && !b.mask[r * b.length + t - 1]) {
        throw ShapeError(std::string(what) + ": row " + std::to_string(r) + " is not right-padded");
      }
    }
  }
}

}  // namespace encoder_detail

// Tag sequence vector: final forward and backward hidden states of the tag
// BiLSTM, concatenated. Result is [batch, 2H_t].
template <typename T>
nn::Var encode_tags(nn::Tape<T>& tape, const EncoderParams<T>& params, const SymbolBatch& tags) {
  if (!params.sequenced()) throw ConfigError("encode_tags: model has no tag input branch");
  encoder_detail::require_nonempty_rows(tags, "encode_tags");
  const nn::Var table = tape.param(*params.tag_embedding);
  std::vector<nn::Var> inputs;
  for (std::size_t t = 0; t < tags.length; ++t) {
    const auto col = tags.column(t);
    inputs.push_back(nn::embedding(tape, table, std::span<const int>(col)));
  }
  const auto out = nn::run_bilstm(tape, *params.tag_lstm, inputs, encoder_detail::position_masks(tags));
  return nn::concat(tape, {out.final_forward, out.final_backward});
}

// meaning is [batch, meaning_dim]. tags must be given exactly when the model
// was built for sequenced lemmatization.
template <typename T>
EncoderOutput encode_word(nn::Tape<T>& tape, const EncoderParams<T>& params, const SymbolBatch& chars,
                          nn::Var meaning, const SymbolBatch* tags = nullptr) {
  if (params.sequenced() && !tags) throw ConfigError("encode_word: sequenced model needs tag input");
  if (!params.sequenced() && tags) throw ConfigError("encode_word: tags supplied to a model without tag input");
  encoder_detail::require_nonempty_rows(chars, "encode_word");
  const auto& ms = tape.shape(meaning);
  if (ms.size() != 2 || ms[0] != chars.batch || ms[1] != params.meaning_dim) {
    throw ShapeError("encode_word: meaning has shape " + nn::to_string(ms) + ", expected [" +
                     std::to_string(chars.batch) + ", " + std::to_string(params.meaning_dim) + "]");
  }
  if (tags && tags->batch != chars.batch) throw ShapeError("encode_word: tag batch size differs from char batch");

  const auto masks = encoder_detail::position_masks(chars);
  const nn::Var table = tape.param(*params.char_embedding);
  std::vector<nn::Var> emb;
  emb.reserve(chars.length);
  for (std::size_t t = 0; t < chars.length; ++t) {
    const auto col = chars.column(t);
    emb.push_back(nn::embedding(tape, table, std::span<const int>(col)));
  }

  const auto l1 = nn::run_bilstm(tape, params.layers[0], emb, masks);
  const auto l2 = nn::run_bilstm(tape, params.layers[1], l1.outputs, masks);
  std::vector<nn::Var> residual(chars.length);
  for (std::size_t t = 0; t < chars.length; ++t) residual[t] = nn::add(tape, l1.outputs[t], l2.outputs[t]);
  const auto l3 = nn::run_bilstm(tape, params.layers[2], residual, masks);
  std::vector<nn::Var> memory(chars.length);
  for (std::size_t t = 0; t < chars.length; ++t) memory[t] = nn::add(tape, residual[t], l3.outputs[t]);

  EncoderOutput out;
  out.batch = chars.batch;
  out.length = chars.length;
  out.char_mask = chars.mask;
  out.char_memory = nn::stack_steps(tape, std::span<const nn::Var>(memory));
  out.spelling = nn::concat(tape, {l3.final_forward, l3.final_backward});

  std::vector<nn::Var> parts{meaning, out.spelling};
  if (tags) parts.push_back(encode_tags(tape, params, *tags));
  nn::Var h = nn::concat(tape, std::span<const nn::Var>(parts));
  for (const auto& layer : params.fusion) h = nn::tanh(tape, apply(tape, layer, h));
  out.fused_init = h;
  return out;
}

}  // namespace lemmatag
