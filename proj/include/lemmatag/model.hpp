#pragma once

// A complete encoder/decoder for one task, plus example construction,
// batching and inference over corpora.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lemmatag/conllu.hpp"
#include "lemmatag/decoder.hpp"
#include "lemmatag/embeddings.hpp"
#include "lemmatag/encoder.hpp"
#include "lemmatag/model_config.hpp"
#include "lemmatag/nn/adam.hpp"
#include "lemmatag/nn/checkpoint.hpp"
#include "lemmatag/tagset.hpp"

namespace lemmatag {

template <typename T>
class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.char_vocab < static_cast<std::size_t>(Vocabulary::kNumSpecials) || spec.meaning_dim == 0) {
      throw ConfigError("model spec needs a character vocabulary and a positive meaning dim");
    }
    if ((spec.task == Task::tagger || spec.uses_tag_input()) && spec.tag_vocab < static_cast<std::size_t>(Vocabulary::kNumSpecials)) {
      throw ConfigError("model spec needs a tag vocabulary for task " + std::string(to_string(spec.task)));
    }
    nn::SplitMix64 rng(seed);
    encoder = make_encoder(store_, spec, rng);
    decoder = make_decoder(store_, spec, rng);
  }
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  const ModelSpec& spec() const { return spec_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

  EncoderParams<T> encoder;
  DecoderParams<T> decoder;

 private:
  ModelSpec spec_;
  nn::ParamStore<T> store_;
};

// One token prepared for the network.
struct Example {
  std::vector<int> chars;      // surface form, no framing
  std::vector<float> meaning;  // meaning_dim floats
  std::vector<int> target;     // lemma chars or tag ids, no END
  std::vector<int> tags;       // tag input (sequenced lemmatizer)
  std::size_t sentence = 0;
  std::size_t token = 0;
};

struct Batch {
  std::vector<std::size_t> rows;  // indices into the example list
  SymbolBatch chars;
  std::vector<float> meaning;  // [batch, meaning_dim]
  SymbolBatch target;          // content + END, padded
  SymbolBatch tags;
  bool has_tags = false;
};

inline Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> rows, bool with_tags) {
  Batch b;
  b.rows.assign(rows.begin(), rows.end());
  std::vector<std::vector<int>> chars, target, tags;
  for (auto r : rows) {
    const auto& ex = examples[r];
    chars.push_back(ex.chars);
    auto t = ex.target;
    t.push_back(Vocabulary::kEnd);
    target.push_back(std::move(t));
    if (with_tags) tags.push_back(ex.tags);
    b.meaning.insert(b.meaning.end(), ex.meaning.begin(), ex.meaning.end());
  }
  b.chars = SymbolBatch::from_rows(chars);
  b.target = SymbolBatch::from_rows(target);
  if (with_tags) {
    b.tags = SymbolBatch::from_rows(tags);
    b.has_tags = true;
  }
  return b;
}

// Splits examples into consecutive batches of `batch_size` following `order`.
inline std::vector<Batch> make_batches(std::span<const Example> examples, std::span<const std::size_t> order,
                                       std::size_t batch_size, bool with_tags) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(examples, order.subspan(start, end - start), with_tags));
  }
  return out;
}

template <typename T>
nn::Var meaning_input(nn::Tape<T>& tape, const Batch& batch, std::size_t dim) {
  nn::Buffer<T> v(batch.meaning.begin(), batch.meaning.end());
  return tape.constant(nn::Tensor<T>({batch.chars.batch, dim}, std::move(v)));
}

template <typename T>
EncoderOutput encode_batch(nn::Tape<T>& tape, const Seq2SeqModel<T>& model, const Batch& batch) {
  const nn::Var meaning = meaning_input(tape, batch, model.spec().meaning_dim);
  return encode_word(tape, model.encoder, batch.chars, meaning, batch.has_tags ? &batch.tags : nullptr);
}

// Teacher-forced cross-entropy over content + END positions.
template <typename T>
nn::Var batch_loss(nn::Tape<T>& tape, const Seq2SeqModel<T>& model, const Batch& batch) {
  const auto enc = encode_batch(tape, model, batch);
  const nn::Var logits = decode_teacher_forced(tape, model.decoder, enc, batch.target);
  return nn::softmax_cross_entropy(tape, logits, std::span<const int>(batch.target.ids),
                                   std::span<const std::uint8_t>(batch.target.mask));
}

// Output step limits: lemmas 2 * |form| + 5, tag sequences longest training
// sequence + 2.
inline std::size_t max_output_steps(const ModelSpec& spec, std::size_t form_length) {
  return spec.task == Task::tagger ? spec.max_tag_length + 2 : 2 * form_length + 5;
}

template <typename T>
std::vector<GreedyResult> predict_batch(const Seq2SeqModel<T>& model, const Batch& batch) {
  nn::Tape<T> tape(false);
  const auto enc = encode_batch(tape, model, batch);
  std::vector<std::size_t> limits(batch.chars.batch);
  for (std::size_t r = 0; r < limits.size(); ++r) limits[r] = max_output_steps(model.spec(), batch.chars.row_length(r));
  return decode_greedy(tape, model.decoder, enc, std::span<const std::size_t>(limits));
}

// Per-corpus vocabularies a model was trained with.
struct Vocabularies {
  CharVocabulary chars;
  TagVocabulary tags;
};

// Builds one example per syntactic word. tag_inputs (sequenced lemmatizer)
// gives the canonical tag sequence fed to the tag branch for every token.
inline std::vector<Example> build_examples(const Corpus& corpus, const ModelSpec& spec, const Vocabularies& vocab,
                                           const MeaningSource& meaning,
                                           const std::vector<std::vector<TagSequence>>* tag_inputs = nullptr) {
  if (meaning.dim() != spec.meaning_dim) {
    throw ConfigError("meaning vectors have dim " + std::to_string(meaning.dim()) + ", model expects " +
                      std::to_string(spec.meaning_dim));
  }
  if (spec.uses_tag_input()) {
    if (!tag_inputs) throw ConfigError("sequenced lemmatizer needs tag inputs for '" + corpus.source_path + "'");
    if (tag_inputs->size() != corpus.sentences.size()) {
      throw AlignmentError("tag inputs cover " + std::to_string(tag_inputs->size()) + " sentences, '" +
                           corpus.source_path + "' has " + std::to_string(corpus.sentences.size()));
    }
  }
  meaning.validate(corpus);
  std::vector<Example> out;
  out.reserve(corpus.token_count());
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    const auto& sent = corpus.sentences[s];
    if (spec.uses_tag_input() && (*tag_inputs)[s].size() != sent.tokens.size()) {
      throw AlignmentError("sentence '" + sent.sent_id + "': tag inputs for " + std::to_string((*tag_inputs)[s].size()) +
                           " of " + std::to_string(sent.tokens.size()) + " tokens");
    }
    for (std::size_t t = 0; t < sent.tokens.size(); ++t) {
      const auto& tok = sent.tokens[t];
      Example ex;
      ex.sentence = s;
      ex.token = t;
      ex.chars = encode_chars(vocab.chars, tok.form);
      ex.meaning = meaning.vector(sent.sent_id, t);
      if (spec.task == Task::tagger) {
        ex.target = vocab.tags.encode(canonical_tags(tok));
      } else {
        ex.target = encode_chars(vocab.chars, tok.lemma);
      }
      if (spec.uses_tag_input()) {
        ex.tags = vocab.tags.encode((*tag_inputs)[s][t]);
        if (ex.tags.empty()) ex.tags.push_back(Vocabulary::kUnk);
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// Canonical gold tag sequences of every token (input for the tag branch when
// gold tags are requested).
inline std::vector<std::vector<TagSequence>> gold_tag_sequences(const Corpus& corpus) {
  std::vector<std::vector<TagSequence>> out;
  for (const auto& sent : corpus.sentences) {
    auto& row = out.emplace_back();
    for (const auto& tok : sent.tokens) row.push_back(canonical_tags(tok));
  }
  return out;
}

// Greedy predictions for every example, in example order.
template <typename T>
std::vector<GreedyResult> predict_examples(const Seq2SeqModel<T>& model, std::span<const Example> examples,
                                           std::size_t batch_size) {
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<GreedyResult> out(examples.size());
  for (const auto& batch : make_batches(examples, order, batch_size, model.spec().uses_tag_input())) {
    auto res = predict_batch(model, batch);
    for (std::size_t k = 0; k < batch.rows.size(); ++k) out[batch.rows[k]] = std::move(res[k]);
  }
  return out;
}

// Mean teacher-forced loss over examples (no gradients), weighted by batch.
template <typename T>
double mean_loss(const Seq2SeqModel<T>& model, std::span<const Example> examples, std::size_t batch_size) {
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double total = 0;
  std::size_t n = 0;
  for (const auto& batch : make_batches(examples, order, batch_size, model.spec().uses_tag_input())) {
    nn::Tape<T> tape(false);
    total += static_cast<double>(tape.value(batch_loss(tape, model, batch))[0]) * static_cast<double>(batch.rows.size());
    n += batch.rows.size();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// Decodes greedy output symbols into a lemma string or a canonical tag
// sequence.
inline std::string decode_lemma(const Vocabularies& vocab, const GreedyResult& r) {
  return decode_chars(vocab.chars, r.symbols);
}

inline TagSequence decode_tags(const Vocabularies& vocab, const GreedyResult& r) {
  return canonicalize_items(vocab.tags.decode(r.symbols));
}

// Turns per-example predictions into per-sentence CoNLL-U overrides.
inline Predictions to_predictions(const Corpus& corpus, const ModelSpec& spec, const Vocabularies& vocab,
                                  std::span<const Example> examples, std::span<const GreedyResult> results) {
  Predictions preds(corpus.sentences.size());
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) preds[s].resize(corpus.sentences[s].tokens.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto& p = preds[examples[i].sentence][examples[i].token];
    if (spec.task == Task::tagger) {
      auto cols = to_columns(decode_tags(vocab, results[i]));
      p.upos = std::move(cols.upos);
      p.feats = std::move(cols.feats);
    } else {
      p.lemma = decode_lemma(vocab, results[i]);
    }
  }
  return preds;
}

// Checkpoint directory layout:
//   model.json    model spec (task, dims, vocabulary sizes)
//   params.mlxp   parameters
//   chars.vocab   character vocabulary
//   tags.vocab    tag vocabulary (tagger and sequenced lemmatizer)
struct ModelFiles {
  static constexpr const char* spec = "model.json";
  static constexpr const char* params = "params.mlxp";
  static constexpr const char* chars = "chars.vocab";
  static constexpr const char* tags = "tags.vocab";
};

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

// Writes to a temporary sibling and renames, so readers never see a partial
// file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, content);
  std::filesystem::rename(tmp, path);
}

inline void save_model_description(const std::filesystem::path& dir, const ModelSpec& spec, const Vocabularies& vocab) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / ModelFiles::spec, spec_to_json(spec).dump(2) + "\n");
  write_file_atomic(dir / ModelFiles::chars, vocab.chars.serialize());
  if (spec.task == Task::tagger || spec.uses_tag_input()) write_file_atomic(dir / ModelFiles::tags, vocab.tags.serialize());
}

inline void save_params(const std::filesystem::path& dir, const nn::ParamStore<float>& params) {
  write_file_atomic(dir / ModelFiles::params, nn::serialize_checkpoint(params));
}

struct LoadedModel {
  std::unique_ptr<Seq2SeqModel<float>> model;
  Vocabularies vocab;
  const ModelSpec& spec() const { return model->spec(); }
};

inline LoadedModel load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("checkpoint directory '" + dir.string() + "' not found");
  ModelSpec spec;
  try {
    spec = spec_from_json(nlohmann::ordered_json::parse(read_text_file((dir / ModelFiles::spec).string())));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed '" + (dir / ModelFiles::spec).string() + "': " + e.what());
  }
  LoadedModel m;
  m.vocab.chars = load_vocabulary((dir / ModelFiles::chars).string());
  if (static_cast<std::size_t>(m.vocab.chars.size()) != spec.char_vocab) {
    throw DataError("character vocabulary in '" + dir.string() + "' does not match the model description");
  }
  if (spec.task == Task::tagger || spec.uses_tag_input()) {
    m.vocab.tags = load_vocabulary((dir / ModelFiles::tags).string());
    if (static_cast<std::size_t>(m.vocab.tags.size()) != spec.tag_vocab) {
      throw DataError("tag vocabulary in '" + dir.string() + "' does not match the model description");
    }
  }
  m.model = std::make_unique<Seq2SeqModel<float>>(spec, 0);
  nn::load_checkpoint((dir / ModelFiles::params).string(), m.model->params());
  return m;
}

// Predicts every token of a corpus. tag_inputs is required for a sequenced
// lemmatizer.
inline Predictions predict_corpus(const LoadedModel& m, const Corpus& corpus, const MeaningSource& meaning,
                                  const std::vector<std::vector<TagSequence>>* tag_inputs = nullptr,
                                  std::size_t batch_size = 128) {
  const auto examples = build_examples(corpus, m.spec(), m.vocab, meaning, tag_inputs);
  const auto results = predict_examples(*m.model, std::span<const Example>(examples), batch_size);
  return to_predictions(corpus, m.spec(), m.vocab, examples, results);
}

// Canonical tag sequences read from a CoNLL-U file (e.g. tagger output),
// checked against the corpus they will be fed with.
inline std::vector<std::vector<TagSequence>> tag_inputs_from(const Corpus& tags, const Corpus& corpus) {
  if (tags.sentences.size() != corpus.sentences.size()) {
    throw AlignmentError("tag file '" + tags.source_path + "' has " + std::to_string(tags.sentences.size()) +
                         " sentences, '" + corpus.source_path + "' has " + std::to_string(corpus.sentences.size()));
  }
  std::vector<std::vector<TagSequence>> out;
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    const auto& a = tags.sentences[s];
    const auto& b = corpus.sentences[s];
    if (a.sent_id != b.sent_id || a.tokens.size() != b.tokens.size()) {
      throw AlignmentError("tag file '" + tags.source_path + "' diverges from '" + corpus.source_path +
                           "' at sentence '" + b.sent_id + "'");
    }
    auto& row = out.emplace_back();
    for (std::size_t t = 0; t < b.tokens.size(); ++t) {
      if (a.tokens[t].form != b.tokens[t].form) {
        throw AlignmentError("tag file '" + tags.source_path + "' sentence '" + b.sent_id + "' token " +
                             std::to_string(t + 1) + ": form '" + a.tokens[t].form + "' differs");
      }
      row.push_back(canonical_tags(a.tokens[t]));
    }
  }
  return out;
}

}  // namespace lemmatag
