#pragma once

// Precomputed per-token meaning vectors.
//
// CTXE file layout (little-endian):
//   magic "CTXE", version u32 = 1, dim u32, sentence_count u64, then per
//   sentence: sent_id length u16, UTF-8 sent_id, token_count u32,
//   token_count * dim float32 values.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lemmatag/conllu.hpp"
#include "lemmatag/errors.hpp"
#include "lemmatag/nn/checkpoint.hpp"
#include "lemmatag/nn/random.hpp"

namespace lemmatag {

inline constexpr std::uint32_t kCtxeVersion = 1;

class EmbeddingFormatError : public DataError {
 public:
  enum class Kind { bad_magic, bad_version, bad_dim, duplicate_sentence, truncated, trailing_data };
  EmbeddingFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class ContextEmbeddingStore {
 public:
  explicit ContextEmbeddingStore(std::uint32_t dim = 1) : dim_(dim) {
    if (dim == 0) throw EmbeddingFormatError(EmbeddingFormatError::Kind::bad_dim, "embedding dim must be positive");
  }

  std::uint32_t dim() const { return dim_; }
  std::size_t sentence_count() const { return ids_.size(); }
  const std::vector<std::string>& sentence_ids() const { return ids_; }

  // values holds token_count * dim floats.
  void add_sentence(const std::string& sent_id, std::vector<float> values) {
    if (values.size() % dim_ != 0) {
      throw EmbeddingFormatError(EmbeddingFormatError::Kind::bad_dim,
                                 "sentence '" + sent_id + "': value count is not a multiple of dim");
    }
    if (!index_.emplace(sent_id, ids_.size()).second) {
      throw EmbeddingFormatError(EmbeddingFormatError::Kind::duplicate_sentence,
                                 "duplicate sent_id '" + sent_id + "' in embedding store");
    }
    ids_.push_back(sent_id);
    data_.push_back(std::move(values));
  }

  bool contains(const std::string& sent_id) const { return index_.contains(sent_id); }

  std::size_t token_count(const std::string& sent_id) const { return sentence(sent_id).size() / dim_; }

  std::span<const float> lookup(const std::string& sent_id, std::size_t token_index) const {
    const auto& v = sentence(sent_id);
    if (token_index >= v.size() / dim_) {
      throw DataError("sentence '" + sent_id + "' has no embedding for token " + std::to_string(token_index));
    }
    return std::span<const float>(v).subspan(token_index * dim_, dim_);
  }

  friend bool operator==(const ContextEmbeddingStore& a, const ContextEmbeddingStore& b) {
    if (a.dim_ != b.dim_ || a.ids_ != b.ids_) return false;
    for (std::size_t i = 0; i < a.data_.size(); ++i) {
      const auto& x = a.data_[i];
      const auto& y = b.data_[i];
      if (x.size() != y.size()) return false;
      for (std::size_t k = 0; k < x.size(); ++k) {
        if (std::bit_cast<std::uint32_t>(x[k]) != std::bit_cast<std::uint32_t>(y[k])) return false;
      }
    }
    return true;
  }

 private:
  const std::vector<float>& sentence(const std::string& sent_id) const {
    auto it = index_.find(sent_id);
    if (it == index_.end()) throw DataError("no embeddings for sentence '" + sent_id + "'");
    return data_[it->second];
  }

  std::uint32_t dim_;
  std::vector<std::string> ids_;
  std::vector<std::vector<float>> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string serialize_store(const ContextEmbeddingStore& store) {
  using namespace nn::le;
  std::string out = "CTXE";
  put_u32(out, kCtxeVersion);
  put_u32(out, store.dim());
  put_u64(out, store.sentence_count());
  for (const auto& id : store.sentence_ids()) {
    put_u16(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    const std::size_t n = store.token_count(id);
    put_u32(out, static_cast<std::uint32_t>(n));
    for (std::size_t t = 0; t < n; ++t) {
      for (float v : store.lookup(id, t)) put_f32(out, v);
    }
  }
  return out;
}

inline ContextEmbeddingStore parse_store(std::string_view bytes) {
  using Kind = EmbeddingFormatError::Kind;
  nn::le::Reader in(bytes);
  std::string current = "header";
  try {
    if (in.remaining() < 4 || in.bytes(4, "magic") != "CTXE") throw EmbeddingFormatError(Kind::bad_magic, "not a CTXE file (bad magic)");
    const auto version = in.uint(4, "header");
    if (version != kCtxeVersion) {
      throw EmbeddingFormatError(Kind::bad_version, "unsupported CTXE version " + std::to_string(version));
    }
    const auto dim = static_cast<std::uint32_t>(in.uint(4, "header"));
    if (dim == 0) throw EmbeddingFormatError(Kind::bad_dim, "CTXE dim must be positive");
    const auto count = in.uint(8, "header");
    ContextEmbeddingStore store(dim);
    for (std::uint64_t s = 0; s < count; ++s) {
      current = "sentence #" + std::to_string(s);
      const auto len = in.uint(2, current);
      const std::string id(in.bytes(len, current));
      current = "sentence '" + id + "'";
      const auto tokens = in.uint(4, current);
      const std::size_t n = static_cast<std::size_t>(tokens) * dim;
      if (in.remaining() / 4 < n) throw nn::le::Reader::Truncated("truncated record: " + current);
      std::vector<float> values(n);
      for (auto& v : values) v = in.f32(current);
      store.add_sentence(id, std::move(values));
    }
    if (!in.at_end()) throw EmbeddingFormatError(Kind::trailing_data, "trailing bytes after last CTXE sentence");
    return store;
  } catch (const nn::le::Reader::Truncated& e) {
    throw EmbeddingFormatError(Kind::truncated, e.what());
  }
}

inline ContextEmbeddingStore load_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file '" + path + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_store(bytes);
}

inline void save_store(const ContextEmbeddingStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  const auto bytes = serialize_store(store);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Union of several stores (e.g. one export per split). Dims must agree and a
// sent_id may appear in only one of them.
inline ContextEmbeddingStore merge_stores(const std::vector<ContextEmbeddingStore>& stores) {
  if (stores.empty()) throw ConfigError("no embedding stores to merge");
  ContextEmbeddingStore out(stores.front().dim());
  for (const auto& s : stores) {
    if (s.dim() != out.dim()) {
      throw EmbeddingFormatError(EmbeddingFormatError::Kind::bad_dim, "embedding stores disagree on dim (" +
                                     std::to_string(out.dim()) + " vs " + std::to_string(s.dim()) + ")");
    }
    for (const auto& id : s.sentence_ids()) {
      std::vector<float> values;
      for (std::size_t t = 0; t < s.token_count(id); ++t) {
        const auto v = s.lookup(id, t);
        values.insert(values.end(), v.begin(), v.end());
      }
      out.add_sentence(id, std::move(values));
    }
  }
  return out;
}

// Checks that every sentence of the corpus has exactly one vector per
// syntactic word. Reports all offending sentence ids at once.
inline void validate_store(const ContextEmbeddingStore& store, const Corpus& corpus) {
  std::string missing, mismatched;
  std::size_t bad = 0;
  for (const auto& sent : corpus.sentences) {
    if (!store.contains(sent.sent_id)) {
      missing += (missing.empty() ? "" : ", ") + sent.sent_id;
      ++bad;
    } else if (store.token_count(sent.sent_id) != sent.tokens.size()) {
      mismatched += (mismatched.empty() ? "" : ", ") + sent.sent_id + " (" +
                    std::to_string(store.token_count(sent.sent_id)) + " vectors for " +
                    std::to_string(sent.tokens.size()) + " tokens)";
      ++bad;
    }
  }
  if (bad == 0) return;
  std::string msg = "embedding store does not match '" + corpus.source_path + "':";
  if (!missing.empty()) msg += " missing sentences: " + missing + ";";
  if (!mismatched.empty()) msg += " token count mismatch: " + mismatched + ";";
  throw AlignmentError(msg);
}

// Deterministic stand-in for a contextual vector: splitmix64 seeded with the
// FNV-1a-64 hash of "<sent_id>\0<token_index>", components in [-1, 1).
inline std::vector<float> pseudo_embedding(std::string_view sent_id, std::size_t token_index, std::size_t dim) {
  std::string key(sent_id);
  key.push_back('\0');
  key += std::to_string(token_index);
  nn::SplitMix64 rng(nn::fnv1a64(key));
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.unit() * 2.0 - 1.0);
  return v;
}

// Meaning vectors either from a CTXE store or from pseudo_embedding.
class MeaningSource {
 public:
  static MeaningSource pseudo(std::size_t dim) {
    if (dim == 0) throw ConfigError("pseudo embedding dim must be positive");
    MeaningSource s;
    s.dim_ = dim;
    return s;
  }
  static MeaningSource from_store(ContextEmbeddingStore store) {
    MeaningSource s;
    s.dim_ = store.dim();
    s.store_ = std::move(store);
    return s;
  }

  // "pseudo:<dim>" or a path to a CTXE file.
  static MeaningSource parse(const std::string& spec) {
    if (spec.starts_with("pseudo:")) {
      std::size_t dim = 0;
      try {
        dim = std::stoul(spec.substr(7));
      } catch (const std::exception&) {
        throw ConfigError("bad pseudo embedding spec '" + spec + "'");
      }
      return pseudo(dim);
    }
    return from_store(load_store(spec));
  }

  // Several CTXE files merged into one source.
  static MeaningSource from_files(const std::vector<std::string>& paths) {
    if (paths.size() == 1) return parse(paths.front());
    std::vector<ContextEmbeddingStore> stores;
    for (const auto& p : paths) stores.push_back(load_store(p));
    return from_store(merge_stores(stores));
  }

  std::size_t dim() const { return dim_; }
  bool is_pseudo() const { return !store_.has_value(); }

  std::vector<float> vector(const std::string& sent_id, std::size_t token_index) const {
    if (!store_) return pseudo_embedding(sent_id, token_index, dim_);
    auto v = store_->lookup(sent_id, token_index);
    return {v.begin(), v.end()};
  }

  void validate(const Corpus& corpus) const {
    if (store_) validate_store(*store_, corpus);
  }

 private:
  std::size_t dim_ = 0;
  std::optional<ContextEmbeddingStore> store_;
};

}  // namespace lemmatag
