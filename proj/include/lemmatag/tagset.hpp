#pragma once

// Morphological tag canonicalization and symbol vocabularies.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lemmatag/conllu.hpp"
#include "lemmatag/errors.hpp"
#include "lemmatag/utf8.hpp"

namespace lemmatag {

// Ordered feature bundle: "POS=<upos>" first, then "Key=Value" items in
// code-point order, no duplicates.
using TagSequence = std::vector<std::string>;

inline constexpr std::string_view kPosPrefix = "POS=";

inline bool is_pos_item(std::string_view item) { return item.starts_with(kPosPrefix); }

// Strict total order used for canonical tag sequences. Byte order on UTF-8
// coincides with code-point order.
inline bool canonical_less(std::string_view a, std::string_view b) {
  const bool pa = is_pos_item(a);
  const bool pb = is_pos_item(b);
  if (pa != pb) return pa;
  return a < b;
}

// Sorts and deduplicates an arbitrary item list (which may already contain a
// POS item).
inline TagSequence canonicalize_items(std::span<const std::string> items) {
  TagSequence out(items.begin(), items.end());
  std::sort(out.begin(), out.end(), canonical_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// upos may be empty or "_" (no part of speech), in which case no POS item is
// emitted.
inline TagSequence canonicalize(std::span<const std::string> feats, std::string_view upos) {
  std::vector<std::string> items(feats.begin(), feats.end());
  if (!upos.empty() && upos != "_") items.push_back(std::string(kPosPrefix) + std::string(upos));
  return canonicalize_items(items);
}

inline TagSequence canonical_tags(const Token& tok) { return canonicalize(tok.feats, tok.upos); }

// Splits a canonical sequence back into CoNLL-U columns 4 and 6.
struct TagColumns {
  std::string upos;
  std::vector<std::string> feats;
};

inline TagColumns to_columns(const TagSequence& seq) {
  TagColumns cols;
  for (const auto& item : canonicalize_items(seq)) {
    if (is_pos_item(item)) {
      if (cols.upos.empty()) cols.upos = item.substr(kPosPrefix.size());
    } else {
      cols.feats.push_back(item);
    }
  }
  return cols;
}

// Bidirectional symbol <-> id map with four reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary() : symbols_{"<pad>", "<start>", "<end>", "<unk>"} {}

  // Specials first, then the given symbols in code-point order.
  static Vocabulary from_symbols(const std::set<std::string>& symbols) {
    Vocabulary v;
    for (const auto& s : symbols) {
      if (v.ids_.contains(s) || s == "<pad>" || s == "<start>" || s == "<end>" || s == "<unk>") continue;
      v.ids_.emplace(s, static_cast<int>(v.symbols_.size()));
      v.symbols_.push_back(s);
    }
    return v;
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  int content_size() const { return size() - kNumSpecials; }

  int id_of(std::string_view symbol) const {
    auto it = ids_.find(std::string(symbol));
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view symbol) const { return ids_.contains(std::string(symbol)); }

  const std::string& symbol_of(int id) const {
    if (id < 0 || id >= size()) throw ConfigError("vocabulary id out of range: " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id)];
  }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::vector<int> encode(std::span<const std::string> seq) const {
    std::vector<int> ids;
    ids.reserve(seq.size());
    for (const auto& s : seq) ids.push_back(id_of(s));
    return ids;
  }

  // Drops PAD/START/END; UNK decodes to "<unk>".
  std::vector<std::string> decode(std::span<const int> ids) const {
    std::vector<std::string> out;
    for (int id : ids) {
      if (id == kPad || id == kStart || id == kEnd) continue;
      out.push_back(symbol_of(id));
    }
    return out;
  }

  // One symbol per line; line number - 1 is the id.
  std::string serialize() const {
    std::string out;
    for (const auto& s : symbols_) {
      out += s;
      out.push_back('\n');
    }
    return out;
  }

  static Vocabulary deserialize(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
      auto pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      lines.emplace_back(text.substr(start, pos - start));
      start = pos + 1;
    }
    static const char* kSpecials[] = {"<pad>", "<start>", "<end>", "<unk>"};
    if (lines.size() < kNumSpecials) throw DataError("vocabulary file lacks the four reserved entries");
    for (int i = 0; i < kNumSpecials; ++i) {
      if (lines[static_cast<std::size_t>(i)] != kSpecials[i]) {
        throw DataError("vocabulary line " + std::to_string(i + 1) + " must be " + kSpecials[i]);
      }
    }
    Vocabulary v;
    for (std::size_t i = kNumSpecials; i < lines.size(); ++i) {
      if (!v.ids_.emplace(lines[i], static_cast<int>(v.symbols_.size())).second) {
        throw DataError("duplicate vocabulary entry '" + lines[i] + "'");
      }
      v.symbols_.push_back(lines[i]);
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.symbols_ == b.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
};

using TagVocabulary = Vocabulary;
using CharVocabulary = Vocabulary;

// Every distinct canonical feature string in the (training) corpus.
inline TagVocabulary build_tag_vocab(const Corpus& corpus) {
  std::set<std::string> items;
  for (const auto& sent : corpus.sentences) {
    for (const auto& tok : sent.tokens) {
      for (auto& item : canonical_tags(tok)) items.insert(std::move(item));
    }
  }
  return TagVocabulary::from_symbols(items);
}

// Code points of every form and lemma in the corpus, each stored as its
// UTF-8 string.
inline CharVocabulary build_char_vocab(const Corpus& corpus) {
  std::set<std::string> chars;
  auto add = [&](const std::string& s) {
    for (char32_t cp : utf8::decode(s)) chars.insert(utf8::encode(cp));
  };
  for (const auto& sent : corpus.sentences) {
    for (const auto& tok : sent.tokens) {
      add(tok.form);
      add(tok.lemma);
    }
  }
  return CharVocabulary::from_symbols(chars);
}

inline std::vector<int> encode_chars(const CharVocabulary& vocab, std::string_view word) {
  std::vector<int> ids;
  for (char32_t cp : utf8::decode(word)) ids.push_back(vocab.id_of(utf8::encode(cp)));
  return ids;
}

inline std::string decode_chars(const CharVocabulary& vocab, std::span<const int> ids) {
  std::string out;
  for (const auto& s : vocab.decode(ids)) out += s;
  return out;
}

inline Vocabulary load_vocabulary(const std::string& path) { return Vocabulary::deserialize(read_text_file(path)); }

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << vocab.serialize();
}

}  // namespace lemmatag
