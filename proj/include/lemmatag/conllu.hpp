#pragma once

// CoNLL-U treebank reading and writing.
//
// Every block keeps its raw lines so that writing an unmodified corpus
// reproduces the source byte-for-byte. Multiword-token ranges ("3-4") and
// empty nodes ("5.1") are kept in the raw lines but are not part of
// Sentence::tokens, which only lists syntactic words.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lemmatag/errors.hpp"

namespace lemmatag {

enum class Split { train, dev, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

struct Token {
  int id = 0;
  std::string form;
  std::string lemma;  // empty when the column is "_"
  std::string upos;
  std::vector<std::string> feats;  // column 6 split on '|', empty when "_"
};

struct Sentence {
  std::string sent_id;
  std::optional<std::string> text;
  std::vector<Token> tokens;

  std::vector<std::string> lines;        // raw block lines, file order
  std::vector<std::size_t> token_lines;  // tokens[i] lives at lines[token_lines[i]]
  std::size_t first_line = 0;            // 1-based line number in the source
};

struct Corpus {
  Split split = Split::train;
  std::vector<Sentence> sentences;
  std::string source_path;

  std::size_t leading_blank_lines = 0;
  std::vector<std::size_t> blank_lines_after;  // one entry per sentence
  bool final_newline = true;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.tokens.size();
    return n;
  }
};

// Per-token replacements applied by write_conllu. Unset fields keep the
// source column.
struct TokenPrediction {
  std::optional<std::string> lemma;
  std::optional<std::string> upos;
  std::optional<std::vector<std::string>> feats;
};

// One inner vector per sentence, one entry per syntactic word.
using Predictions = std::vector<std::vector<TokenPrediction>>;

namespace conllu_detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline bool parse_positive_int(std::string_view s, int& out) {
  if (s.empty() || s.size() > 9) return false;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  if (v <= 0) return false;
  out = v;
  return true;
}

inline std::string location(const std::string& path, std::size_t line) {
  return (path.empty() ? std::string("<input>") : path) + ":" + std::to_string(line);
}

}  // namespace conllu_detail

inline std::vector<std::string> parse_feats(std::string_view column) {
  std::vector<std::string> feats;
  if (column == "_" || column.empty()) return feats;
  for (auto item : conllu_detail::split(column, '|')) feats.emplace_back(item);
  return feats;
}

inline std::string join_feats(const std::vector<std::string>& feats) {
  if (feats.empty()) return "_";
  std::string out;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (i) out.push_back('|');
    out += feats[i];
  }
  return out;
}

inline Corpus parse_conllu(std::string_view content, std::string source_path = {}, Split split = Split::train) {
  using namespace conllu_detail;
  Corpus corpus;
  corpus.split = split;
  corpus.source_path = std::move(source_path);

  std::vector<std::string_view> lines = conllu_detail::split(content, '\n');
  corpus.final_newline = !content.empty() && content.back() == '\n';
  if (corpus.final_newline || content.empty()) lines.pop_back();

  std::unordered_set<std::string> seen_ids;
  std::size_t block_index = 0;
  std::size_t i = 0;
  while (i < lines.size() && lines[i].empty()) {
    ++corpus.leading_blank_lines;
    ++i;
  }

  while (i < lines.size()) {
    Sentence sent;
    sent.first_line = i + 1;
    int last_id = 0;
    bool has_sent_id = false;
    for (; i < lines.size() && !lines[i].empty(); ++i) {
      const std::string_view line = lines[i];
      const std::size_t lineno = i + 1;
      if (line.back() == '\r') {
        throw ParseError(location(corpus.source_path, lineno) + ": CRLF line endings are not supported");
      }
      sent.lines.emplace_back(line);
      if (line.front() == '#') {
        const auto body = trim(line.substr(1));
        const auto eq = body.find('=');
        if (eq != std::string_view::npos) {
          const auto key = trim(body.substr(0, eq));
          const auto value = trim(body.substr(eq + 1));
          if (key == "sent_id") {
            sent.sent_id = std::string(value);
            has_sent_id = true;
          } else if (key == "text") {
            sent.text = std::string(value);
          }
        }
        continue;
      }
      const auto cols = conllu_detail::split(line, '\t');
      if (cols.size() != 10) {
        throw ParseError(location(corpus.source_path, lineno) + ": expected 10 tab-separated columns, found " +
                         std::to_string(cols.size()));
      }
      const auto id_col = cols[0];
      if (id_col.find('-') != std::string_view::npos || id_col.find('.') != std::string_view::npos) {
        continue;  // multiword range or empty node: kept verbatim, not modeled
      }
      Token tok;
      if (!parse_positive_int(id_col, tok.id)) {
        throw ParseError(location(corpus.source_path, lineno) + ": invalid token id '" + std::string(id_col) + "'");
      }
      if (tok.id <= last_id) {
        throw ParseError(location(corpus.source_path, lineno) + ": token ids must be strictly increasing");
      }
      last_id = tok.id;
      if (cols[1].empty()) throw ParseError(location(corpus.source_path, lineno) + ": empty FORM");
      tok.form = std::string(cols[1]);
      tok.lemma = cols[2] == "_" ? std::string() : std::string(cols[2]);
      tok.upos = std::string(cols[3]);
      tok.feats = parse_feats(cols[5]);
      std::vector<std::string> sorted = tok.feats;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ParseError(location(corpus.source_path, lineno) + ": duplicate item in FEATS");
      }
      sent.token_lines.push_back(sent.lines.size() - 1);
      sent.tokens.push_back(std::move(tok));
    }
    if (sent.tokens.empty()) {
      throw ParseError(location(corpus.source_path, sent.first_line) + ": sentence block has no word rows");
    }
    if (!has_sent_id) sent.sent_id = corpus.source_path + "#" + std::to_string(block_index);
    if (!seen_ids.insert(sent.sent_id).second) {
      throw ParseError(location(corpus.source_path, sent.first_line) + ": duplicate sent_id '" + sent.sent_id + "'");
    }
    ++block_index;

    std::size_t blanks = 0;
    while (i < lines.size() && lines[i].empty()) {
      ++blanks;
      ++i;
    }
    corpus.sentences.push_back(std::move(sent));
    corpus.blank_lines_after.push_back(blanks);
  }
  return corpus;
}

inline Corpus parse_conllu(std::istream& in, std::string source_path = {}, Split split = Split::train) {
  std::string content{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_conllu(std::string_view(content), std::move(source_path), split);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Corpus load_conllu(const std::string& path, Split split = Split::train) {
  return parse_conllu(std::string_view(read_text_file(path)), path, split);
}

// Returns a copy of `corpus` with the predicted columns substituted in both
// the token model and the raw lines.
inline Corpus apply_predictions(const Corpus& corpus, const Predictions& predictions) {
  if (predictions.size() != corpus.sentences.size()) {
    throw AlignmentError("predictions cover " + std::to_string(predictions.size()) + " sentences, corpus has " +
                         std::to_string(corpus.sentences.size()));
  }
  Corpus out = corpus;
  for (std::size_t s = 0; s < out.sentences.size(); ++s) {
    auto& sent = out.sentences[s];
    const auto& preds = predictions[s];
    if (preds.size() != sent.tokens.size()) {
      throw AlignmentError("sentence '" + sent.sent_id + "': " + std::to_string(preds.size()) +
                           " predictions for " + std::to_string(sent.tokens.size()) + " tokens (first unaligned index " +
                           std::to_string(std::min(preds.size(), sent.tokens.size())) + ")");
    }
    for (std::size_t t = 0; t < sent.tokens.size(); ++t) {
      const auto& p = preds[t];
      if (!p.lemma && !p.upos && !p.feats) continue;
      auto& tok = sent.tokens[t];
      auto& raw = sent.lines[sent.token_lines[t]];
      auto cols = conllu_detail::split(raw, '\t');
      std::vector<std::string> fields(cols.begin(), cols.end());
      if (p.lemma) {
        tok.lemma = *p.lemma;
        fields[2] = p.lemma->empty() ? "_" : *p.lemma;
      }
      if (p.upos) {
        tok.upos = *p.upos;
        fields[3] = p.upos->empty() ? "_" : *p.upos;
      }
      if (p.feats) {
        tok.feats = *p.feats;
        fields[5] = join_feats(*p.feats);
      }
      std::string line;
      for (std::size_t k = 0; k < fields.size(); ++k) {
        if (k) line.push_back('\t');
        line += fields[k];
      }
      raw = std::move(line);
    }
  }
  return out;
}

inline std::string write_conllu(const Corpus& corpus) {
  std::vector<const std::string*> lines;
  static const std::string kBlank;
  for (std::size_t k = 0; k < corpus.leading_blank_lines; ++k) lines.push_back(&kBlank);
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    for (const auto& l : corpus.sentences[s].lines) lines.push_back(&l);
    const std::size_t blanks = s < corpus.blank_lines_after.size() ? corpus.blank_lines_after[s] : 1;
    for (std::size_t k = 0; k < blanks; ++k) lines.push_back(&kBlank);
  }
  std::string out;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (k) out.push_back('\n');
    out += *lines[k];
  }
  if (corpus.final_newline && !lines.empty()) out.push_back('\n');
  return out;
}

inline std::string write_conllu(const Corpus& corpus, const Predictions& predictions) {
  return write_conllu(apply_predictions(corpus, predictions));
}

inline void write_conllu(std::ostream& out, const Corpus& corpus) { out << write_conllu(corpus); }

}  // namespace lemmatag
