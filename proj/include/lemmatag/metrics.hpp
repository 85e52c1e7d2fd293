#pragma once

// Lemma accuracy, mean lemma edit distance, morphological accuracy and
// morphological F1 over aligned gold/predicted corpora, plus comparison
// tables against published results.

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lemmatag/conllu.hpp"
#include "lemmatag/errors.hpp"
#include "lemmatag/tagset.hpp"
#include "lemmatag/utf8.hpp"

namespace lemmatag {

// Unit-cost edit distance over code points, two-row DP.
inline std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  return levenshtein(std::u32string_view(utf8::decode(a)), std::u32string_view(utf8::decode(b)));
}

namespace text {

// Turkish-aware lowercasing: I -> ı, İ -> i; other letters of the Turkish
// alphabet (plus circumflex vowels) and ASCII map to their lowercase forms.
inline char32_t lower_turkish(char32_t c) {
  if (c == U'I') return U'ı';
  if (c == U'İ') return U'i';
  if (c >= U'A' && c <= U'Z') return c + 32;
  switch (c) {
    case U'Ç': return U'ç';
    case U'Ğ': return U'ğ';
    case U'Ö': return U'ö';
    case U'Ş': return U'ş';
    case U'Ü': return U'ü';
    case U'Â': return U'â';
    case U'Î': return U'î';
    case U'Û': return U'û';
    default: return c;
  }
}

// Composes base letter + combining mark into the precomposed Turkish letter
// (cedilla, breve, diaeresis, dot above, circumflex). Other sequences are
// left alone.
inline char32_t compose_pair(char32_t base, char32_t mark) {
  struct Entry {
    char32_t base, mark, composed;
  };
  static constexpr Entry table[] = {
      {U'c', 0x0327, U'ç'}, {U'C', 0x0327, U'Ç'}, {U's', 0x0327, U'ş'}, {U'S', 0x0327, U'Ş'},
      {U'g', 0x0306, U'ğ'}, {U'G', 0x0306, U'Ğ'}, {U'o', 0x0308, U'ö'}, {U'O', 0x0308, U'Ö'},
      {U'u', 0x0308, U'ü'}, {U'U', 0x0308, U'Ü'}, {U'I', 0x0307, U'İ'}, {U'a', 0x0302, U'â'},
      {U'A', 0x0302, U'Â'}, {U'i', 0x0302, U'î'}, {U'I', 0x0302, U'Î'}, {U'u', 0x0302, U'û'},
      {U'U', 0x0302, U'Û'},
  };
  for (const auto& e : table) {
    if (e.base == base && e.mark == mark) return e.composed;
  }
  return 0;
}

inline std::u32string compose_turkish(std::u32string_view s) {
  std::u32string out;
  for (char32_t c : s) {
    if (!out.empty()) {
      if (char32_t composed = compose_pair(out.back(), c)) {
        out.back() = composed;
        continue;
      }
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace text

struct EvalOptions {
  bool lowercase = false;  // Turkish-aware lowercasing of lemmas before comparison
  bool compose = false;    // compose Turkish letters written with combining marks
  bool macro_f1 = false;   // average per-token F1 instead of micro-averaging
};

struct TokenError {
  std::string sent_id;
  std::size_t index = 0;  // 0-based syntactic-word index within the sentence
  std::string form;
  std::string gold_lemma;
  std::string predicted_lemma;
  std::string gold_tags;  // canonical items joined with '|'
  std::string predicted_tags;
};

struct EvalReport {
  double lemma_accuracy = 0;
  double mean_levenshtein = 0;
  double morph_accuracy = 0;
  double morph_f1 = 0;
  std::size_t token_count = 0;
  // Micro tallies behind morph_f1.
  std::size_t tag_intersection = 0;
  std::size_t tag_predicted = 0;
  std::size_t tag_gold = 0;
  std::vector<TokenError> errors;
};

namespace metrics_detail {

inline std::string normalize_lemma(std::string_view s, const EvalOptions& opt) {
  if (!opt.lowercase && !opt.compose) return std::string(s);
  std::u32string cps = utf8::decode(s);
  if (opt.compose) cps = text::compose_turkish(cps);
  if (opt.lowercase) {
    for (auto& c : cps) c = text::lower_turkish(c);
  }
  return utf8::encode(cps);
}

inline std::string join(const TagSequence& seq) {
  std::string out;
  for (const auto& item : seq) out += (out.empty() ? "" : "|") + item;
  return out;
}

inline double f1(std::size_t inter, std::size_t pred, std::size_t gold) {
  if (pred == 0 && gold == 0) return 100.0;
  if (inter == 0) return 0.0;
  const double p = static_cast<double>(inter) / static_cast<double>(pred);
  const double r = static_cast<double>(inter) / static_cast<double>(gold);
  return 100.0 * 2 * p * r / (p + r);
}

}  // namespace metrics_detail

// Sentences are matched by sent_id, so sentence order does not matter.
// Every gold sentence must appear in the prediction with the same number of
// tokens and the same forms, and vice versa.
inline EvalReport evaluate(const Corpus& gold, const Corpus& predicted, const EvalOptions& opt = {}) {
  using namespace metrics_detail;
  std::unordered_map<std::string, const Sentence*> by_id;
  for (const auto& s : predicted.sentences) by_id.emplace(s.sent_id, &s);
  if (predicted.sentences.size() != gold.sentences.size()) {
    for (const auto& s : gold.sentences) {
      if (!by_id.contains(s.sent_id)) throw AlignmentError("sentence '" + s.sent_id + "' missing from prediction");
    }
    throw AlignmentError("prediction has " + std::to_string(predicted.sentences.size()) + " sentences, gold has " +
                         std::to_string(gold.sentences.size()));
  }

  EvalReport r;
  std::size_t lemma_hits = 0, tag_hits = 0, distance = 0;
  double macro_sum = 0;
  for (const auto& gs : gold.sentences) {
    auto it = by_id.find(gs.sent_id);
    if (it == by_id.end()) throw AlignmentError("sentence '" + gs.sent_id + "' missing from prediction");
    const Sentence& ps = *it->second;
    if (ps.tokens.size() != gs.tokens.size()) {
      throw AlignmentError("sentence '" + gs.sent_id + "': prediction has " + std::to_string(ps.tokens.size()) +
                           " tokens, gold has " + std::to_string(gs.tokens.size()));
    }
    for (std::size_t i = 0; i < gs.tokens.size(); ++i) {
      const Token& g = gs.tokens[i];
      const Token& p = ps.tokens[i];
      if (g.form != p.form) {
        throw AlignmentError("sentence '" + gs.sent_id + "' token " + std::to_string(i + 1) + ": form '" + p.form +
                             "' does not match gold '" + g.form + "'");
      }
      const std::string gl = normalize_lemma(g.lemma, opt), pl = normalize_lemma(p.lemma, opt);
      const bool lemma_ok = gl == pl;
      lemma_hits += lemma_ok;
      distance += lemma_ok ? 0 : levenshtein(gl, pl);

      const TagSequence gt = canonical_tags(g), pt = canonical_tags(p);
      const bool tags_ok = gt == pt;
      tag_hits += tags_ok;
      std::size_t inter = 0;
      for (const auto& item : pt) inter += std::binary_search(gt.begin(), gt.end(), item, canonical_less);
      r.tag_intersection += inter;
      r.tag_predicted += pt.size();
      r.tag_gold += gt.size();
      macro_sum += f1(inter, pt.size(), gt.size());

      if (!lemma_ok || !tags_ok) {
        r.errors.push_back({gs.sent_id, i, g.form, g.lemma, p.lemma, join(gt), join(pt)});
      }
      ++r.token_count;
    }
  }
  if (r.token_count == 0) {
    r.lemma_accuracy = r.morph_accuracy = r.morph_f1 = 100.0;
    return r;
  }
  const double n = static_cast<double>(r.token_count);
  r.lemma_accuracy = 100.0 * static_cast<double>(lemma_hits) / n;
  r.mean_levenshtein = static_cast<double>(distance) / n;
  r.morph_accuracy = 100.0 * static_cast<double>(tag_hits) / n;
  r.morph_f1 = opt.macro_f1 ? macro_sum / n : f1(r.tag_intersection, r.tag_predicted, r.tag_gold);
  return r;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r, bool with_errors = true) {
  nlohmann::ordered_json j{{"lemma_accuracy", r.lemma_accuracy}, {"mean_levenshtein", r.mean_levenshtein},
                           {"morph_accuracy", r.morph_accuracy}, {"morph_f1", r.morph_f1},
                           {"token_count", r.token_count},       {"tag_intersection", r.tag_intersection},
                           {"tag_predicted", r.tag_predicted},   {"tag_gold", r.tag_gold}};
  if (with_errors) {
    auto& errs = j["errors"] = nlohmann::ordered_json::array();
    for (const auto& e : r.errors) {
      errs.push_back({{"sent_id", e.sent_id},
                      {"index", e.index},
                      {"form", e.form},
                      {"gold_lemma", e.gold_lemma},
                      {"predicted_lemma", e.predicted_lemma},
                      {"gold_tags", e.gold_tags},
                      {"predicted_tags", e.predicted_tags}});
    }
  }
  return j;
}

inline std::string format_report(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "tokens            %zu\nlemma accuracy    %.2f\nmean levenshtein  %.2f\nmorph accuracy    %.2f\n"
                "morph F1          %.2f\n",
                r.token_count, r.lemma_accuracy, r.mean_levenshtein, r.morph_accuracy, r.morph_f1);
  return buf;
}

// Published results on the SIGMORPHON 2019 task-2 Turkish treebanks.
struct PublishedRow {
  std::string_view model;
  double lemma_accuracy, mean_levenshtein, morph_accuracy, morph_f1;
};

enum class Dataset { imst, pud };
enum class Variant { separate, sequenced };

inline Dataset parse_dataset(std::string_view s) {
  std::string l(s);
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (l == "imst") return Dataset::imst;
  if (l == "pud") return Dataset::pud;
  throw ConfigError("unknown dataset '" + std::string(s) + "' (expected imst or pud)");
}

inline Variant parse_variant(std::string_view s) {
  if (s == "separate") return Variant::separate;
  if (s == "sequenced") return Variant::sequenced;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected separate or sequenced)");
}

// "imst:sequenced" style selector.
inline std::pair<Dataset, Variant> parse_comparison(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ConfigError("comparison must look like dataset:variant, got '" + std::string(s) + "'");
  return {parse_dataset(s.substr(0, colon)), parse_variant(s.substr(colon + 1))};
}

inline std::vector<PublishedRow> published_rows(Dataset d) {
  if (d == Dataset::imst) {
    return {{"SIGMORPHON", 96.84, 0.06, 92.27, 96.30},
            {"Separate Model", 97.70, 0.03, 93.75, 98.24},
            {"Sequenced Model", 98.13, 0.02, 93.75, 98.24}};
  }
  return {{"SIGMORPHON", 89.03, 0.28, 87.63, 94.96},
          {"Separate Model", 88.84, 0.12, 89.66, 96.41},
          {"Sequenced Model", 88.25, 0.13, 89.66, 96.41}};
}

struct Comparison {
  Dataset dataset;
  Variant variant;
  std::vector<PublishedRow> rows;  // this run, published variant row, SIGMORPHON row
};

inline Comparison compare_to_published(const EvalReport& r, Dataset d, Variant v) {
  const auto pub = published_rows(d);
  Comparison c{d, v, {}};
  c.rows.push_back({"This run", r.lemma_accuracy, r.mean_levenshtein, r.morph_accuracy, r.morph_f1});
  c.rows.push_back(pub[v == Variant::separate ? 1 : 2]);
  c.rows.push_back(pub[0]);
  return c;
}

inline std::string comparison_text(const Comparison& c) {
  std::ostringstream out;
  char buf[160];
  out << (c.dataset == Dataset::imst ? "IMST" : "PUD") << " ("
      << (c.variant == Variant::separate ? "separate" : "sequenced") << ")\n";
  std::snprintf(buf, sizeof buf, "%-16s %10s %10s %10s %10s\n", "model", "lemma_acc", "lev_dist", "morph_acc",
                "morph_f1");
  out << buf;
  for (const auto& row : c.rows) {
    std::snprintf(buf, sizeof buf, "%-16s %10.2f %10.2f %10.2f %10.2f\n", std::string(row.model).c_str(),
                  row.lemma_accuracy, row.mean_levenshtein, row.morph_accuracy, row.morph_f1);
    out << buf;
  }
  return out.str();
}

inline std::string comparison_csv(const Comparison& c) {
  std::ostringstream out;
  char buf[160];
  out << "dataset,variant,model,lemma_accuracy,mean_levenshtein,morph_accuracy,morph_f1\n";
  for (const auto& row : c.rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.2f,%.2f,%.2f,%.2f\n", c.dataset == Dataset::imst ? "imst" : "pud",
                  c.variant == Variant::separate ? "separate" : "sequenced", std::string(row.model).c_str(),
                  row.lemma_accuracy, row.mean_levenshtein, row.morph_accuracy, row.morph_f1);
    out << buf;
  }
  return out.str();
}

}  // namespace lemmatag
