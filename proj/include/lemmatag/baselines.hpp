#pragma once

// Reference lemmatizers used as floors for trained models.
//   copy:          lemma = surface form.
//   suffix-strip:  learn (strip n code points, append s) rules from training
//                  pairs; at prediction apply the most frequent rule seen for
//                  the longest suffix of the form that occurred in training
//                  (the whole form counts as a suffix).

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>

#include "lemmatag/conllu.hpp"
#include "lemmatag/errors.hpp"
#include "lemmatag/utf8.hpp"

namespace lemmatag {

enum class BaselineKind { copy, suffix_strip };

inline BaselineKind parse_baseline_kind(std::string_view s) {
  if (s == "copy") return BaselineKind::copy;
  if (s == "suffix-strip") return BaselineKind::suffix_strip;
  throw ConfigError("unknown baseline '" + std::string(s) + "' (expected copy or suffix-strip)");
}

struct EditRule {
  std::size_t strip = 0;  // code points removed from the end of the form
  std::u32string append;

  auto operator<=>(const EditRule&) const = default;
};

inline EditRule edit_rule(std::u32string_view form, std::u32string_view lemma) {
  std::size_t p = 0;
  while (p < form.size() && p < lemma.size() && form[p] == lemma[p]) ++p;
  return {form.size() - p, std::u32string(lemma.substr(p))};
}

class SuffixStripLemmatizer {
 public:
  void add(std::string_view form, std::string_view lemma) {
    const auto f = utf8::decode(form);
    const EditRule rule = edit_rule(f, utf8::decode(lemma));
    for (std::size_t k = 0; k <= f.size(); ++k) ++table_[f.substr(f.size() - k)][rule];
  }

  void fit(const Corpus& train) {
    for (const auto& s : train.sentences) {
      for (const auto& t : s.tokens) {
        if (!t.lemma.empty()) add(t.form, t.lemma);
      }
    }
  }

  std::string lemmatize(std::string_view form) const {
    const auto f = utf8::decode(form);
    for (std::size_t k = f.size() + 1; k-- > 0;) {
      const auto it = table_.find(f.substr(f.size() - k));
      if (it == table_.end()) continue;
      // Most frequent applicable rule; ties go to the smaller rule.
      const EditRule* best = nullptr;
      std::size_t best_count = 0;
      for (const auto& [rule, count] : it->second) {
        if (rule.strip <= f.size() && count > best_count) {
          best = &rule;
          best_count = count;
        }
      }
      if (best) return utf8::encode(f.substr(0, f.size() - best->strip) + best->append);
    }
    return std::string(form);
  }

 private:
  std::unordered_map<std::u32string, std::map<EditRule, std::size_t>> table_;
};

// Lemma predictions for every token of `input`; `train` is ignored by copy.
inline Predictions baseline_predictions(BaselineKind kind, const Corpus& train, const Corpus& input) {
  SuffixStripLemmatizer strip;
  if (kind == BaselineKind::suffix_strip) strip.fit(train);
  Predictions preds(input.sentences.size());
  for (std::size_t s = 0; s < input.sentences.size(); ++s) {
    for (const auto& t : input.sentences[s].tokens) {
      auto& p = preds[s].emplace_back();
      p.lemma = kind == BaselineKind::copy ? t.form : strip.lemmatize(t.form);
    }
  }
  return preds;
}

}  // namespace lemmatag
