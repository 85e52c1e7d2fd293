// Acceptance checks. One line per criterion: PASS, FAIL or NOT RUN, followed
// by the measured values. Exit status is nonzero iff any check FAILs.
//
// Full-corpus sub-checks need the SIGMORPHON 2019 Turkish files:
//   LEMMATAG_UD_DIR   directory holding tr_imst-um-{train,dev}.conllu and
//                     tr_pud-um-*.conllu (any *.conllu there is round-tripped)
//   LEMMATAG_CTXE     colon-separated CTXE files covering IMST train and dev;
//                     together with LEMMATAG_UD_DIR enables the long
//                     directional check (64 epochs on full IMST).

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grad_cases.hpp"
#include "lemmatag/baselines.hpp"
#include "lemmatag/metrics.hpp"
#include "lemmatag/trainer.hpp"
#include "run_cli.hpp"
#include "tempdir.hpp"

namespace fs = std::filesystem;
using namespace lemmatag;
using lemmatag::testing::run_cli;
using lemmatag::testing::shell_quote;
using lemmatag::testing::slurp;
using lemmatag::testing::TempDir;

namespace {

// Pinned thresholds.
constexpr double kGradMaxRelError = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr std::uint64_t kGradSeeds[] = {1, 2, 3, 5, 8, 13};
constexpr double kGradSeconds = 120;
constexpr std::size_t kMemoSentences = 32;
constexpr std::size_t kMemoEpochs = 300;
constexpr double kMemoAccuracy = 99.0;
constexpr double kMemoSeconds = 600;
constexpr std::size_t kLevTriples = 10000;
constexpr std::size_t kLevReferencePairs = 1000;
constexpr std::size_t kCanonPermutations = 8;
constexpr std::size_t kDirectionalEpochs = 64;

const std::string kData = LEMMATAG_TEST_DATA;

enum class Status { pass, fail, not_run };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

class Detail {
 public:
  template <typename T>
  Detail& operator<<(const T& v) {
    out_ << v;
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

Outcome pass(const Detail& d) { return {Status::pass, d.str()}; }
Outcome fail(const Detail& d) { return {Status::fail, d.str()}; }
Outcome not_run(const std::string& why) { return {Status::not_run, why}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::optional<fs::path> ud_dir() {
  const char* v = std::getenv("LEMMATAG_UD_DIR");
  if (!v || !*v) return std::nullopt;
  return fs::path(v);
}

std::vector<std::string> conllu_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".conllu") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string q(const std::string& s) { return shell_quote(s); }

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { std::ofstream(path) << j.dump(2); }

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_where;
  std::size_t checked = 0, runs = 0;
  std::vector<std::string> failures;
  const auto cases = lemmatag::testing::gradient_cases();
  for (const auto& c : cases) {
    for (auto seed : kGradSeeds) {
      const auto r = c.run(seed);
      ++runs;
      checked += r.checked;
      if (r.checked == 0) failures.push_back(c.name + " checked nothing");
      if (!(r.max_rel_error < kGradMaxRelError)) {
        failures.push_back(c.name + "/seed " + std::to_string(seed) + ": " + r.worst);
      }
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_where = c.name + "/seed " + std::to_string(seed);
      }
    }
  }
  const double secs = seconds_since(t0);
  Detail d;
  d << cases.size() << " graphs x " << std::size(kGradSeeds) << " seeds, " << checked
    << " scalars, h=" << kGradStep << ", max rel err " << lemmatag::testing::fmt(worst) << " (" << worst_where
    << ") < " << kGradMaxRelError << ", " << secs << " s (limit " << kGradSeconds << ")";
  if (!failures.empty()) d << "; failed: " << failures.front();
  return failures.empty() && secs < kGradSeconds && runs > 0 ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

Outcome memorization() {
  const auto t0 = std::chrono::steady_clock::now();
  TempDir dir("accept_memo");
  Corpus train = load_conllu(kData + "/tr_sample-ud-train.conllu");
  if (train.sentences.size() < kMemoSentences) {
    return fail(Detail() << "training sample has only " << train.sentences.size() << " sentences");
  }
  train.sentences.resize(kMemoSentences);
  const std::string slice = dir / "slice.conllu";
  std::ofstream(slice) << write_conllu(train);
  std::size_t tokens = 0;
  for (const auto& s : train.sentences) tokens += s.tokens.size();

  Detail d;
  d << kMemoSentences << " sentences / " << tokens << " tokens, pseudo:64, default dims;";
  bool ok = true;
  for (const Task task : {Task::lemmatizer_separate, Task::tagger}) {
    TrainingConfig c;
    c.task = task;
    c.seed = 1;
    c.epochs = kMemoEpochs;
    c.early_stop_patience = kMemoEpochs;
    c.stop_at_dev_metric = 100.0;
    c.data.train = c.data.dev = slice;
    c.embeddings = {"pseudo:64"};
    c.output_dir = dir / std::string(to_string(task));
    const auto result = lemmatag::train(c);
    // Score the saved checkpoint independently of the trainer's own tally.
    const auto model = load_model(c.output_dir);
    const Corpus gold = load_conllu(slice);
    const Corpus pred = apply_predictions(gold, predict_corpus(model, gold, MeaningSource::pseudo(64)));
    const auto r = evaluate(gold, pred);
    const double acc = task == Task::tagger ? r.morph_accuracy : r.lemma_accuracy;
    const bool task_ok = acc >= kMemoAccuracy && result.report.epochs.size() <= kMemoEpochs;
    ok = ok && task_ok;
    d << " " << to_string(task) << " " << (task == Task::tagger ? "morph" : "lemma") << " acc " << acc
      << " after " << result.report.best_epoch << " epochs";
  }
  const double secs = seconds_since(t0);
  d << "; need >= " << kMemoAccuracy << " within " << kMemoEpochs << " epochs; " << secs << " s (limit "
    << kMemoSeconds << ")";
  return ok && secs < kMemoSeconds ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

bool perfect(const EvalReport& r) {
  return r.lemma_accuracy == 100.0 && r.mean_levenshtein == 0.0 && r.morph_accuracy == 100.0 && r.morph_f1 == 100.0;
}

Outcome metric_oracle() {
  const auto gold = load_conllu(kData + "/metrics/gold5.conllu");
  const auto pred = load_conllu(kData + "/metrics/pred5.conllu");
  const auto r = evaluate(gold, pred);
  Detail d;
  d << "fixture " << r.token_count << " tokens: lemma acc " << r.lemma_accuracy << " (want 60.0), mean lev "
    << r.mean_levenshtein << " (want 0.8)";
  bool ok = r.token_count == 5 && r.lemma_accuracy == 60.0 && r.mean_levenshtein == 0.8;
  for (const char* split : {"dev", "test"}) {
    const auto c = load_conllu(kData + "/tr_sample-ud-" + split + ".conllu");
    const bool p = perfect(evaluate(c, c));
    ok = ok && p;
    d << "; gold=gold sample " << split << (p ? " 100/0/100/100" : " NOT perfect");
  }
  return ok ? pass(d) : fail(d);
}

Outcome metric_oracle_full() {
  const auto dir = ud_dir();
  if (!dir) return not_run("gold=gold on full IMST dev needs LEMMATAG_UD_DIR");
  const std::string path = (*dir / "tr_imst-um-dev.conllu").string();
  if (!fs::exists(path)) return fail(Detail() << path << " missing");
  const auto c = load_conllu(path);
  const auto r = evaluate(c, c);
  Detail d;
  d << "full IMST dev, " << r.token_count << " tokens: " << r.lemma_accuracy << " / " << r.mean_levenshtein << " / "
    << r.morph_accuracy << " / " << r.morph_f1;
  return perfect(r) ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

// Textbook full-matrix edit distance on code points, kept separate from the
// library's two-row version.
std::size_t reference_levenshtein(const std::u32string& a, const std::u32string& b) {
  std::vector<std::vector<std::size_t>> m(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) m[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) m[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      m[i][j] = std::min({m[i - 1][j] + 1, m[i][j - 1] + 1, m[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return m[a.size()][b.size()];
}

std::u32string random_word(nn::SplitMix64& rng) {
  static const std::u32string alphabet = U"abcçdefgğhıijklmnoöprsştuüvyzâîûIİÇĞÖŞÜ̧̇";
  std::u32string s;
  // Small alphabets for some words so that near-duplicates are common.
  const std::size_t span = rng.below(2) ? 4 : alphabet.size();
  for (std::size_t i = 0, n = rng.below(13); i < n; ++i) s += alphabet[rng.below(span)];
  return s;
}

Outcome levenshtein_properties() {
  nn::SplitMix64 rng(2019);
  std::size_t violations = 0;
  std::string first;
  auto violated = [&](const std::string& what, const std::u32string& a, const std::u32string& b) {
    if (violations++ == 0) first = what + " on '" + utf8::encode(a) + "', '" + utf8::encode(b) + "'";
  };
  for (std::size_t k = 0; k < kLevTriples; ++k) {
    const auto a = random_word(rng), b = random_word(rng), c = random_word(rng);
    const std::string ea = utf8::encode(a), eb = utf8::encode(b), ec = utf8::encode(c);
    const auto ab = levenshtein(ea, eb), ba = levenshtein(eb, ea);
    const auto bc = levenshtein(eb, ec), ac = levenshtein(ea, ec);
    if (levenshtein(ea, ea) != 0) violated("identity", a, a);
    if ((ab == 0) != (a == b)) violated("zero iff equal", a, b);
    if (ab != ba) violated("symmetry", a, b);
    if (ac > ab + bc) violated("triangle", a, c);
  }
  std::size_t disagreements = 0;
  for (std::size_t k = 0; k < kLevReferencePairs; ++k) {
    const auto a = random_word(rng), b = random_word(rng);
    if (levenshtein(utf8::encode(a), utf8::encode(b)) != reference_levenshtein(a, b)) {
      if (disagreements++ == 0 && first.empty()) first = "reference mismatch on '" + utf8::encode(a) + "'";
    }
  }
  Detail d;
  d << kLevTriples << " triples: " << violations << " identity/symmetry/triangle violations; " << kLevReferencePairs
    << " pairs vs full-matrix DP: " << disagreements << " disagreements";
  if (!first.empty()) d << "; first: " << first;
  return violations == 0 && disagreements == 0 ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json small_config(const std::string& task, const std::string& output_dir) {
  return {{"task", task},
          {"seed", 11},
          {"epochs", 4},
          {"batch_size", 16},
          {"learning_rate", 0.003},
          {"dims", {{"char_embedding", 24}, {"hidden", 32}, {"tag_embedding", 12}, {"tag_hidden", 16}}},
          {"data",
           {{"train", kData + "/tr_sample-ud-train.conllu"},
            {"dev", kData + "/tr_sample-ud-dev.conllu"},
            {"test", kData + "/tr_sample-ud-test.conllu"}}},
          {"embeddings", {"pseudo:16"}},
          {"output_dir", output_dir}};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

std::string cli_failure(const std::string& what, const lemmatag::testing::CliResult& r) {
  return what + " exited " + std::to_string(r.code) + ": " + r.err;
}

Outcome determinism() {
  TempDir dir("accept_determinism");
  Detail d;
  bool ok = true;
  for (const std::string task : {"tagger", "lemmatizer-separate"}) {
    const fs::path out = dir.path() / task;
    const std::string cfg = dir / (task + ".json");
    write_json(cfg, small_config(task, out.string()));
    std::map<std::string, std::string> runs[2];
    nlohmann::json manifests[2];
    for (auto& snap : runs) {
      fs::remove_all(out);
      const auto r = run_cli("train --quiet --config " + q(cfg));
      if (r.code != 0) return fail(Detail() << cli_failure("train " + task, r));
      snap = snapshot(out);
      auto m = nlohmann::json::parse(snap["manifest.json"]);
      m.erase("timings");
      manifests[&snap - runs] = m;
      snap.erase("manifest.json");
    }
    std::vector<std::string> differing;
    for (const auto& [name, bytes] : runs[0]) {
      const auto it = runs[1].find(name);
      if (it == runs[1].end() || it->second != bytes) differing.push_back(name);
    }
    if (runs[0].size() != runs[1].size()) differing.push_back("<file set>");
    if (manifests[0] != manifests[1]) differing.push_back("manifest.json (excluding timings)");
    const bool same = differing.empty() && runs[0].count("params.mlxp") && runs[0].count("report.json");
    ok = ok && same;
    d << task << ": " << runs[0].size() << " files " << (same ? "byte-identical" : "DIFFER (" + differing[0] + ")")
      << "; ";
  }
  d << "two separate train processes per task";
  return ok ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

std::string first_difference(const std::string& a, const std::string& b) {
  std::size_t i = 0;
  while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
  return "byte " + std::to_string(i);
}

struct RoundTrip {
  std::size_t files = 0, sentences = 0, bytes = 0;
  std::vector<std::string> failures;
};

void round_trip(const std::vector<std::string>& files, RoundTrip& rt) {
  for (const auto& f : files) {
    const std::string bytes = slurp(f);
    try {
      const Corpus c = parse_conllu(std::string_view(bytes), f);
      const std::string out = write_conllu(c);
      ++rt.files;
      rt.sentences += c.sentences.size();
      rt.bytes += bytes.size();
      if (out != bytes) rt.failures.push_back(f + " differs at " + first_difference(out, bytes));
    } catch (const std::exception& e) {
      rt.failures.push_back(f + ": " + e.what());
    }
  }
}

struct CanonStats {
  std::size_t bundles = 0;
  std::vector<std::string> failures;
};

void canonical_checks(const Corpus& c, nn::SplitMix64& rng, CanonStats& st) {
  for (const auto& s : c.sentences) {
    for (const auto& t : s.tokens) {
      ++st.bundles;
      const TagSequence canon = canonical_tags(t);
      if (canonicalize_items(std::span<const std::string>(canon)) != canon) {
        st.failures.push_back("not idempotent: " + s.sent_id + " '" + t.form + "'");
      }
      auto feats = t.feats;
      for (std::size_t k = 0; k < kCanonPermutations; ++k) {
        nn::shuffle(feats.begin(), feats.end(), rng);
        if (canonicalize(std::span<const std::string>(feats), t.upos) != canon) {
          st.failures.push_back("order-dependent: " + s.sent_id + " '" + t.form + "'");
          break;
        }
      }
    }
  }
}

Outcome data_fidelity_sample() {
  RoundTrip rt;
  round_trip(conllu_files(kData), rt);
  CanonStats st;
  nn::SplitMix64 rng(7);
  canonical_checks(load_conllu(kData + "/tr_sample-ud-train.conllu"), rng, st);
  Detail d;
  d << "bundled: " << rt.files << " files / " << rt.sentences << " sentences / " << rt.bytes
    << " bytes round-trip " << (rt.failures.empty() ? "byte-identical" : "FAILED: " + rt.failures[0]) << "; "
    << st.bundles << " training bundles x " << kCanonPermutations << " permutations "
    << (st.failures.empty() ? "canonical, idempotent" : "FAILED: " + st.failures[0]);
  return rt.failures.empty() && st.failures.empty() && rt.files > 0 ? pass(d) : fail(d);
}

Outcome data_fidelity_full() {
  const auto dir = ud_dir();
  if (!dir) return not_run("round-trip and canonicalization on full IMST and PUD need LEMMATAG_UD_DIR");
  std::vector<std::string> files;
  for (const auto& f : conllu_files(*dir)) {
    const auto name = fs::path(f).filename().string();
    if (name.starts_with("tr_imst") || name.starts_with("tr_pud")) files.push_back(f);
  }
  const bool has_imst = std::any_of(files.begin(), files.end(), [](const auto& f) { return f.find("tr_imst") != f.npos; });
  const bool has_pud = std::any_of(files.begin(), files.end(), [](const auto& f) { return f.find("tr_pud") != f.npos; });
  if (!has_imst || !has_pud) return fail(Detail() << "LEMMATAG_UD_DIR lacks tr_imst* or tr_pud* CoNLL-U files");
  RoundTrip rt;
  round_trip(files, rt);
  CanonStats st;
  nn::SplitMix64 rng(7);
  for (const auto& f : files) {
    if (f.find("train") != f.npos) canonical_checks(load_conllu(f), rng, st);
  }
  Detail d;
  d << "full IMST+PUD: " << rt.files << " files / " << rt.sentences << " sentences round-trip "
    << (rt.failures.empty() ? "byte-identical" : "FAILED: " + rt.failures[0]) << "; " << st.bundles
    << " training bundles " << (st.failures.empty() ? "canonical, idempotent" : "FAILED: " + st.failures[0]);
  return rt.failures.empty() && st.failures.empty() ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

Outcome pipeline_integrity() {
  TempDir dir("accept_pipeline");
  const fs::path tagger = dir.path() / "tagger", lem = dir.path() / "lemmatizer";
  write_json(dir.path() / "tagger.json", small_config("tagger", tagger.string()));
  auto lem_cfg = small_config("lemmatizer-sequenced", lem.string());
  lem_cfg["tagger_checkpoint"] = tagger.string();
  write_json(dir.path() / "lemmatizer.json", lem_cfg);

  auto r = run_cli("train --quiet --config " + q(dir / "tagger.json"));
  if (r.code != 0) return fail(Detail() << cli_failure("tagger train", r));
  const auto before = snapshot(tagger);
  r = run_cli("train --quiet --config " + q(dir / "lemmatizer.json"));
  if (r.code != 0) return fail(Detail() << cli_failure("sequenced train", r));
  const bool untouched = snapshot(tagger) == before;

  Detail d;
  d << "tagger checkpoint (" << before.size() << " files) " << (untouched ? "bit-identical" : "MODIFIED")
    << " after sequenced run;";
  bool ok = untouched;
  for (const char* split : {"train", "dev", "test"}) {
    const std::string gold_path = kData + "/tr_sample-ud-" + split + ".conllu";
    const fs::path consumed = lem / "tags" / (std::string(split) + ".conllu");
    if (!fs::exists(consumed)) {
      ok = false;
      d << " " << split << ": no tag file";
      continue;
    }
    // The consumed tags are exactly what the tagger predicts for the split.
    const std::string fresh = dir / (std::string("predicted-") + split + ".conllu");
    r = run_cli("predict --checkpoint " + q(tagger.string()) + " --input " + q(gold_path) + " --output " + q(fresh));
    const bool predicted = r.code == 0 && slurp(fresh) == slurp(consumed);
    std::size_t tokens = 0;
    bool aligned = true;
    try {
      const Corpus gold = load_conllu(gold_path);
      for (const auto& row : tag_inputs_from(load_conllu(consumed.string()), gold)) tokens += row.size();
      std::size_t gold_tokens = 0;
      for (const auto& s : gold.sentences) gold_tokens += s.tokens.size();
      aligned = tokens == gold_tokens;
    } catch (const std::exception& e) {
      aligned = false;
    }
    ok = ok && predicted && aligned;
    d << " " << split << ": " << tokens << " tokens " << (aligned ? "1:1" : "MISALIGNED") << ", "
      << (predicted ? "= tagger predictions" : "!= tagger predictions") << ";";
  }
  return ok ? pass(d) : fail(d);
}

// ---------------------------------------------------------------------------

Outcome directional_baselines() {
  const auto dir = ud_dir();
  const char* ctxe = std::getenv("LEMMATAG_CTXE");
  if (!dir || !ctxe || !*ctxe) {
    return not_run("64-epoch full-IMST run needs LEMMATAG_UD_DIR and LEMMATAG_CTXE");
  }
  const std::string train_path = (*dir / "tr_imst-um-train.conllu").string();
  const std::string dev_path = (*dir / "tr_imst-um-dev.conllu").string();
  std::vector<std::string> embeddings;
  std::stringstream ss(ctxe);
  for (std::string part; std::getline(ss, part, ':');) {
    if (!part.empty()) embeddings.push_back(part);
  }
  TempDir tmp("accept_directional");
  nlohmann::ordered_json cfg{{"task", "lemmatizer-separate"},
                             {"seed", 1},
                             {"epochs", kDirectionalEpochs},
                             {"data", {{"train", train_path}, {"dev", dev_path}}},
                             {"embeddings", embeddings},
                             {"output_dir", tmp / "model"}};
  write_json(tmp / "config.json", cfg);
  const auto r = run_cli("train --quiet --config " + q(tmp / "config.json"));
  if (r.code != 0) return fail(Detail() << cli_failure("train", r));
  const Corpus train = load_conllu(train_path), dev = load_conllu(dev_path);
  const auto model = load_model(tmp / "model");
  const double trained =
      evaluate(dev, apply_predictions(dev, predict_corpus(model, dev, MeaningSource::from_files(embeddings))))
          .lemma_accuracy;
  const double copy =
      evaluate(dev, apply_predictions(dev, baseline_predictions(BaselineKind::copy, train, dev))).lemma_accuracy;
  const double strip =
      evaluate(dev, apply_predictions(dev, baseline_predictions(BaselineKind::suffix_strip, train, dev)))
          .lemma_accuracy;
  Detail d;
  d << "IMST dev lemma acc: model " << trained << ", copy " << copy << ", suffix-strip " << strip;
  return trained > copy && trained > strip ? pass(d) : fail(d);
}

}  // namespace

int main() {
  struct Check {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Check> checks{
      {"gradient_integrity", gradient_integrity},
      {"memorization", memorization},
      {"metric_oracle", metric_oracle},
      {"metric_oracle_full_imst", metric_oracle_full},
      {"levenshtein_properties", levenshtein_properties},
      {"determinism", determinism},
      {"data_fidelity", data_fidelity_sample},
      {"data_fidelity_full_imst_pud", data_fidelity_full},
      {"pipeline_integrity", pipeline_integrity},
      {"directional_vs_baselines", directional_baselines},
  };
  int failed = 0;
  for (const auto& c : checks) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("threw: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "NOT RUN";
    std::cout << tag << " " << c.name << ": " << o.detail << std::endl;
    failed += o.status == Status::fail;
  }
  return failed == 0 ? 0 : 1;
}
