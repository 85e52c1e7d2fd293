#pragma once

// Training configuration, the teacher-forced training loop with best-dev
// checkpoint selection, and the sequenced (tagger -> lemmatizer) pipeline.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lemmatag/model.hpp"

namespace lemmatag {

using Json = nlohmann::ordered_json;

enum class TagSource { predicted, gold };

struct SplitPaths {
  std::string train, dev, test;
};

struct TrainingConfig {
  Task task = Task::tagger;
  std::uint64_t seed = 1;
  std::size_t epochs = 128;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t early_stop_patience = 16;
  double clip_norm = 5.0;
  std::optional<double> stop_at_dev_metric;  // stop once dev exact match (in %) reaches this
  ModelDims dims;
  SplitPaths data;
  std::vector<std::string> embeddings{"pseudo:64"};  // "pseudo:<dim>" or CTXE files
  // Sequenced lemmatizer only: tag inputs come from these tagger outputs, or
  // are produced by running the tagger checkpoint, or are the gold tags.
  SplitPaths tag_predictions;
  std::string tagger_checkpoint;
  TagSource tag_source = TagSource::predicted;
  std::string output_dir;
  std::size_t eval_batch_size = 128;
};

namespace config_detail {

inline const char* const kKeys[] = {"task",          "seed",           "epochs",          "batch_size",
                                    "learning_rate", "early_stop_patience", "clip_norm", "stop_at_dev_metric",
                                    "dims",          "data",           "embeddings",      "tag_predictions",
                                    "tagger_checkpoint", "sequenced_tag_source", "output_dir", "eval_batch_size"};

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || p.starts_with("pseudo:")) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? p : (base / path).lexically_normal().string();
}

inline SplitPaths splits_from(const Json& j, const char* key, const std::filesystem::path& base) {
  SplitPaths s;
  if (!j.is_object()) throw ConfigError(std::string("'") + key + "' must be an object with train/dev/test paths");
  for (auto& [k, v] : j.items()) {
    if (k != "train" && k != "dev" && k != "test") throw ConfigError(std::string("unknown key '") + key + "." + k + "'");
    if (!v.is_string()) throw ConfigError(std::string("'") + key + "." + k + "' must be a string");
  }
  if (j.contains("train")) s.train = resolve(j["train"].get<std::string>(), base);
  if (j.contains("dev")) s.dev = resolve(j["dev"].get<std::string>(), base);
  if (j.contains("test")) s.test = resolve(j["test"].get<std::string>(), base);
  return s;
}

inline Json splits_to_json(const SplitPaths& s) {
  Json j = Json::object();
  if (!s.train.empty()) j["train"] = s.train;
  if (!s.dev.empty()) j["dev"] = s.dev;
  if (!s.test.empty()) j["test"] = s.test;
  return j;
}

template <typename U>
U number(const Json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  if constexpr (std::is_integral_v<U>) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
    }
  }
  return v.get<U>();
}

}  // namespace config_detail

// Relative paths are resolved against base (normally the config file's
// directory).
inline TrainingConfig config_from_json(const Json& j, const std::filesystem::path& base = {}) {
  using namespace config_detail;
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (auto& [k, v] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* key) { return k == key; }) == std::end(kKeys)) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  TrainingConfig c;
  try {
    if (!j.contains("task")) throw ConfigError("config needs a 'task'");
    c.task = parse_task(j["task"].get<std::string>());
    if (j.contains("seed")) c.seed = number<std::uint64_t>(j, "seed");
    if (j.contains("epochs")) c.epochs = number<std::size_t>(j, "epochs");
    if (j.contains("batch_size")) c.batch_size = number<std::size_t>(j, "batch_size");
    if (j.contains("learning_rate")) c.learning_rate = number<double>(j, "learning_rate");
    if (j.contains("early_stop_patience")) c.early_stop_patience = number<std::size_t>(j, "early_stop_patience");
    if (j.contains("clip_norm")) c.clip_norm = number<double>(j, "clip_norm");
    if (j.contains("stop_at_dev_metric") && !j["stop_at_dev_metric"].is_null()) {
      c.stop_at_dev_metric = number<double>(j, "stop_at_dev_metric");
    }
    if (j.contains("eval_batch_size")) c.eval_batch_size = number<std::size_t>(j, "eval_batch_size");
    if (j.contains("dims")) {
      const auto& d = j["dims"];
      if (!d.is_object()) throw ConfigError("'dims' must be an object");
      for (auto& [k, v] : d.items()) {
        static const char* const dim_keys[] = {"char_embedding", "hidden",        "tag_embedding",
                                               "tag_hidden",     "fusion_layers", "state_handoff"};
        if (std::find_if(std::begin(dim_keys), std::end(dim_keys), [&](const char* key) { return k == key; }) ==
            std::end(dim_keys)) {
          throw ConfigError("unknown config key 'dims." + k + "'");
        }
      }
      from_json(d, c.dims);
    }
    if (j.contains("data")) c.data = splits_from(j["data"], "data", base);
    if (j.contains("embeddings")) {
      const auto& e = j["embeddings"];
      c.embeddings.clear();
      if (e.is_string()) {
        c.embeddings.push_back(resolve(e.get<std::string>(), base));
      } else if (e.is_array() && !e.empty()) {
        for (const auto& x : e) c.embeddings.push_back(resolve(x.get<std::string>(), base));
      } else {
        throw ConfigError("'embeddings' must be a string or a non-empty list of paths");
      }
    }
    if (j.contains("tag_predictions")) c.tag_predictions = splits_from(j["tag_predictions"], "tag_predictions", base);
    if (j.contains("tagger_checkpoint")) c.tagger_checkpoint = resolve(j["tagger_checkpoint"].get<std::string>(), base);
    if (j.contains("sequenced_tag_source")) {
      const auto s = j["sequenced_tag_source"].get<std::string>();
      if (s == "predicted") c.tag_source = TagSource::predicted;
      else if (s == "gold") c.tag_source = TagSource::gold;
      else throw ConfigError("'sequenced_tag_source' must be predicted or gold");
    }
    if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"].get<std::string>(), base);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline void validate_config(const TrainingConfig& c) {
  if (c.batch_size == 0) throw ConfigError("'batch_size' must be positive");
  if (c.eval_batch_size == 0) throw ConfigError("'eval_batch_size' must be positive");
  if (!(c.learning_rate > 0) || !std::isfinite(c.learning_rate)) throw ConfigError("'learning_rate' must be positive");
  if (!(c.clip_norm > 0)) throw ConfigError("'clip_norm' must be positive");
  if (c.early_stop_patience == 0) throw ConfigError("'early_stop_patience' must be positive");
  if (c.data.train.empty() || c.data.dev.empty()) throw ConfigError("'data.train' and 'data.dev' are required");
  if (c.output_dir.empty()) throw ConfigError("'output_dir' is required");
  if (c.embeddings.empty()) throw ConfigError("'embeddings' is required");
  if (c.task == Task::lemmatizer_sequenced && c.tag_source == TagSource::predicted) {
    const bool have_files = !c.tag_predictions.train.empty() && !c.tag_predictions.dev.empty();
    if (!have_files && c.tagger_checkpoint.empty()) {
      throw ConfigError("sequenced lemmatizer needs 'tag_predictions' (train and dev) or 'tagger_checkpoint'");
    }
  }
}

inline Json config_to_json(const TrainingConfig& c) {
  Json dims;
  to_json(dims, c.dims);
  Json j{{"task", std::string(to_string(c.task))},
         {"seed", c.seed},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"early_stop_patience", c.early_stop_patience},
         {"clip_norm", c.clip_norm},
         {"stop_at_dev_metric", c.stop_at_dev_metric ? Json(*c.stop_at_dev_metric) : Json(nullptr)},
         {"dims", dims},
         {"data", config_detail::splits_to_json(c.data)},
         {"embeddings", c.embeddings},
         {"eval_batch_size", c.eval_batch_size},
         {"output_dir", c.output_dir}};
  if (c.task == Task::lemmatizer_sequenced) {
    j["tag_predictions"] = config_detail::splits_to_json(c.tag_predictions);
    j["tagger_checkpoint"] = c.tagger_checkpoint;
    j["sequenced_tag_source"] = c.tag_source == TagSource::gold ? "gold" : "predicted";
  }
  return j;
}

// Applies a flat "a.b.c=value" override. The value is parsed as JSON when
// possible and taken as a string otherwise.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    start = dot + 1;
  }
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double dev_loss = 0;
  double dev_metric = 0;  // exact-match percentage
  std::size_t clipped_steps = 0;
};

struct TrainReport {
  Task task = Task::tagger;
  std::string metric;  // "lemma_accuracy" or "morph_accuracy"
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0: initialization (no epoch run)
  double best_dev_metric = 0;
  std::string stop_reason;  // "max_epochs", "early_stop", "target_reached", "numeric_error"
  std::size_t parameter_count = 0;
  std::size_t char_vocab = 0;
  std::size_t tag_vocab = 0;
  std::size_t train_examples = 0;
  std::size_t dev_examples = 0;
  std::string error;
};

inline Json report_to_json(const TrainReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"dev_loss", e.dev_loss},
                      {"dev_metric", e.dev_metric},
                      {"clipped_steps", e.clipped_steps}});
  }
  Json j{{"task", std::string(to_string(r.task))},
         {"metric", r.metric},
         {"best_epoch", r.best_epoch},
         {"best_dev_metric", r.best_dev_metric},
         {"stop_reason", r.stop_reason},
         {"parameter_count", r.parameter_count},
         {"char_vocab", r.char_vocab},
         {"tag_vocab", r.tag_vocab},
         {"train_examples", r.train_examples},
         {"dev_examples", r.dev_examples},
         {"epochs", epochs}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline std::string report_file_name() { return "report.json"; }

// Exact-match percentage of greedy outputs against gold lemmas or tags.
inline double exact_match(const Corpus& corpus, const ModelSpec& spec, const Vocabularies& vocab,
                          std::span<const Example> examples, std::span<const GreedyResult> results) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Token& tok = corpus.sentences[examples[i].sentence].tokens[examples[i].token];
    if (results[i].truncated) continue;
    if (spec.task == Task::tagger) {
      hits += decode_tags(vocab, results[i]) == canonical_tags(tok);
    } else {
      hits += decode_lemma(vocab, results[i]) == tok.lemma;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(examples.size());
}

inline MeaningSource meaning_from_config(const TrainingConfig& c) { return MeaningSource::from_files(c.embeddings); }

struct TrainingData {
  Corpus train, dev;
  Vocabularies vocab;
  ModelSpec spec;
  std::vector<Example> train_examples, dev_examples;
};

inline std::size_t longest_tag_sequence(const Corpus& corpus) {
  std::size_t n = 0;
  for (const auto& s : corpus.sentences) {
    for (const auto& t : s.tokens) n = std::max(n, canonical_tags(t).size());
  }
  return n;
}

// Tag inputs for one split of a sequenced lemmatizer.
inline std::vector<std::vector<TagSequence>> sequenced_inputs(const TrainingConfig& c, const Corpus& corpus,
                                                              const std::string& predictions_path) {
  if (c.tag_source == TagSource::gold) return gold_tag_sequences(corpus);
  if (predictions_path.empty()) {
    throw ConfigError("no tag predictions for split " + std::string(to_string(corpus.split)));
  }
  return tag_inputs_from(load_conllu(predictions_path, corpus.split), corpus);
}

inline TrainingData prepare_data(const TrainingConfig& c, const MeaningSource& meaning) {
  TrainingData d;
  d.train = load_conllu(c.data.train, Split::train);
  d.dev = load_conllu(c.data.dev, Split::dev);
  d.vocab.chars = build_char_vocab(d.train);
  d.spec.task = c.task;
  d.spec.dims = c.dims;
  d.spec.meaning_dim = meaning.dim();
  d.spec.char_vocab = static_cast<std::size_t>(d.vocab.chars.size());
  if (c.task == Task::tagger || c.task == Task::lemmatizer_sequenced) {
    d.vocab.tags = build_tag_vocab(d.train);
    d.spec.tag_vocab = static_cast<std::size_t>(d.vocab.tags.size());
  }
  if (c.task == Task::tagger) d.spec.max_tag_length = longest_tag_sequence(d.train);
  if (c.task == Task::lemmatizer_sequenced) {
    const auto train_tags = sequenced_inputs(c, d.train, c.tag_predictions.train);
    const auto dev_tags = sequenced_inputs(c, d.dev, c.tag_predictions.dev);
    d.train_examples = build_examples(d.train, d.spec, d.vocab, meaning, &train_tags);
    d.dev_examples = build_examples(d.dev, d.spec, d.vocab, meaning, &dev_tags);
  } else {
    d.train_examples = build_examples(d.train, d.spec, d.vocab, meaning);
    d.dev_examples = build_examples(d.dev, d.spec, d.vocab, meaning);
  }
  if (d.train_examples.empty()) throw DataError("training split '" + c.data.train + "' has no tokens");
  if (d.dev_examples.empty()) throw DataError("dev split '" + c.data.dev + "' has no tokens");
  return d;
}

struct TrainResult {
  TrainReport report;
  std::filesystem::path checkpoint_dir;
  std::vector<double> epoch_seconds;  // wall clock, kept out of the report
};

// Runs the training loop and writes the best checkpoint and report.json to
// config.output_dir. On a numeric failure the last good checkpoint stays on
// disk, the report records the failure and NumericError is rethrown.
inline TrainResult train(const TrainingConfig& c, std::ostream* log = nullptr) {
  validate_config(c);
  const MeaningSource meaning = meaning_from_config(c);
  const TrainingData data = prepare_data(c, meaning);
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);

  nn::SplitMix64 master(c.seed);
  const std::uint64_t init_seed = master.next();
  nn::SplitMix64 order_rng(master.next());

  Seq2SeqModel<float> model(data.spec, init_seed);
  nn::AdamState<float> adam(model.params());

  TrainReport report;
  report.task = c.task;
  report.metric = c.task == Task::tagger ? "morph_accuracy" : "lemma_accuracy";
  report.parameter_count = model.params().num_scalars();
  report.char_vocab = data.spec.char_vocab;
  report.tag_vocab = data.spec.tag_vocab;
  report.train_examples = data.train_examples.size();
  report.dev_examples = data.dev_examples.size();
  report.stop_reason = "max_epochs";

  auto write_report = [&] { write_file_atomic(dir / report_file_name(), report_to_json(report).dump(2) + "\n"); };
  save_model_description(dir, data.spec, data.vocab);
  save_params(dir, model.params());  // initialization until an epoch improves on it

  const bool with_tags = data.spec.uses_tag_input();
  std::vector<std::size_t> order(data.train_examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best_metric = -1.0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t since_improved = 0;
  std::vector<double> epoch_seconds;

  try {
    for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
      const auto started = std::chrono::steady_clock::now();
      nn::shuffle(order.begin(), order.end(), order_rng);
      EpochRecord rec;
      rec.epoch = epoch;
      double loss_sum = 0;
      for (const auto& batch : make_batches(std::span<const Example>(data.train_examples), order, c.batch_size,
                                            with_tags)) {
        model.params().zero_grad();
        nn::Tape<float> tape(true);
        const nn::Var loss = batch_loss(tape, model, batch);
        tape.backward(loss);
        rec.clipped_steps += nn::clip_global_norm(model.params(), c.clip_norm);
        nn::adam_step(model.params(), adam, c.learning_rate);
        loss_sum += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(batch.rows.size());
      }
      rec.train_loss = loss_sum / static_cast<double>(data.train_examples.size());
      rec.dev_loss = mean_loss(model, std::span<const Example>(data.dev_examples), c.eval_batch_size);
      const auto dev_pred = predict_examples(model, std::span<const Example>(data.dev_examples), c.eval_batch_size);
      rec.dev_metric = exact_match(data.dev, data.spec, data.vocab, data.dev_examples, dev_pred);
      report.epochs.push_back(rec);
      epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());

      if (rec.dev_metric > best_metric) {
        best_metric = rec.dev_metric;
        report.best_epoch = epoch;
        report.best_dev_metric = rec.dev_metric;
        save_params(dir, model.params());
      }
      if (log) {
        char line[200];
        std::snprintf(line, sizeof line, "epoch %zu train_loss %.4f dev_loss %.4f dev_%s %.2f%s\n", epoch,
                      rec.train_loss, rec.dev_loss, report.metric.c_str(), rec.dev_metric,
                      report.best_epoch == epoch ? " *" : "");
        *log << line << std::flush;
      }
      if (c.stop_at_dev_metric && rec.dev_metric >= *c.stop_at_dev_metric) {
        report.stop_reason = "target_reached";
        break;
      }
      if (rec.dev_loss < best_dev_loss) {
        best_dev_loss = rec.dev_loss;
        since_improved = 0;
      } else if (++since_improved >= c.early_stop_patience) {
        report.stop_reason = "early_stop";
        break;
      }
    }
  } catch (const NumericError& e) {
    report.stop_reason = "numeric_error";
    report.error = e.what();
    write_report();
    throw;
  }
  write_report();
  return {report, dir, epoch_seconds};
}

// Dev exact match of a saved checkpoint, recomputed from disk.
inline double evaluate_checkpoint(const std::filesystem::path& dir, const TrainingConfig& c) {
  const auto m = load_model(dir);
  const MeaningSource meaning = meaning_from_config(c);
  const Corpus dev = load_conllu(c.data.dev, Split::dev);
  std::vector<Example> examples;
  if (m.spec().uses_tag_input()) {
    const auto tags = sequenced_inputs(c, dev, c.tag_predictions.dev);
    examples = build_examples(dev, m.spec(), m.vocab, meaning, &tags);
  } else {
    examples = build_examples(dev, m.spec(), m.vocab, meaning);
  }
  const auto pred = predict_examples(*m.model, std::span<const Example>(examples), c.eval_batch_size);
  return exact_match(dev, m.spec(), m.vocab, examples, pred);
}

struct SequencedResult {
  TrainResult lemmatizer;
  SplitPaths tag_files;  // tagger predictions written under output_dir
};

// Tags train/dev(/test) with a trained tagger, writes the predictions as
// CoNLL-U under <output_dir>/tags/ and trains a sequenced lemmatizer on them.
// The tagger checkpoint is only read.
inline SequencedResult run_sequenced(const std::filesystem::path& tagger_dir, TrainingConfig c,
                                     std::ostream* log = nullptr) {
  if (c.task != Task::lemmatizer_sequenced) throw ConfigError("run_sequenced needs task lemmatizer-sequenced");
  c.tag_source = TagSource::predicted;
  c.tagger_checkpoint = tagger_dir.string();
  if (c.output_dir.empty()) throw ConfigError("'output_dir' is required");
  validate_config(c);
  const auto tagger = load_model(tagger_dir);
  if (tagger.spec().task != Task::tagger) {
    throw DataError("checkpoint '" + tagger_dir.string() + "' is a " + std::string(to_string(tagger.spec().task)) +
                    ", not a tagger");
  }
  const Corpus train_corpus = load_conllu(c.data.train, Split::train);
  if (!(tagger.vocab.tags == build_tag_vocab(train_corpus))) {
    throw DataError("tag vocabulary of tagger '" + tagger_dir.string() +
                    "' differs from the one built from the lemmatizer's training split");
  }
  const MeaningSource meaning = meaning_from_config(c);
  const std::filesystem::path tag_dir = std::filesystem::path(c.output_dir) / "tags";
  std::filesystem::create_directories(tag_dir);
  SequencedResult out;
  auto tag_split = [&](const std::string& path, Split split) -> std::string {
    if (path.empty()) return {};
    const Corpus corpus = split == Split::train ? train_corpus : load_conllu(path, split);
    const Predictions preds = predict_corpus(tagger, corpus, meaning, nullptr, c.eval_batch_size);
    const auto file = (tag_dir / (std::string(to_string(split)) + ".conllu")).string();
    write_file_atomic(file, write_conllu(corpus, preds));
    if (log) *log << "tagged " << to_string(split) << " -> " << file << "\n";
    return file;
  };
  out.tag_files.train = tag_split(c.data.train, Split::train);
  out.tag_files.dev = tag_split(c.data.dev, Split::dev);
  out.tag_files.test = tag_split(c.data.test, Split::test);
  c.tag_predictions = out.tag_files;
  out.lemmatizer = train(c, log);
  return out;
}

// Entry point used by the command line: a sequenced lemmatizer whose
// predicted tag inputs are not on disk yet is routed through run_sequenced.
inline TrainResult run_training(const TrainingConfig& c, std::ostream* log = nullptr) {
  const bool needs_tagging = c.task == Task::lemmatizer_sequenced && c.tag_source == TagSource::predicted &&
                             (c.tag_predictions.train.empty() || c.tag_predictions.dev.empty());
  if (needs_tagging) {
    validate_config(c);
    return run_sequenced(c.tagger_checkpoint, c, log).lemmatizer;
  }
  return train(c, log);
}

}  // namespace lemmatag
