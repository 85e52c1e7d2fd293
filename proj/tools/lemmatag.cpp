// lemmatag: train / predict / evaluate / inspect / baseline.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 data error
// (unreadable, malformed or misaligned input), 3 numeric failure during
// training, 4 internal error.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lemmatag/baselines.hpp"
#include "lemmatag/metrics.hpp"
#include "lemmatag/trainer.hpp"
#include "lemmatag/version.hpp"

namespace fs = std::filesystem;
using namespace lemmatag;

namespace {

// Held for the lifetime of a train command; a second process targeting the
// same output directory fails instead of interleaving writes.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw ConfigError("output directory '" + dir.string() + "' is locked by another run (remove " + path_.string() +
                        " if no run is active)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::string& path) { return "fnv1a64:" + hex64(nn::fnv1a64(read_text_file(path))); }

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

TrainingConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed,
                              const std::vector<std::string>& overrides) {
  Json j = load_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  return config_from_json(j, fs::absolute(path).parent_path());
}

Json input_hashes(const TrainingConfig& c) {
  Json h = Json::object();
  auto add = [&](const std::string& p) {
    if (!p.empty() && !p.starts_with("pseudo:") && !h.contains(p)) h[p] = file_hash(p);
  };
  for (const auto& p : {c.data.train, c.data.dev, c.data.test}) add(p);
  for (const auto& p : c.embeddings) add(p);
  for (const auto& p : {c.tag_predictions.train, c.tag_predictions.dev, c.tag_predictions.test}) add(p);
  if (!c.tagger_checkpoint.empty()) add((fs::path(c.tagger_checkpoint) / ModelFiles::params).string());
  return h;
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::vector<std::string>& overrides, bool quiet) {
  const TrainingConfig c = resolve_config(config_path, seed, overrides);
  validate_config(c);
  OutputLock lock(c.output_dir);
  const Json hashes = input_hashes(c);

  const auto started = std::chrono::steady_clock::now();
  Json manifest{{"toolkit", kToolkitName},
                {"version", kVersion},
                {"seed", c.seed},
                {"config", config_to_json(c)},
                {"config_file", fs::absolute(config_path).string()},
                {"overrides", overrides},
                {"input_hashes", hashes}};
  auto finish = [&](const std::string& status, const std::vector<double>& epoch_seconds) {
    const fs::path dir(c.output_dir);
    Json artifacts{{"checkpoint_dir", dir.string()},
                   {"model", (dir / ModelFiles::spec).string()},
                   {"params", (dir / ModelFiles::params).string()},
                   {"chars_vocab", (dir / ModelFiles::chars).string()},
                   {"report", (dir / report_file_name()).string()}};
    if (c.task != Task::lemmatizer_separate) artifacts["tags_vocab"] = (dir / ModelFiles::tags).string();
    if (fs::exists(dir / "tags")) artifacts["tag_predictions_dir"] = (dir / "tags").string();
    manifest["artifacts"] = artifacts;
    manifest["status"] = status;
    manifest["timings"] = {
        {"total_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()},
        {"epoch_seconds", epoch_seconds}};
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  };

  TrainResult result;
  try {
    result = run_training(c, quiet ? nullptr : &std::cout);
  } catch (const NumericError&) {
    finish("numeric_error", {});
    throw;
  }
  finish("ok", result.epoch_seconds);
  const auto& r = result.report;
  std::cout << "stopped: " << r.stop_reason << ", best epoch " << r.best_epoch << ", dev " << r.metric << " "
            << r.best_dev_metric << "\ncheckpoint: " << result.checkpoint_dir.string() << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& output,
                const std::string& task_name, const std::vector<std::string>& embeddings, const std::string& tags,
                std::size_t batch_size) {
  const LoadedModel model = load_model(checkpoint);
  if (!task_name.empty()) {
    const Task wanted = parse_task(task_name);
    if (wanted != model.spec().task) {
      throw DataError("checkpoint '" + checkpoint + "' holds a " + std::string(to_string(model.spec().task)) +
                      ", not a " + task_name);
    }
  }
  if (model.spec().uses_tag_input() && tags.empty()) {
    throw ConfigError("a lemmatizer-sequenced checkpoint needs --tags (tagger output for the input file)");
  }
  if (!model.spec().uses_tag_input() && !tags.empty()) {
    throw ConfigError("--tags is only used with a lemmatizer-sequenced checkpoint");
  }
  if (batch_size == 0) throw ConfigError("--batch-size must be positive");
  const MeaningSource meaning = embeddings.empty()
                                    ? MeaningSource::pseudo(model.spec().meaning_dim)
                                    : MeaningSource::from_files(embeddings);
  const Corpus corpus = load_conllu(input, Split::test);
  if (tags.empty()) {
    write_file_atomic(output, write_conllu(corpus, predict_corpus(model, corpus, meaning, nullptr, batch_size)));
    return 0;
  }
  // Sequenced: lemmas go onto the tagger's file so the output carries the
  // pipeline's tags, not whatever the input had.
  const Corpus tagged = load_conllu(tags, Split::test);
  const auto tag_inputs = tag_inputs_from(tagged, corpus);
  write_file_atomic(output, write_conllu(tagged, predict_corpus(model, corpus, meaning, &tag_inputs, batch_size)));
  return 0;
}

int cmd_evaluate(const std::string& gold_path, const std::string& pred_path, const std::string& compare, bool json,
                 bool csv, const EvalOptions& opt) {
  std::optional<Comparison> cmp;
  std::optional<std::pair<Dataset, Variant>> target;
  if (!compare.empty()) target = parse_comparison(compare);
  if (csv && !target) throw ConfigError("--csv needs --compare dataset:variant");
  const EvalReport r = evaluate(load_conllu(gold_path, Split::test), load_conllu(pred_path, Split::test), opt);
  if (target) cmp = compare_to_published(r, target->first, target->second);
  if (json) {
    Json j = report_to_json(r);
    if (cmp) {
      Json rows = Json::array();
      for (const auto& row : cmp->rows) {
        rows.push_back({{"model", std::string(row.model)},
                        {"lemma_accuracy", row.lemma_accuracy},
                        {"mean_levenshtein", row.mean_levenshtein},
                        {"morph_accuracy", row.morph_accuracy},
                        {"morph_f1", row.morph_f1}});
      }
      j["comparison"] = {{"selector", compare}, {"rows", rows}};
    }
    std::cout << j.dump(2) << "\n";
  } else if (csv) {
    std::cout << comparison_csv(*cmp);
  } else {
    std::cout << format_report(r);
    if (cmp) std::cout << "\n" << comparison_text(*cmp);
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint, const std::string& config_path) {
  if (checkpoint.empty() && config_path.empty()) throw ConfigError("inspect needs --checkpoint and/or --config");
  Json out = Json::object();
  if (!checkpoint.empty()) {
    const LoadedModel m = load_model(checkpoint);
    Json params = Json::array();
    for (const auto& p : m.model->params()) params.push_back({{"name", p.name}, {"shape", p.value.shape}});
    out["checkpoint"] = checkpoint;
    out["model"] = spec_to_json(m.spec());
    out["char_vocab_size"] = m.vocab.chars.size();
    out["tag_vocab_size"] = m.vocab.tags.size();
    out["parameter_count"] = m.model->params().num_scalars();
    out["parameters"] = params;
    const fs::path report = fs::path(checkpoint) / report_file_name();
    if (fs::exists(report)) {
      const Json r = Json::parse(read_text_file(report.string()));
      out["report"] = {{"metric", r["metric"]},
                       {"best_epoch", r["best_epoch"]},
                       {"best_dev_metric", r["best_dev_metric"]},
                       {"stop_reason", r["stop_reason"]},
                       {"epochs_run", r["epochs"].size()}};
    }
  }
  if (!config_path.empty()) out["config"] = config_to_json(resolve_config(config_path, std::nullopt, {}));
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_baseline(const std::string& kind_name, const std::string& train_path, const std::string& input,
                 const std::string& output) {
  const BaselineKind kind = parse_baseline_kind(kind_name);
  if (kind == BaselineKind::suffix_strip && train_path.empty()) throw ConfigError("suffix-strip needs --train");
  const Corpus train = train_path.empty() ? Corpus{} : load_conllu(train_path, Split::train);
  const Corpus corpus = load_conllu(input, Split::test);
  write_file_atomic(output, write_conllu(corpus, baseline_predictions(kind, train, corpus)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware Turkish lemmatizer and morphological tagger", kToolkitName};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a tagger or lemmatizer from a JSON config");
  train->add_option("--config", config_path, "Training config (JSON)")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--set", overrides, "Override a config key, e.g. --set dims.hidden=64")->take_all();
  train->add_flag("--quiet", quiet, "No per-epoch lines");

  std::string checkpoint, input, output, task, tags;
  std::vector<std::string> embeddings;
  std::size_t batch_size = 128;
  auto* predict = app.add_subcommand("predict", "Tag or lemmatize a CoNLL-U file");
  predict->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  predict->add_option("--input", input, "Input CoNLL-U")->required();
  predict->add_option("--output", output, "Output CoNLL-U")->required();
  predict->add_option("--task", task, "Expected task of the checkpoint");
  predict->add_option("--embeddings", embeddings, "CTXE file(s) or pseudo:<dim> (default: pseudo at the model dim)");
  predict->add_option("--tags", tags, "Tagger output for the input (lemmatizer-sequenced)");
  predict->add_option("--batch-size", batch_size, "Inference batch size");

  std::string gold, predicted, compare;
  bool json = false, csv = false;
  EvalOptions opt;
  auto* eval = app.add_subcommand("evaluate", "Score predictions against gold");
  eval->add_option("--gold", gold, "Gold CoNLL-U")->required();
  eval->add_option("--predicted", predicted, "Predicted CoNLL-U")->required();
  eval->add_option("--compare", compare, "Append published results, e.g. imst:sequenced");
  eval->add_flag("--json", json, "Print the report (with per-token errors) as JSON");
  eval->add_flag("--csv", csv, "Print the comparison table as CSV");
  eval->add_flag("--lowercase", opt.lowercase, "Turkish-aware lowercasing of lemmas before comparing");
  eval->add_flag("--compose", opt.compose, "Compose combining marks into Turkish letters before comparing");
  eval->add_flag("--macro-f1", opt.macro_f1, "Average F1 per token instead of micro-averaging");

  std::string inspect_checkpoint, inspect_config;
  auto* inspect = app.add_subcommand("inspect", "Show vocabulary sizes, parameter counts and config");
  inspect->add_option("--checkpoint", inspect_checkpoint, "Checkpoint directory");
  inspect->add_option("--config", inspect_config, "Training config to resolve and echo");

  std::string baseline_kind, baseline_train, baseline_input, baseline_output;
  auto* baseline = app.add_subcommand("baseline", "Lemmatize with the copy or suffix-strip reference");
  baseline->add_option("--kind", baseline_kind, "copy or suffix-strip")->required();
  baseline->add_option("--train", baseline_train, "Training CoNLL-U the suffix rules are learned from");
  baseline->add_option("--input", baseline_input, "Input CoNLL-U")->required();
  baseline->add_option("--output", baseline_output, "Output CoNLL-U")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config_path, seed, overrides, quiet);
    if (*predict) return cmd_predict(checkpoint, input, output, task, embeddings, tags, batch_size);
    if (*eval) return cmd_evaluate(gold, predicted, compare, json, csv, opt);
    if (*inspect) return cmd_inspect(inspect_checkpoint, inspect_config);
    if (*baseline) return cmd_baseline(baseline_kind, baseline_train, baseline_input, baseline_output);
  } catch (const ConfigError& e) {
    std::cerr << "lemmatag: config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "lemmatag: data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "lemmatag: numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "lemmatag: data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lemmatag: internal error: " << e.what() << "\n";
    return 4;
  }
  return 1;
}
