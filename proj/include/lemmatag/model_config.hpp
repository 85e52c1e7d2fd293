#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lemmatag/errors.hpp"

namespace lemmatag {

enum class Task { tagger, lemmatizer_separate, lemmatizer_sequenced };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::tagger: return "tagger";
    case Task::lemmatizer_separate: return "lemmatizer-separate";
    case Task::lemmatizer_sequenced: return "lemmatizer-sequenced";
  }
  return "tagger";
}

inline Task parse_task(std::string_view s) {
  if (s == "tagger") return Task::tagger;
  if (s == "lemmatizer-separate") return Task::lemmatizer_separate;
  if (s == "lemmatizer-sequenced") return Task::lemmatizer_sequenced;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected tagger, lemmatizer-separate or lemmatizer-sequenced)");
}

inline bool is_lemmatizer(Task t) { return t != Task::tagger; }

// How recurrent state moves between the two decoder LSTMs.
//   b_to_a:      within a step LSTM-B starts from LSTM-A's new state; the
//                next step's LSTM-A starts from LSTM-B's new state.
//   independent: each LSTM keeps its own state chain.
enum class StateHandoff { b_to_a, independent };

inline std::string_view to_string(StateHandoff h) { return h == StateHandoff::b_to_a ? "b_to_a" : "independent"; }

inline StateHandoff parse_state_handoff(std::string_view s) {
  if (s == "b_to_a") return StateHandoff::b_to_a;
  if (s == "independent") return StateHandoff::independent;
  throw ConfigError("unknown state_handoff '" + std::string(s) + "' (expected b_to_a or independent)");
}

struct ModelDims {
  std::size_t char_embedding = 64;
  std::size_t hidden = 128;  // per direction; decoder width is 2 * hidden
  std::size_t tag_embedding = 32;
  std::size_t tag_hidden = 64;
  std::size_t fusion_layers = 1;
  StateHandoff state_handoff = StateHandoff::b_to_a;

  std::size_t decoder_dim() const { return 2 * hidden; }
};

// Everything needed to rebuild a model's parameter layout.
struct ModelSpec {
  Task task = Task::tagger;
  ModelDims dims;
  std::size_t meaning_dim = 0;
  std::size_t char_vocab = 0;
  std::size_t tag_vocab = 0;      // tagger output / sequenced tag input; 0 otherwise
  std::size_t max_tag_length = 0;  // longest training tag sequence (tagger)

  std::size_t output_vocab() const { return task == Task::tagger ? tag_vocab : char_vocab; }
  bool uses_tag_input() const { return task == Task::lemmatizer_sequenced; }
};

inline void to_json(nlohmann::ordered_json& j, const ModelDims& d) {
  j = nlohmann::ordered_json{{"char_embedding", d.char_embedding},
                             {"hidden", d.hidden},
                             {"tag_embedding", d.tag_embedding},
                             {"tag_hidden", d.tag_hidden},
                             {"fusion_layers", d.fusion_layers},
                             {"state_handoff", std::string(to_string(d.state_handoff))}};
}

inline void positive(const nlohmann::ordered_json& j, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() <= 0) {
    throw ConfigError(std::string("'") + key + "' must be a positive integer");
  }
  out = v.get<std::size_t>();
}

inline void from_json(const nlohmann::ordered_json& j, ModelDims& d) {
  positive(j, "char_embedding", d.char_embedding);
  positive(j, "hidden", d.hidden);
  positive(j, "tag_embedding", d.tag_embedding);
  positive(j, "tag_hidden", d.tag_hidden);
  positive(j, "fusion_layers", d.fusion_layers);
  if (j.contains("state_handoff")) d.state_handoff = parse_state_handoff(j.at("state_handoff").get<std::string>());
}

inline nlohmann::ordered_json spec_to_json(const ModelSpec& s) {
  nlohmann::ordered_json dims;
  to_json(dims, s.dims);
  return nlohmann::ordered_json{{"task", std::string(to_string(s.task))},
                                {"dims", dims},
                                {"meaning_dim", s.meaning_dim},
                                {"char_vocab", s.char_vocab},
                                {"tag_vocab", s.tag_vocab},
                                {"max_tag_length", s.max_tag_length}};
}

inline ModelSpec spec_from_json(const nlohmann::ordered_json& j) {
  try {
    ModelSpec s;
    s.task = parse_task(j.at("task").get<std::string>());
    from_json(j.at("dims"), s.dims);
    s.meaning_dim = j.at("meaning_dim").get<std::size_t>();
    s.char_vocab = j.at("char_vocab").get<std::size_t>();
    s.tag_vocab = j.at("tag_vocab").get<std::size_t>();
    s.max_tag_length = j.at("max_tag_length").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model description: ") + e.what());
  }
}

}  // namespace lemmatag
