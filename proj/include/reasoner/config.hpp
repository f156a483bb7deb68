#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <string>

#include "reasoner/training.hpp"

// Run configuration: JSON file with a fixed key set, then command-line
// overrides. Unknown keys are rejected.
namespace reasoner {

using nlohmann::json;

struct AblationConfig {
  std::size_t seeds = 5;
  std::size_t steps = 600;
  std::vector<std::size_t> k_sweep{0, 1, 2, 3, 4, 5};
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  synth::GrammarConfig grammar;
  synth::SplitSizes splits;
  std::uint64_t data_seed = 7;
  std::string data_dir = "data";   // train.jsonl / val.jsonl / test.jsonl
  std::string out_dir = "run";
  std::string checkpoint;          // resume/eval source; empty = none
  std::string eval_split = "test";
  bool plain_cider = false;
  std::size_t log_every = 10;
  AblationConfig ablate;

  void validate() const {
    model.validate();
    train.validate();
    grammar.validate();
    if (grammar.feature_width != model.input_width)
      throw ConfigError("grammar.feature_width (" + std::to_string(grammar.feature_width) + ") must equal model.input_width (" +
                        std::to_string(model.input_width) + ")");
    if (grammar.vocab_size != model.vocab_size)
      throw ConfigError("grammar.vocab_size must equal model.vocab_size");
    if (grammar.max_events > model.max_events) throw ConfigError("grammar.max_events exceeds model.max_events");
    if (grammar.template_max + 1 > model.max_len) throw ConfigError("sentences (template_max + EOS) exceed model.max_len");
    if (eval_split != "train" && eval_split != "val" && eval_split != "test")
      throw ConfigError("eval_split must be train, val or test");
    if (ablate.seeds == 0) throw ConfigError("ablate.seeds must be positive");
  }
};

inline const char* to_string(ExplanationMask m) { return m == ExplanationMask::Hard ? "hard" : "soft"; }

inline ExplanationMask explanation_mask_from_string(const std::string& s) {
  if (s == "hard") return ExplanationMask::Hard;
  if (s == "soft") return ExplanationMask::Soft;
  throw ConfigError("unknown mask mode '" + s + "'");
}

namespace detail {

// Reads members of one JSON object and rejects anything it did not consume.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const ModelConfig& c) {
  return {{"input_width", c.input_width}, {"hidden", c.hidden}, {"heads", c.heads},
          {"encoder_blocks", c.encoder_blocks}, {"decoder_blocks", c.decoder_blocks}, {"ffn_width", c.ffn_width},
          {"vocab_size", c.vocab_size}, {"max_events", c.max_events}, {"max_len", c.max_len},
          {"buckets", c.buckets}, {"cascade", c.cascade}, {"projection_width", c.projection_width},
          {"position_mode", to_string(c.position_mode)}, {"mask", to_string(c.mask)},
          {"confidence_bias", c.confidence_bias}};
}

inline void from_json_strict(const json& j, ModelConfig& c) {
  detail::StrictObject o(j, "model");
  o.get("input_width", c.input_width);
  o.get("hidden", c.hidden);
  o.get("heads", c.heads);
  o.get("encoder_blocks", c.encoder_blocks);
  o.get("decoder_blocks", c.decoder_blocks);
  o.get("ffn_width", c.ffn_width);
  o.get("vocab_size", c.vocab_size);
  o.get("max_events", c.max_events);
  o.get("max_len", c.max_len);
  o.get("buckets", c.buckets);
  o.get("cascade", c.cascade);
  o.get("projection_width", c.projection_width);
  std::string s = to_string(c.position_mode);
  o.get("position_mode", s);
  c.position_mode = position_mode_from_string(s);
  s = to_string(c.mask);
  o.get("mask", s);
  c.mask = explanation_mask_from_string(s);
  o.get("confidence_bias", c.confidence_bias);
  o.finish();
}

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon},
          {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm}, {"steps", c.steps},
          {"batch_size", c.batch_size}, {"aux_weight", c.aux_weight}, {"momentum", c.momentum},
          {"sampling_max", c.sampling_max}, {"sampling_warmup", c.sampling_warmup}, {"seed", c.seed}};
}

inline void from_json_strict(const json& j, TrainConfig& c) {
  detail::StrictObject o(j, "train");
  o.get("learning_rate", c.learning_rate);
  o.get("beta1", c.beta1);
  o.get("beta2", c.beta2);
  o.get("epsilon", c.epsilon);
  o.get("weight_decay", c.weight_decay);
  o.get("clip_norm", c.clip_norm);
  o.get("steps", c.steps);
  o.get("batch_size", c.batch_size);
  o.get("aux_weight", c.aux_weight);
  o.get("momentum", c.momentum);
  o.get("sampling_max", c.sampling_max);
  o.get("sampling_warmup", c.sampling_warmup);
  o.get("seed", c.seed);
  o.finish();
}

inline json to_json(const synth::GrammarConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"feature_width", c.feature_width}, {"stories", c.stories},
          {"story_length", c.story_length}, {"distractors", c.distractors}, {"actors", c.actors},
          {"template_min", c.template_min}, {"template_max", c.template_max}, {"noise", c.noise},
          {"distractor_rate", c.distractor_rate}, {"min_events", c.min_events}, {"max_events", c.max_events},
          {"seed", c.seed}};
}

inline void from_json_strict(const json& j, synth::GrammarConfig& c) {
  detail::StrictObject o(j, "grammar");
  o.get("vocab_size", c.vocab_size);
  o.get("feature_width", c.feature_width);
  o.get("stories", c.stories);
  o.get("story_length", c.story_length);
  o.get("distractors", c.distractors);
  o.get("actors", c.actors);
  o.get("template_min", c.template_min);
  o.get("template_max", c.template_max);
  o.get("noise", c.noise);
  o.get("distractor_rate", c.distractor_rate);
  o.get("min_events", c.min_events);
  o.get("max_events", c.max_events);
  o.get("seed", c.seed);
  o.finish();
}

inline json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"grammar", to_json(c.grammar)},
          {"splits", {{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}}},
          {"data_seed", c.data_seed},
          {"data_dir", c.data_dir},
          {"out_dir", c.out_dir},
          {"checkpoint", c.checkpoint},
          {"eval_split", c.eval_split},
          {"plain_cider", c.plain_cider},
          {"log_every", c.log_every},
          {"ablate", {{"seeds", c.ablate.seeds}, {"steps", c.ablate.steps}, {"k_sweep", c.ablate.k_sweep}}}};
}

// Missing keys keep their current value, so a file may be partial.
inline void from_json_strict(const json& j, RunConfig& c) {
  detail::StrictObject o(j, "config");
  if (auto* m = o.child("model")) from_json_strict(*m, c.model);
  if (auto* t = o.child("train")) from_json_strict(*t, c.train);
  if (auto* g = o.child("grammar")) from_json_strict(*g, c.grammar);
  if (auto* s = o.child("splits")) {
    detail::StrictObject so(*s, "splits");
    so.get("train", c.splits.train);
    so.get("val", c.splits.val);
    so.get("test", c.splits.test);
    so.finish();
  }
  o.get("data_seed", c.data_seed);
  o.get("data_dir", c.data_dir);
  o.get("out_dir", c.out_dir);
  o.get("checkpoint", c.checkpoint);
  o.get("eval_split", c.eval_split);
  o.get("plain_cider", c.plain_cider);
  o.get("log_every", c.log_every);
  if (auto* a = o.child("ablate")) {
    detail::StrictObject ao(*a, "ablate");
    ao.get("seeds", c.ablate.seeds);
    ao.get("steps", c.ablate.steps);
    ao.get("k_sweep", c.ablate.k_sweep);
    ao.finish();
  }
  o.finish();
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  RunConfig c;
  from_json_strict(j, c);
  return c;
}

// Sets one dotted key, e.g. "model.hidden=32" or "train.steps=50". The
// value is parsed as JSON, falling back to a bare string.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch = json::object();
  json* cur = &patch;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + key + "'");
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      break;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
  from_json_strict(patch, c);
}

}  // namespace reasoner
