#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "reasoner/decoder.hpp"
#include "reasoner/encoder.hpp"

// Synthetic abductive benchmark. Each example is a window of a latent
// storyline of event archetypes (optionally interleaved with unrelated
// distractors); the hidden event is always recoverable from any non-distractor
// premise and its signed offset to the hidden slot.
namespace reasoner::synth {

struct GrammarConfig {
  std::size_t vocab_size = 200;
  std::size_t feature_width = 16;
  std::size_t stories = 6;
  std::size_t story_length = 8;
  std::size_t distractors = 6;
  std::size_t actors = 4;
  std::size_t template_min = 5;  // words per sentence, actor included
  std::size_t template_max = 12;
  double noise = 0.1;
  double distractor_rate = 0.2;
  std::size_t min_events = 3;
  std::size_t max_events = 6;
  std::uint64_t seed = 1;

  void validate() const {
    if (min_events < 2 || min_events > max_events) throw ConfigError("event range must satisfy 2 <= min <= max");
    if (template_min < 2 || template_min > template_max) throw ConfigError("template length range invalid");
    if (stories == 0 || story_length == 0 || actors == 0) throw ConfigError("grammar needs stories, story length and actors");
    if (vocab_size < 3 + actors + 1) throw ConfigError("vocabulary too small for the grammar");
    if (distractor_rate < 0.0 || distractor_rate > 1.0) throw ConfigError("distractor rate outside [0, 1]");
    if (noise < 0.0) throw ConfigError("noise scale must be non-negative");
  }
};

enum class Link { Cause, Effect };

struct Transition {
  std::size_t from;
  std::size_t to;
  Link link;
};

struct Archetype {
  std::vector<double> base;          // feature_width
  std::vector<std::size_t> words;    // template without the actor
  std::size_t actor_slot = 0;        // insertion point of the actor word
  bool distractor = false;
  std::size_t story = 0;             // meaningful when !distractor
  std::size_t step = 0;
};

struct CausalGrammar {
  GrammarConfig config;
  std::vector<Archetype> archetypes;
  std::vector<std::vector<std::size_t>> stories;  // archetype ids in causal order
  std::vector<Transition> transitions;
  std::vector<std::size_t> actor_tokens;
  std::vector<std::vector<double>> actor_features;

  static CausalGrammar build(const GrammarConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    CausalGrammar g;
    g.config = cfg;
    std::normal_distribution<double> normal(0.0, 1.0);
    auto random_vector = [&](double scale) {
      std::vector<double> v(cfg.feature_width);
      for (auto& x : v) x = scale * normal(rng);
      return v;
    };
    const std::size_t first_word = 3;
    for (std::size_t a = 0; a < cfg.actors; ++a) {
      g.actor_tokens.push_back(first_word + a);
      g.actor_features.push_back(random_vector(0.5));
    }
    const std::size_t word_lo = first_word + cfg.actors;
    std::uniform_int_distribution<std::size_t> word(word_lo, cfg.vocab_size - 1);
    std::uniform_int_distribution<std::size_t> length(cfg.template_min, cfg.template_max);
    auto make = [&](bool distractor, std::size_t story, std::size_t step) {
      Archetype a;
      a.base = random_vector(1.0);
      const std::size_t n = length(rng) - 1;
      for (std::size_t i = 0; i < n; ++i) a.words.push_back(word(rng));
      a.actor_slot = std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(n, 2))(rng);
      a.distractor = distractor;
      a.story = story;
      a.step = step;
      return a;
    };
    std::bernoulli_distribution coin(0.5);
    for (std::size_t s = 0; s < cfg.stories; ++s) {
      std::vector<std::size_t> ids;
      for (std::size_t t = 0; t < cfg.story_length; ++t) {
        ids.push_back(g.archetypes.size());
        g.archetypes.push_back(make(false, s, t));
        if (t > 0) g.transitions.push_back({ids[t - 1], ids[t], coin(rng) ? Link::Cause : Link::Effect});
      }
      g.stories.push_back(std::move(ids));
    }
    for (std::size_t i = 0; i < cfg.distractors; ++i) g.archetypes.push_back(make(true, 0, 0));
    return g;
  }

  std::vector<std::size_t> sentence(std::size_t archetype, std::size_t actor) const {
    const auto& a = archetypes.at(archetype);
    std::vector<std::size_t> s(a.words.begin(), a.words.begin() + static_cast<std::ptrdiff_t>(a.actor_slot));
    s.push_back(actor_tokens.at(actor));
    s.insert(s.end(), a.words.begin() + static_cast<std::ptrdiff_t>(a.actor_slot), a.words.end());
    s.push_back(Vocabulary::kEos);
    return s;
  }

  std::vector<std::size_t> distractor_ids() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < archetypes.size(); ++i)
      if (archetypes[i].distractor) out.push_back(i);
    return out;
  }
};

// Hidden generative state; for oracles and split bookkeeping only.
struct LatentChain {
  std::size_t story = 0;
  std::size_t offset = 0;
  std::size_t actor = 0;
  std::vector<std::size_t> archetypes;
  std::vector<bool> distractor;

  bool operator==(const LatentChain&) const = default;

  // FNV-1a over the chain identity (explanation index excluded).
  std::uint64_t key() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    };
    mix(actor);
    mix(archetypes.size());
    for (auto a : archetypes) mix(a);
    return h;
  }
};

struct Example {
  std::size_t feature_width = 0;
  std::vector<double> features;  // [events × feature_width], row-major
  std::vector<std::vector<std::size_t>> sentences;
  std::size_t explanation = 0;   // 0-based
  std::optional<LatentChain> latent;

  std::size_t events() const { return sentences.size(); }

  bool operator==(const Example&) const = default;

  Tensor feature_tensor() const { return Tensor({events(), feature_width}, features); }
};

inline Example generate_example(const CausalGrammar& g, Rng& rng, std::size_t events) {
  const auto& cfg = g.config;
  if (events < 2 || events > cfg.max_events) {
    throw GenerationError("event count " + std::to_string(events) + " outside [2, " + std::to_string(cfg.max_events) + "]");
  }
  if (events > cfg.story_length) {
    throw GenerationError("no chain of " + std::to_string(events) + " events: stories have length " +
                          std::to_string(cfg.story_length));
  }
  LatentChain chain;
  chain.story = std::uniform_int_distribution<std::size_t>(0, cfg.stories - 1)(rng);
  chain.offset = std::uniform_int_distribution<std::size_t>(0, cfg.story_length - events)(rng);
  chain.actor = std::uniform_int_distribution<std::size_t>(0, cfg.actors - 1)(rng);
  Example ex;
  ex.explanation = std::uniform_int_distribution<std::size_t>(0, events - 1)(rng);
  for (std::size_t i = 0; i < events; ++i) chain.archetypes.push_back(g.stories[chain.story][chain.offset + i]);
  chain.distractor.assign(events, false);
  const auto distractors = g.distractor_ids();
  if (!distractors.empty()) {
    std::bernoulli_distribution replace(cfg.distractor_rate);
    std::uniform_int_distribution<std::size_t> pick(0, distractors.size() - 1);
    std::vector<std::size_t> premises;
    for (std::size_t i = 0; i < events; ++i) {
      if (i == ex.explanation) continue;
      premises.push_back(i);
      if (replace(rng)) {
        chain.distractor[i] = true;
        chain.archetypes[i] = distractors[pick(rng)];
      }
    }
    // Keep at least one informative premise.
    if (std::all_of(premises.begin(), premises.end(), [&](std::size_t i) { return chain.distractor[i]; })) {
      const std::size_t keep = premises[std::uniform_int_distribution<std::size_t>(0, premises.size() - 1)(rng)];
      chain.distractor[keep] = false;
      chain.archetypes[keep] = g.stories[chain.story][chain.offset + keep];
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  ex.feature_width = cfg.feature_width;
  ex.features.reserve(events * cfg.feature_width);
  for (std::size_t i = 0; i < events; ++i) {
    const auto& base = g.archetypes[chain.archetypes[i]].base;
    for (std::size_t j = 0; j < cfg.feature_width; ++j) {
      double v = base[j] + g.actor_features[chain.actor][j];
      if (cfg.noise > 0.0) v += cfg.noise * noise(rng);
      ex.features.push_back(v);
    }
    ex.sentences.push_back(g.sentence(chain.archetypes[i], chain.actor));
  }
  ex.latent = std::move(chain);
  return ex;
}

// Model input: explanation row zeroed, everything else bit-identical.
inline MaskedEventSequence mask_explanation(const Example& ex) {
  if (ex.explanation >= ex.events()) throw ContractError("explanation index outside the example");
  std::vector<double> f = ex.features;
  std::fill_n(f.begin() + static_cast<std::ptrdiff_t>(ex.explanation * ex.feature_width), ex.feature_width, 0.0);
  return {Tensor({ex.events(), ex.feature_width}, std::move(f)), ex.explanation};
}

// Rule-based recovery of the hidden sentence from premise archetypes only.
inline std::vector<std::size_t> infer_hidden_sentence(const CausalGrammar& g, const Example& ex) {
  if (!ex.latent) throw ContractError("example carries no latent chain");
  const auto& chain = *ex.latent;
  for (std::size_t i = 0; i < ex.events(); ++i) {
    if (i == ex.explanation) continue;
    const auto& a = g.archetypes[chain.archetypes[i]];
    if (a.distractor) continue;
    const auto step = static_cast<std::ptrdiff_t>(a.step) + static_cast<std::ptrdiff_t>(ex.explanation) -
                      static_cast<std::ptrdiff_t>(i);
    if (step < 0 || step >= static_cast<std::ptrdiff_t>(g.stories[a.story].size())) continue;
    return g.sentence(g.stories[a.story][static_cast<std::size_t>(step)], chain.actor);
  }
  throw GenerationError("hidden event is not inferable from the premises");
}

// ---- datasets -------------------------------------------------------------

struct Splits {
  std::vector<Example> train, val, test;
};

struct SplitSizes {
  std::size_t train = 256, val = 32, test = 64;
};

// Split assignment is a function of the latent chain alone, so a chain never
// lands in two splits.
inline int split_of(const LatentChain& chain, const SplitSizes& sizes) {
  const double total = static_cast<double>(sizes.train + sizes.val + sizes.test);
  const double u = static_cast<double>(chain.key() % 1000003ULL) / 1000003.0;
  if (u < static_cast<double>(sizes.train) / total) return 0;
  if (u < static_cast<double>(sizes.train + sizes.val) / total) return 1;
  return 2;
}

inline Splits generate_splits(const CausalGrammar& g, const SplitSizes& sizes, std::uint64_t seed) {
  Rng rng(seed);
  Splits out;
  std::uniform_int_distribution<std::size_t> count(g.config.min_events, g.config.max_events);
  const std::size_t wanted = sizes.train + sizes.val + sizes.test;
  std::size_t attempts = 0;
  while (out.train.size() + out.val.size() + out.test.size() < wanted) {
    if (++attempts > 200 * wanted + 1000) throw GenerationError("grammar too small to fill the requested splits");
    Example ex = generate_example(g, rng, count(rng));
    switch (split_of(*ex.latent, sizes)) {
      case 0: if (out.train.size() < sizes.train) out.train.push_back(std::move(ex)); break;
      case 1: if (out.val.size() < sizes.val) out.val.push_back(std::move(ex)); break;
      default: if (out.test.size() < sizes.test) out.test.push_back(std::move(ex)); break;
    }
  }
  return out;
}

inline constexpr const char* kDatasetFormat = "reasoner-events";
inline constexpr int kDatasetVersion = 1;

inline nlohmann::json to_json(const Example& ex, std::size_t id) {
  nlohmann::json rec;
  rec["id"] = id;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < ex.events(); ++i) {
    rows.push_back(std::vector<double>(ex.features.begin() + static_cast<std::ptrdiff_t>(i * ex.feature_width),
                                       ex.features.begin() + static_cast<std::ptrdiff_t>((i + 1) * ex.feature_width)));
  }
  rec["features"] = std::move(rows);
  rec["sentences"] = ex.sentences;
  rec["explanation"] = ex.explanation;
  if (ex.latent) {
    rec["latent"] = {{"story", ex.latent->story},
                     {"offset", ex.latent->offset},
                     {"actor", ex.latent->actor},
                     {"archetypes", ex.latent->archetypes},
                     {"distractor", ex.latent->distractor}};
  }
  return rec;
}

inline Example example_from_json(const nlohmann::json& rec, std::size_t line) {
  try {
    Example ex;
    const auto& rows = rec.at("features");
    if (!rows.is_array() || rows.empty()) throw ParseError("features must be a non-empty array of rows", line);
    ex.feature_width = rows.front().size();
    if (ex.feature_width == 0) throw ParseError("feature rows must be non-empty", line);
    for (const auto& r : rows) {
      if (r.size() != ex.feature_width) throw ParseError("ragged feature rows", line);
      for (const auto& v : r) ex.features.push_back(v.get<double>());
    }
    ex.sentences = rec.at("sentences").get<std::vector<std::vector<std::size_t>>>();
    if (ex.sentences.size() != rows.size()) throw ParseError("one sentence per event required", line);
    ex.explanation = rec.at("explanation").get<std::size_t>();
    if (ex.explanation >= ex.sentences.size()) throw ParseError("explanation index outside the events", line);
    if (rec.contains("latent")) {
      const auto& l = rec["latent"];
      LatentChain c;
      c.story = l.at("story").get<std::size_t>();
      c.offset = l.at("offset").get<std::size_t>();
      c.actor = l.at("actor").get<std::size_t>();
      c.archetypes = l.at("archetypes").get<std::vector<std::size_t>>();
      c.distractor = l.at("distractor").get<std::vector<bool>>();
      ex.latent = std::move(c);
    }
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line);
  }
}

// Line-delimited JSON: a versioned header line, then one example per line.
inline void write_dataset(const std::vector<Example>& examples, std::ostream& os) {
  nlohmann::json header{{"format", kDatasetFormat}, {"version", kDatasetVersion}, {"count", examples.size()}};
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < examples.size(); ++i) os << to_json(examples[i], i).dump() << '\n';
}

inline void write_dataset(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_dataset(examples, os);
  if (!os) throw Error("failed writing " + path);
}

inline std::vector<Example> read_dataset(std::istream& is) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw ParseError("missing header line", lineno);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed header: ") + e.what(), lineno);
  }
  if (!header.is_object() || header.value("format", "") != kDatasetFormat) {
    throw ParseError("not a reasoner-events dataset", lineno);
  }
  if (header.value("version", -1) != kDatasetVersion) {
    throw FormatVersionError("dataset version " + header.value("version", nlohmann::json(nullptr)).dump() +
                             " is not supported (expected " + std::to_string(kDatasetVersion) + ")");
  }
  std::vector<Example> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    out.push_back(example_from_json(rec, lineno));
  }
  return out;
}

inline std::vector<Example> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_dataset(is);
}

struct DatasetStats {
  std::map<std::size_t, std::size_t> event_counts;
  std::map<std::size_t, std::size_t> sentence_lengths;  // words, EOS excluded
  std::size_t examples = 0;
  double mean_events = 0.0;
  double mean_length = 0.0;
};

inline DatasetStats dataset_stats(const std::vector<Example>& examples) {
  DatasetStats s;
  std::size_t sentences = 0, words = 0, events = 0;
  for (const auto& ex : examples) {
    ++s.examples;
    ++s.event_counts[ex.events()];
    events += ex.events();
    for (const auto& sent : ex.sentences) {
      const std::size_t len = sent.size() - (!sent.empty() && sent.back() == Vocabulary::kEos ? 1 : 0);
      ++s.sentence_lengths[len];
      words += len;
      ++sentences;
    }
  }
  if (s.examples) s.mean_events = static_cast<double>(events) / static_cast<double>(s.examples);
  if (sentences) s.mean_length = static_cast<double>(words) / static_cast<double>(sentences);
  return s;
}

}  // namespace reasoner::synth
