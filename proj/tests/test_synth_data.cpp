#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "reasoner/experiment.hpp"

using namespace reasoner;
using namespace reasoner::synth;

namespace {

// Recovers the hidden sentence from premise sentences alone: identify each
// premise's archetype and actor by template match, then walk the transition
// graph by the premise's offset to the hidden slot.
std::optional<std::vector<std::size_t>> oracle_hidden_sentence(const CausalGrammar& g, const Example& ex) {
  for (std::size_t i = 0; i < ex.events(); ++i) {
    if (i == ex.explanation) continue;
    std::optional<std::size_t> arch, actor;
    for (std::size_t a = 0; a < g.archetypes.size() && !arch; ++a)
      for (std::size_t r = 0; r < g.actor_tokens.size(); ++r)
        if (g.sentence(a, r) == ex.sentences[i]) {
          arch = a;
          actor = r;
          break;
        }
    if (!arch || g.archetypes[*arch].distractor) continue;
    std::size_t cur = *arch;
    bool ok = true;
    for (std::size_t s = i; s != ex.explanation && ok; s += ex.explanation > i ? 1 : std::size_t(-1)) {
      ok = false;
      for (const auto& t : g.transitions) {
        if (ex.explanation > i && t.from == cur) {
          cur = t.to;
          ok = true;
          break;
        }
        if (ex.explanation < i && t.to == cur) {
          cur = t.from;
          ok = true;
          break;
        }
      }
    }
    if (ok) return g.sentence(cur, *actor);
  }
  return std::nullopt;
}

std::vector<Example> round_trip(const std::vector<Example>& xs) {
  std::stringstream ss;
  write_dataset(xs, ss);
  return read_dataset(ss);
}

std::size_t parse_error_line(const std::string& text) {
  std::istringstream is(text);
  try {
    read_dataset(is);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

const std::string kHeader = R"({"format":"reasoner-events","version":1})";

}  // namespace

TEST(Grammar, StructureIsConsistent) {
  auto g = CausalGrammar::build(GrammarConfig{});
  const auto& cfg = g.config;
  EXPECT_EQ(g.archetypes.size(), cfg.stories * cfg.story_length + cfg.distractors);
  EXPECT_EQ(g.transitions.size(), cfg.stories * (cfg.story_length - 1));
  std::set<std::size_t> reached;
  for (const auto& s : g.stories) reached.insert(s.begin(), s.end());
  for (std::size_t a = 0; a < g.archetypes.size(); ++a) {
    const auto& arch = g.archetypes[a];
    EXPECT_EQ(reached.count(a) == 1, !arch.distractor) << a;
    const auto len = g.sentence(a, 0).size();
    EXPECT_GE(len, cfg.template_min + 1);
    EXPECT_LE(len, cfg.template_max + 1);
    EXPECT_EQ(g.sentence(a, 0).back(), Vocabulary::kEos);
  }
  for (const auto& t : g.transitions) {
    EXPECT_FALSE(g.archetypes[t.from].distractor);
    EXPECT_FALSE(g.archetypes[t.to].distractor);
  }
}

TEST(Grammar, InvalidConfigurationsAreRejected) {
  GrammarConfig c;
  c.min_events = 1;
  EXPECT_THROW(CausalGrammar::build(c), ConfigError);
  c = {};
  c.vocab_size = 6;
  EXPECT_THROW(CausalGrammar::build(c), ConfigError);
  c = {};
  c.distractor_rate = 1.5;
  EXPECT_THROW(CausalGrammar::build(c), ConfigError);
}

TEST(Generate, ZeroNoiseGivesExactEmissionBases) {
  GrammarConfig c;
  c.noise = 0.0;
  auto g = CausalGrammar::build(c);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto ex = generate_example(g, rng, 5);
    const auto& chain = *ex.latent;
    for (std::size_t i = 0; i < ex.events(); ++i)
      for (std::size_t j = 0; j < ex.feature_width; ++j) {
        const double base = g.archetypes[chain.archetypes[i]].base[j] + g.actor_features[chain.actor][j];
        EXPECT_EQ(ex.features[i * ex.feature_width + j], base);
      }
  }
}

TEST(Generate, FixedSeedIsDeterministic) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(generate_example(g, a, 4), generate_example(g, b, 4));
}

TEST(Generate, ShapesAndRanges) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(4);
  for (std::size_t n = 2; n <= 6; ++n) {
    auto ex = generate_example(g, rng, n);
    EXPECT_EQ(ex.events(), n);
    EXPECT_EQ(ex.features.size(), n * g.config.feature_width);
    EXPECT_LT(ex.explanation, n);
    EXPECT_FALSE(ex.latent->distractor[ex.explanation]);
    for (const auto& s : ex.sentences) {
      EXPECT_LE(s.size(), ModelConfig{}.max_len);
      EXPECT_EQ(s.back(), Vocabulary::kEos);
    }
  }
  EXPECT_THROW(generate_example(g, rng, 1), GenerationError);
  EXPECT_THROW(generate_example(g, rng, 7), GenerationError);
  GrammarConfig shortstory;
  shortstory.story_length = 3;
  auto h = CausalGrammar::build(shortstory);
  EXPECT_THROW(generate_example(h, rng, 5), GenerationError);
}

TEST(Generate, HiddenSentenceIsInferableFromPremises) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> count(3, 6);
  std::size_t recovered = 0, with_distractor = 0;
  for (int i = 0; i < 1000; ++i) {
    auto ex = generate_example(g, rng, count(rng));
    auto guess = oracle_hidden_sentence(g, ex);
    if (guess && *guess == ex.sentences[ex.explanation]) ++recovered;
    for (bool d : ex.latent->distractor) with_distractor += d;
    EXPECT_EQ(infer_hidden_sentence(g, ex), ex.sentences[ex.explanation]);
  }
  EXPECT_EQ(recovered, 1000u);
  EXPECT_GT(with_distractor, 0u);
}

TEST(Generate, DistractorRateIsRespected) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(6);
  std::size_t premises = 0, distractors = 0;
  for (int i = 0; i < 4000; ++i) {
    auto ex = generate_example(g, rng, 6);
    premises += ex.events() - 1;
    for (bool d : ex.latent->distractor) distractors += d;
  }
  EXPECT_NEAR(static_cast<double>(distractors) / static_cast<double>(premises), 0.2, 0.01);
}

TEST(Mask, ZeroesOnlyTheHiddenRow) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto ex = generate_example(g, rng, 4);
    auto masked = mask_explanation(ex);
    EXPECT_EQ(masked.explanation, ex.explanation);
    for (std::size_t i = 0; i < ex.events(); ++i)
      for (std::size_t j = 0; j < ex.feature_width; ++j) {
        const double got = masked.features.at(i, j);
        if (i == ex.explanation) {
          EXPECT_EQ(got, 0.0);
        } else {
          EXPECT_EQ(got, ex.features[i * ex.feature_width + j]);
        }
      }
  }
}

TEST(Mask, BadIndexIsAContractViolation) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(8);
  auto ex = generate_example(g, rng, 3);
  ex.explanation = 3;
  EXPECT_THROW(mask_explanation(ex), ContractError);
}

TEST(Dataset, EmptyRoundTrip) { EXPECT_TRUE(round_trip({}).empty()); }

TEST(Dataset, GeneratedExamplesRoundTripExactly) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(9);
  std::vector<Example> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(generate_example(g, rng, 3 + static_cast<std::size_t>(i % 4)));
  const auto back = round_trip(xs);
  EXPECT_EQ(back, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(mask_explanation(back[i]).features.data(), mask_explanation(xs[i]).features.data());
  }
}

TEST(Dataset, WritingIsByteStable) {
  auto g = CausalGrammar::build(GrammarConfig{});
  Rng rng(10);
  std::vector<Example> xs{generate_example(g, rng, 4), generate_example(g, rng, 5)};
  std::stringstream a, b;
  write_dataset(xs, a);
  write_dataset(round_trip(xs), b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Dataset, ExternalFixtureLoads) {
  auto xs = read_dataset(std::string(REASONER_FIXTURES) + "/external_events.jsonl");
  ASSERT_EQ(xs.size(), 2u);
  EXPECT_EQ(xs[0].feature_width, 4u);
  EXPECT_EQ(xs[0].events(), 3u);
  EXPECT_EQ(xs[0].explanation, 1u);
  EXPECT_EQ(xs[0].features[2 * 4 + 2], 1e-3);
  EXPECT_EQ(xs[0].sentences[2], (std::vector<std::size_t>{8, 12, 13, 14, 2}));
  EXPECT_FALSE(xs[0].latent.has_value());
  EXPECT_EQ(xs[1].events(), 2u);
  EXPECT_EQ(mask_explanation(xs[1]).features.data(), (std::vector<double>{0, 0, 0, 0, -1, -1, -1, -1}));
}

TEST(Dataset, MalformedLinesReportTheirLineNumber) {
  const std::string good = R"({"features":[[1,2]],"sentences":[[3,2]],"explanation":0})";
  EXPECT_EQ(parse_error_line(kHeader + "\n" + good + "\n{not json\n"), 3u);
  EXPECT_EQ(parse_error_line(kHeader + "\n" + good + "\n" + good + "\n" +
                             R"({"features":[[1,2],[3]],"sentences":[[3,2],[4,2]],"explanation":0})" + "\n"),
            4u);
  EXPECT_EQ(parse_error_line(kHeader + "\n" + R"({"features":[[1,2]],"sentences":[[3,2]],"explanation":1})"), 2u);
  EXPECT_EQ(parse_error_line(kHeader + "\n" + R"({"features":[[1,2]],"sentences":[[3,2]]})"), 2u);
  EXPECT_EQ(parse_error_line(kHeader + "\n" + R"({"features":[[1,"x"]],"sentences":[[3,2]],"explanation":0})"), 2u);
  EXPECT_EQ(parse_error_line(""), 1u);
  EXPECT_EQ(parse_error_line(R"({"format":"something-else","version":1})"), 1u);
}

TEST(Dataset, VersionMismatchIsAFormatError) {
  std::istringstream is(R"({"format":"reasoner-events","version":2})" "\n");
  EXPECT_THROW(read_dataset(is), FormatVersionError);
}

TEST(Splits, DeterministicAndDisjoint) {
  auto g = CausalGrammar::build(GrammarConfig{});
  SplitSizes sizes{200, 40, 60};
  auto a = generate_splits(g, sizes, 12);
  auto b = generate_splits(g, sizes, 12);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train.size(), 200u);
  EXPECT_EQ(a.val.size(), 40u);
  EXPECT_EQ(a.test.size(), 60u);
  std::vector<std::set<std::uint64_t>> keys(3);
  const std::vector<Example>* parts[] = {&a.train, &a.val, &a.test};
  for (int s = 0; s < 3; ++s)
    for (const auto& ex : *parts[s]) {
      keys[static_cast<std::size_t>(s)].insert(ex.latent->key());
      EXPECT_EQ(split_of(*ex.latent, sizes), s);
      EXPECT_GE(ex.events(), 3u);
      EXPECT_LE(ex.events(), 6u);
    }
  for (int s = 0; s < 3; ++s)
    for (int t = s + 1; t < 3; ++t)
      for (auto k : keys[static_cast<std::size_t>(s)]) EXPECT_EQ(keys[static_cast<std::size_t>(t)].count(k), 0u);
}

TEST(Stats, CountsEventsAndWords) {
  Example a, b;
  a.sentences = {{3, 4, 2}, {5, 2}};
  b.sentences = {{3, 2}, {4, 4, 4, 2}, {9, 2}};
  auto s = dataset_stats({a, b});
  EXPECT_EQ(s.examples, 2u);
  EXPECT_DOUBLE_EQ(s.mean_events, 2.5);
  EXPECT_DOUBLE_EQ(s.mean_length, 8.0 / 5.0);
  EXPECT_EQ(s.event_counts.at(3), 1u);
  EXPECT_EQ(s.sentence_lengths.at(1), 3u);
}
