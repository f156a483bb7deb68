#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "reasoner/checkpoint.hpp"
#include "reasoner/experiment.hpp"
#include "test_util.hpp"

using namespace reasoner;
using reasoner::testing::random_tensor;

namespace {

// −Σ log softmax over explicit loops, PAD targets skipped.
double main_loss_oracle(const std::vector<std::vector<Tensor>>& logits,
                        const std::vector<std::vector<std::size_t>>& truth) {
  double total = 0.0;
  for (const auto& stage : logits)
    for (std::size_t n = 0; n < truth.size(); ++n)
      for (std::size_t l = 0; l < truth[n].size(); ++l) {
        if (truth[n][l] == Vocabulary::kPad) continue;
        const auto& t = stage[n];
        double z = 0.0;
        for (std::size_t w = 0; w < t.cols(); ++w) z += std::exp(t.at(l, w));
        total += std::log(z) - t.at(l, truth[n][l]);
      }
  return total;
}

std::vector<synth::Example> tiny_examples(std::size_t count, std::uint64_t seed) {
  auto g = synth::CausalGrammar::build(tiny_grammar());
  Rng rng(seed);
  std::vector<synth::Example> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth::generate_example(g, rng, 3));
  return out;
}

TrainConfig quick_train(std::size_t steps = 20) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 2;
  t.seed = 5;
  return t;
}

std::vector<double> snapshot(const ParamList& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("reasoner_test_" + name)).string();
}

}  // namespace

TEST(MainLoss, PerfectPredictionsGiveZero) {
  std::vector<std::vector<std::size_t>> truth{{3, 2}, {4, 4, 2}};
  std::vector<std::vector<Tensor>> logits(2);
  for (auto& stage : logits)
    for (const auto& t : truth) {
      auto m = Tensor::filled({t.size(), 6}, -1000.0);
      for (std::size_t l = 0; l < t.size(); ++l) m.data()[l * 6 + t[l]] = 1000.0;
      stage.push_back(m);
    }
  auto loss = main_loss(logits, truth);
  EXPECT_EQ(loss.total.item(), 0.0);
  EXPECT_EQ(loss.tokens, 10u);
}

TEST(MainLoss, UniformLogitsGiveLogVocabularyPerToken) {
  std::vector<std::vector<std::size_t>> truth{{3, 5, 2}, {7, 2}};
  std::vector<std::vector<Tensor>> logits(3);
  for (auto& stage : logits)
    for (const auto& t : truth) stage.push_back(Tensor::filled({t.size(), 11}, 0.25));
  auto loss = main_loss(logits, truth);
  EXPECT_NEAR(loss.per_token(), std::log(11.0), 1e-12);
  EXPECT_EQ(loss.tokens, 15u);
}

TEST(MainLoss, MatchesTripleLoopOracle) {
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> word(0, 8), len(1, 5), stages(1, 4), events(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<std::size_t>> truth(events(rng));
    for (auto& t : truth) {
      t.resize(len(rng));
      for (auto& w : t) w = word(rng);
    }
    std::vector<std::vector<Tensor>> logits(stages(rng));
    for (auto& stage : logits)
      for (const auto& t : truth) stage.push_back(random_tensor({t.size(), 9}, rng, 2.0, false));
    auto loss = main_loss(logits, truth);
    EXPECT_NEAR(loss.total.item(), main_loss_oracle(logits, truth), 1e-12);
    EXPECT_GE(loss.total.item(), 0.0);
  }
}

TEST(MainLoss, ShapeMismatchesAreContractViolations) {
  std::vector<std::vector<std::size_t>> truth{{3, 2}};
  EXPECT_THROW(main_loss({{Tensor::zeros({2, 5}), Tensor::zeros({2, 5})}}, truth), ContractError);
  EXPECT_THROW(main_loss({{Tensor::zeros({3, 5})}}, truth), ContractError);
}

TEST(AuxLoss, Examples) {
  EXPECT_DOUBLE_EQ(aux_loss(Tensor::matrix({{3, 4}}), Tensor::matrix({{0, 0}})).item(), 5.0);
  auto x = Tensor::matrix({{0.3, -2.0, 1.5}});
  EXPECT_EQ(aux_loss(x, x.clone()).item(), 0.0);
  EXPECT_THROW(aux_loss(Tensor::zeros({1, 3}), Tensor::zeros({1, 2})), DimensionError);
}

TEST(AuxLoss, GradientReachesOnlyTheOnlineBranch) {
  auto model = Model::create(ModelConfig::tiny(), 2);
  auto ema = MomentumEncoder::from(model);
  Rng rng(3);
  auto ex = tiny_examples(1, 4).front();
  auto prepared = prepare_example(model, ema, ex, ScheduledSampling{0.0, 0}, 0, rng);
  EXPECT_FALSE(prepared.momentum_target.requires_grad());

  auto online = random_tensor({1, model.config.hidden}, rng);
  auto f = [&] { return aux_loss(model.projection(online), prepared.momentum_target); };
  auto report = grad_check(f, {{"online", online}}, 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-6);

  backward(example_loss(model, prepared).aux);
  for (const auto& p : ema.parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  bool any = false;
  for (const auto& p : model.encoder.parameters()) any = any || p.tensor.has_grad();
  EXPECT_TRUE(any);
}

TEST(Momentum, DegenerateAndMidpointCoefficients) {
  auto online = Tensor::filled({2}, 4.0);
  auto ema = Tensor::filled({2}, 2.0);
  ParamList on{{"p", online}}, off{{"p", ema}};
  momentum_update(on, off, 0.5);
  EXPECT_EQ(ema.data(), (std::vector<double>{3.0, 3.0}));
  momentum_update(on, off, 1.0);
  EXPECT_EQ(ema.data(), (std::vector<double>{3.0, 3.0}));
  momentum_update(on, off, 0.0);
  EXPECT_EQ(ema.data(), online.data());
}

TEST(Momentum, MismatchesAreRejected) {
  ParamList a{{"p", Tensor::zeros({2})}}, b{{"p", Tensor::zeros({3})}}, c{{"q", Tensor::zeros({2})}};
  EXPECT_THROW(momentum_update(a, b, 0.5), DimensionError);
  EXPECT_THROW(momentum_update(a, c, 0.5), DimensionError);
  EXPECT_THROW(momentum_update(a, a, 1.5), ConfigError);
}

TEST(Momentum, CopyIsIndependentOfTheOnlineModel) {
  auto model = Model::create(ModelConfig::tiny(), 6);
  auto ema = MomentumEncoder::from(model);
  const auto before = snapshot(ema.parameters());
  for (const auto& p : model.encoder.parameters()) {
    auto t = p.tensor;
    for (auto& v : t.data()) v += 1.0;
  }
  EXPECT_EQ(snapshot(ema.parameters()), before);
  for (const auto& p : ema.parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
}

TEST(ScheduledSampling, Schedule) {
  ScheduledSampling s{0.25, 100};
  EXPECT_EQ(s.probability(0), 0.0);
  EXPECT_DOUBLE_EQ(s.probability(50), 0.125);
  EXPECT_EQ(s.probability(100), 0.25);
  EXPECT_EQ(s.probability(10000), 0.25);
  Rng rng(7);
  for (bool b : s.decide(0, 10, rng)) EXPECT_FALSE(b);
}

TEST(ScheduledSampling, EmpiricalFrequencyMatchesProbability) {
  ScheduledSampling s{0.25, 100};
  Rng rng(8);
  for (std::size_t step : {20u, 60u, 100u}) {
    std::size_t hits = 0, draws = 0;
    while (draws < 10000) {
      auto d = s.decide(step, 11, rng);
      EXPECT_FALSE(d[0]);
      for (std::size_t i = 1; i < d.size(); ++i) hits += d[i];
      draws += 10;
    }
    EXPECT_NEAR(static_cast<double>(hits) / static_cast<double>(draws), s.probability(step), 0.02) << step;
  }
}

TEST(ScheduledSampling, ReplacesInitialInputsWithOwnDraft) {
  auto model = Model::create(ModelConfig::tiny(), 9);
  auto ema = MomentumEncoder::from(model);
  auto ex = tiny_examples(1, 10).front();
  Rng rng(11);
  auto p = prepare_example(model, ema, ex, ScheduledSampling{1.0, 0}, 0, rng);
  for (std::size_t n = 0; n < ex.events(); ++n) {
    const auto& in = p.initial_inputs[n];
    const auto& draft = p.drafts.front().events[n].tokens;
    EXPECT_EQ(in[0], Vocabulary::kBos);
    EXPECT_EQ(p.refine_inputs[n], shifted_inputs(ex.sentences[n]));
    for (std::size_t i = 1; i < in.size(); ++i) {
      const auto expect = i - 1 < draft.size() ? draft[i - 1] : p.refine_inputs[n][i];
      EXPECT_EQ(in[i], expect);
    }
  }
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  cfg.clip_norm = 0.0;
  auto w = Tensor::matrix({{1.0, -2.0, 0.5}}, true);
  ParamList params{{"w", w}};
  AdamW opt(params, cfg);
  backward(sum(mul(w, Tensor::matrix({{3.0, -0.5, 0.0}}))));
  opt.step(params);
  const std::vector<double> g{3.0, -0.5, 0.0}, w0{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double adam = g[i] / (std::abs(g[i]) + cfg.epsilon);
    EXPECT_NEAR(w.data()[i], w0[i] - 0.1 * (adam + 0.01 * w0[i]), 1e-15);
  }
}

TEST(AdamW, ClipsTheGlobalNorm) {
  TrainConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.weight_decay = 0.0;
  auto w = Tensor::matrix({{0.0, 0.0}}, true);
  ParamList params{{"w", w}};
  AdamW opt(params, cfg);
  backward(sum(mul(w, Tensor::matrix({{30.0, 40.0}}))));
  EXPECT_DOUBLE_EQ(opt.step(params), 50.0);
  // The clipped gradient is (0.6, 0.8); one Adam step still moves by ≈ lr.
  EXPECT_NEAR(w.data()[0], -cfg.learning_rate, 1e-9);
}

TEST(Trainer, ZeroLearningRateLeavesParametersBitIdentical) {
  auto t = quick_train();
  t.learning_rate = 0.0;
  Trainer trainer(ModelConfig::tiny(), t);
  const auto before = snapshot(trainer.parameters());
  auto data = tiny_examples(2, 12);
  trainer.train_step(data);
  EXPECT_EQ(snapshot(trainer.parameters()), before);
}

TEST(Trainer, TotalIsMainPlusWeightedAux) {
  for (double lambda : {0.0, 0.2, 1.5}) {
    auto t = quick_train();
    t.aux_weight = lambda;
    Trainer trainer(ModelConfig::tiny(), t);
    auto data = tiny_examples(2, 13);
    for (int i = 0; i < 3; ++i) {
      auto r = trainer.train_step(data);
      EXPECT_EQ(r.total, r.main + lambda * r.aux);
      if (lambda == 0.0) {
        EXPECT_EQ(r.total, r.main);
      }
      EXPECT_GE(r.main, 0.0);
      EXPECT_GE(r.aux, 0.0);
    }
  }
}

TEST(Trainer, MomentumEncoderNeverHasGradients) {
  Trainer trainer(ModelConfig::tiny(), quick_train());
  auto data = tiny_examples(2, 14);
  const auto before = snapshot(trainer.momentum().parameters());
  for (int i = 0; i < 3; ++i) {
    trainer.train_step(data);
    for (const auto& p : trainer.momentum().parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  }
  EXPECT_NE(snapshot(trainer.momentum().parameters()), before);
}

TEST(Trainer, EqualSeedsGiveIdenticalLossTraces) {
  auto data = tiny_examples(4, 15);
  auto trace = [&] {
    Trainer trainer(ModelConfig::tiny(), quick_train());
    std::vector<double> out;
    for (std::size_t i = 0; i < 6; ++i) out.push_back(trainer.train_step(std::span(data).subspan(i % 2 * 2, 2)).total);
    return out;
  };
  EXPECT_EQ(trace(), trace());
}

TEST(Trainer, RepeatedExampleLossStrictlyDecreases) {
  auto g = synth::CausalGrammar::build(synth::GrammarConfig{});
  for (std::uint64_t seed : {1u, 2u}) {
    Rng rng(seed + 20);
    std::vector<synth::Example> data{synth::generate_example(g, rng, 3)};
    TrainConfig t;
    t.batch_size = 1;
    t.seed = seed;
    Trainer trainer(ModelConfig{}, t);
    double previous = trainer.train_step(data).total;
    for (int step = 1; step < 50; ++step) {
      const double now = trainer.train_step(data).total;
      EXPECT_LT(now, previous) << "seed " << seed << " step " << step;
      previous = now;
    }
  }
}

TEST(Trainer, NonFiniteLossIsADivergence) {
  Trainer trainer(ModelConfig::tiny(), quick_train());
  trainer.model().decoder.word_embedding.data()[5] = std::numeric_limits<double>::quiet_NaN();
  auto data = tiny_examples(1, 17);
  EXPECT_THROW(trainer.train_step(data), DivergenceError);
}

TEST(Checkpoint, RoundTripAndResumeContinuity) {
  auto data = tiny_examples(4, 18);
  Trainer a(ModelConfig::tiny(), quick_train());
  a.train_step(std::span(data).subspan(0, 2));
  a.train_step(std::span(data).subspan(2, 2));
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(a, path);
  auto b = load_checkpoint(path);
  EXPECT_EQ(b.step(), 2u);
  EXPECT_EQ(snapshot(b.model().all_tensors()), snapshot(a.model().all_tensors()));
  EXPECT_EQ(snapshot(b.momentum().parameters()), snapshot(a.momentum().parameters()));
  for (int i = 0; i < 3; ++i) {
    auto batch = std::span(data).subspan(static_cast<std::size_t>(i % 2) * 2, 2);
    auto ra = a.train_step(batch);
    auto rb = b.train_step(batch);
    EXPECT_EQ(ra.total, rb.total);
    EXPECT_EQ(ra.step, rb.step);
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, RejectsForeignAndFutureFiles) {
  const auto path = temp_path("bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), ParseError);
  {
    std::ofstream os(path, std::ios::binary);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t v = kCheckpointVersion + 1;
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  EXPECT_THROW(load_checkpoint(path), FormatVersionError);
  std::remove(path.c_str());
}

TEST(Checkpoint, TruncatedFileIsAParseError) {
  Trainer a(ModelConfig::tiny(), quick_train());
  const auto path = temp_path("trunc.bin");
  save_checkpoint(a, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_THROW(load_checkpoint(path), ParseError);
  std::remove(path.c_str());
}
