#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "reasoner/checkpoint.hpp"
#include "reasoner/metrics.hpp"

// Glue shared by the command-line tool and the acceptance suite.
namespace reasoner {

// Reshuffles the training set each epoch with its own seeded generator, so
// batch order depends only on the seed and the data.
class BatchSampler {
 public:
  BatchSampler(std::size_t examples, std::size_t batch, std::uint64_t seed)
      : order_(examples), batch_(std::min(batch, examples)), rng_(seed) {
    if (examples == 0) throw ContractError("no training examples");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

  // Advances past `batches` batches without using them (resume).
  void skip(std::size_t batches) {
    for (std::size_t i = 0; i < batches; ++i) next();
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

using StepCallback = std::function<void(const LossReport&)>;

// Runs until the trainer has taken `until_step` steps.
inline std::vector<LossReport> train_loop(Trainer& trainer, const std::vector<synth::Example>& data,
                                          std::size_t until_step, const StepCallback& on_step = {}) {
  BatchSampler sampler(data.size(), trainer.config().batch_size, trainer.config().seed + 0x5bd1e995ULL);
  sampler.skip(trainer.step());
  std::vector<LossReport> log;
  std::vector<synth::Example> batch;
  while (trainer.step() < until_step) {
    batch.clear();
    for (auto i : sampler.next()) batch.push_back(data[i]);
    auto r = trainer.train_step(batch);
    if (on_step) on_step(r);
    log.push_back(r);
  }
  return log;
}

// ---- evaluation --------------------------------------------------------------

struct Prediction {
  std::size_t example = 0;
  std::size_t event = 0;
  bool explanation = false;
  std::vector<std::size_t> tokens;     // generated, EOS included when emitted
  std::vector<std::size_t> reference;  // ground truth, EOS included
  double confidence = 0.0;
};

struct EvaluationResult {
  metrics::MetricReport report;
  std::vector<Prediction> predictions;
  // Position-wise agreement of generated and reference tokens on the
  // explanation sentences, over reference length (EOS counted).
  double explanation_token_accuracy = 0.0;
  double premise_token_accuracy = 0.0;
  double mean_explanation_confidence = 0.0;
};

inline std::size_t matching_tokens(const std::vector<std::size_t>& generated, const std::vector<std::size_t>& reference) {
  std::size_t same = 0;
  for (std::size_t i = 0; i < reference.size() && i < generated.size(); ++i) same += generated[i] == reference[i];
  return same;
}

inline std::vector<Prediction> predict(const Model& model, const std::vector<synth::Example>& data) {
  std::vector<Prediction> out;
  for (std::size_t e = 0; e < data.size(); ++e) {
    const auto& ex = data[e];
    const auto stages = model.infer(synth::mask_explanation(ex));
    const auto& last = stages.back();
    for (std::size_t n = 0; n < ex.events(); ++n) {
      out.push_back({e, n, n == ex.explanation, last.events[n].tokens, ex.sentences[n], last.events[n].confidence});
    }
  }
  return out;
}

inline EvaluationResult evaluate_predictions(std::vector<Prediction> predictions, const Vocabulary& vocab,
                                             bool plain_cider = false) {
  EvaluationResult res;
  metrics::ScoredCorpus corpus;
  std::size_t right[2] = {0, 0}, total[2] = {0, 0}, expl = 0;
  double conf = 0.0;
  for (const auto& p : predictions) {
    corpus.items.push_back(metrics::make_item(std::to_string(p.example) + ":" + std::to_string(p.event),
                                              vocab.render(p.tokens), {vocab.render(p.reference)},
                                              p.explanation ? metrics::Role::Explanation : metrics::Role::Premise));
    right[p.explanation] += matching_tokens(p.tokens, p.reference);
    total[p.explanation] += p.reference.size();
    if (p.explanation) {
      conf += p.confidence;
      ++expl;
    }
  }
  res.report = metrics::evaluate(corpus, {.penalized = !plain_cider});
  if (total[1]) res.explanation_token_accuracy = static_cast<double>(right[1]) / static_cast<double>(total[1]);
  if (total[0]) res.premise_token_accuracy = static_cast<double>(right[0]) / static_cast<double>(total[0]);
  if (expl) res.mean_explanation_confidence = conf / static_cast<double>(expl);
  res.predictions = std::move(predictions);
  return res;
}

inline EvaluationResult evaluate_model(const Model& model, const std::vector<synth::Example>& data, bool plain_cider = false) {
  return evaluate_predictions(predict(model, data), Vocabulary::synthetic(model.config.vocab_size), plain_cider);
}

// ---- ablation matrix ------------------------------------------------------

struct Variant {
  std::string group;  // which comparison it belongs to
  std::string name;
  std::function<void(RunConfig&)> apply;
};

inline std::vector<Variant> ablation_variants(const AblationConfig& a) {
  std::vector<Variant> v;
  v.push_back({"components", "full", [](RunConfig&) {}});
  v.push_back({"components", "no-cascade (K=0)", [](RunConfig& c) { c.model.cascade = 0; }});
  v.push_back({"components", "no-cascade, absolute position",
               [](RunConfig& c) {
                 c.model.cascade = 0;
                 c.model.position_mode = PositionMode::Absolute;
               }});
  v.push_back({"components", "absolute position", [](RunConfig& c) { c.model.position_mode = PositionMode::Absolute; }});
  v.push_back({"position", "directional (scalar)", [](RunConfig& c) { c.model.position_mode = PositionMode::Directional; }});
  v.push_back({"confidence", "no confidence bias", [](RunConfig& c) { c.model.confidence_bias = false; }});
  v.push_back({"loss", "no aux loss", [](RunConfig& c) { c.train.aux_weight = 0.0; }});
  for (auto k : a.k_sweep)
    v.push_back({"cascade", "K=" + std::to_string(k), [k](RunConfig& c) { c.model.cascade = k; }});
  return v;
}

struct CellStats {
  std::vector<double> values;
  double median = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double min = 0.0;
  double max = 0.0;
};

inline CellStats summarize(std::vector<double> v) {
  CellStats s;
  s.values = v;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double sq = 0.0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.stddev = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
  s.min = v.front();
  s.max = v.back();
  return s;
}

struct AblationRow {
  std::string group;
  std::string name;
  RunConfig config;
  std::vector<metrics::MetricReport> reports;  // one per seed
  std::vector<double> seconds;

  CellStats stat(const std::string& metric, const std::string& split = "explanation") const {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.get(metric, split));
    return summarize(v);
  }
};

// Trains one model for `steps` and scores it on `eval`.
inline metrics::MetricReport train_and_score(const RunConfig& cfg, std::size_t steps, const std::vector<synth::Example>& train,
                                             const std::vector<synth::Example>& eval) {
  TrainConfig tc = cfg.train;
  tc.steps = steps;
  Trainer trainer(cfg.model, tc);
  train_loop(trainer, train, steps);
  return evaluate_model(trainer.model(), eval, cfg.plain_cider).report;
}

using ProgressCallback = std::function<void(const std::string& variant, std::size_t seed, double seconds,
                                            const metrics::MetricReport&)>;

// Each variant is trained from seeds base, base+1, ... on the same data and
// scored on the evaluation split. Rows sharing a resolved config reuse runs.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<synth::Example>& train,
                                             const std::vector<synth::Example>& eval,
                                             const ProgressCallback& progress = {},
                                             std::vector<Variant> variants = {}) {
  if (variants.empty()) variants = ablation_variants(base.ablate);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row{v.group, v.name, base, {}, {}};
    v.apply(row.config);
    row.config.validate();
    const auto key = to_json(row.config).dump();
    auto same = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return to_json(r.config).dump() == key; });
    if (same != rows.end()) {
      row.reports = same->reports;
      row.seconds = same->seconds;
      rows.push_back(std::move(row));
      continue;
    }
    for (std::size_t s = 0; s < base.ablate.seeds; ++s) {
      RunConfig c = row.config;
      c.train.seed = base.train.seed + s;
      const auto t0 = std::chrono::steady_clock::now();
      row.reports.push_back(train_and_score(c, base.ablate.steps, train, eval));
      row.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (progress) progress(v.name, c.train.seed, row.seconds.back(), row.reports.back());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- end-to-end gradient check ------------------------------------------------

// Grammar sized for ModelConfig::tiny(): 20 words, 8-wide features, three
// events, sentences that fit in 8 tokens with EOS.
inline synth::GrammarConfig tiny_grammar() {
  synth::GrammarConfig g;
  g.vocab_size = 20;
  g.feature_width = 8;
  g.stories = 2;
  g.story_length = 4;
  g.distractors = 1;
  g.actors = 2;
  g.template_min = 3;
  g.template_max = 6;
  g.min_events = 3;
  g.max_events = 3;
  return g;
}

namespace detail {

// sum(x∘x) whose backward omits the factor 2. Negative control only.
inline Tensor miswired_square_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return Tensor::from_op({}, {s}, "miswired_square_sum", {x}, [](Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * in.value[i];
  });
}

}  // namespace detail

struct GradCheckRun {
  GradCheckReport report;
  double seconds = 0.0;
  double tolerance = 1e-4;
  std::size_t parameters = 0;
  bool passed() const { return report.max_relative_error < tolerance; }
};

// Checks d(main + λ·aux)/dθ for every trainable tensor of a freshly
// initialised model on one synthetic example. Drafts, scheduled-sampling
// decisions and the momentum target are held fixed, as in training.
inline GradCheckRun full_model_gradcheck(const ModelConfig& cfg, const synth::GrammarConfig& grammar, double eps,
                                         GradCheckOptions options, bool break_gradient = false,
                                         std::uint64_t seed = 3, double aux_weight = 0.2) {
  const auto t0 = std::chrono::steady_clock::now();
  Model model = Model::create(cfg, seed);
  // Perturb LayerNorm scales and offsets away from 1/0 so their gradients
  // are generic.
  Rng rng(seed + 1);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& p : model.parameters()) {
    if (p.name.find("gamma") == std::string::npos && p.name.find("beta") == std::string::npos &&
        p.name.find("bias") == std::string::npos)
      continue;
    auto t = p.tensor;
    for (auto& v : t.data()) v += jitter(rng);
  }
  MomentumEncoder ema = MomentumEncoder::from(model);
  for (auto& p : ema.parameters()) {
    auto t = p.tensor;
    for (auto& v : t.data()) v += jitter(rng);
  }
  const auto g = synth::CausalGrammar::build(grammar);
  Rng data_rng(seed + 2);
  const auto ex = synth::generate_example(g, data_rng, grammar.max_events);
  ScheduledSampling no_sampling{0.0, 0};
  auto prepared = prepare_example(model, ema, ex, no_sampling, 0, data_rng);
  // An untrained model drafts near-equal confidences, which land in one
  // bucket and make the confidence bias a per-row constant with zero
  // gradient. Spread them so every bias entry in use is exercised.
  for (auto& stage : prepared.drafts)
    for (std::size_t n = 0; n < stage.events.size(); ++n)
      stage.events[n].confidence = 0.25 + 0.75 * static_cast<double>(n) / static_cast<double>(stage.events.size());

  const ParamList params = model.parameters();
  const Tensor broken = params.back().tensor;
  auto objective = [&]() {
    auto loss = example_loss(model, prepared);
    Tensor total = add(loss.main.total, scale(loss.aux, aux_weight));
    if (break_gradient) total = add(total, detail::miswired_square_sum(broken));
    return total;
  };
  GradCheckRun run;
  run.parameters = model.parameter_count();
  run.report = grad_check(objective, params, eps, options);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

}  // namespace reasoner
