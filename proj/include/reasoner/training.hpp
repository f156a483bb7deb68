#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "reasoner/model.hpp"
#include "reasoner/synth_data.hpp"

namespace reasoner {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 5.0;  // global gradient norm cap; 0 disables
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  double aux_weight = 0.2;  // λ
  double momentum = 0.995;
  double sampling_max = 0.25;
  double sampling_warmup = 0.25;  // fraction of `steps` for the linear ramp
  std::uint64_t seed = 1;

  void validate() const {
    if (aux_weight < 0.0) throw ConfigError("aux weight must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (sampling_max < 0.0 || sampling_max > 1.0) throw ConfigError("sampling probability outside [0, 1]");
    if (sampling_warmup < 0.0) throw ConfigError("sampling warm-up must be non-negative");
  }
};

// ---- losses ----------------------------------------------------------------

struct MainLoss {
  Tensor total;             // Σ_k Σ_n Σ_l −log P(ŵ_l | ŵ_<l, H^k_n)
  std::size_t tokens = 0;   // non-PAD targets counted over all stages
  double per_token() const { return tokens ? total.item() / static_cast<double>(tokens) : 0.0; }
};

// `stage_logits[k][n]` holds teacher-forced logits of event n at stage k;
// `truth[n]` the target words. PAD targets are skipped.
inline MainLoss main_loss(const std::vector<std::vector<Tensor>>& stage_logits,
                          const std::vector<std::vector<std::size_t>>& truth) {
  MainLoss out;
  std::vector<Tensor> terms;
  for (std::size_t k = 0; k < stage_logits.size(); ++k) {
    if (stage_logits[k].size() != truth.size()) {
      throw ContractError("main_loss: stage " + std::to_string(k) + " has " + std::to_string(stage_logits[k].size()) +
                          " events, truth has " + std::to_string(truth.size()));
    }
    for (std::size_t n = 0; n < truth.size(); ++n) {
      const auto& logits = stage_logits[k][n];
      if (logits.rows() != truth[n].size()) {
        throw ContractError("main_loss: stage " + std::to_string(k) + " event " + std::to_string(n) +
                            " length mismatch");
      }
      std::vector<std::size_t> rows, targets;
      for (std::size_t l = 0; l < truth[n].size(); ++l) {
        if (truth[n][l] == Vocabulary::kPad) continue;
        rows.push_back(l);
        targets.push_back(truth[n][l]);
      }
      out.tokens += targets.size();
      if (targets.empty()) continue;
      if (rows.size() == logits.rows()) {
        terms.push_back(cross_entropy_from_logits(logits, targets));
      } else {
        const std::size_t v = logits.cols();
        std::vector<std::size_t> idx;
        for (auto r : rows)
          for (std::size_t j = 0; j < v; ++j) idx.push_back(r * v + j);
        terms.push_back(cross_entropy_from_logits(gather(logits, std::move(idx), {rows.size(), v}), targets));
      }
    }
  }
  out.total = terms.empty() ? Tensor::scalar(0.0) : add_n(terms);
  return out;
}

// ‖Proj(Ṽ_h) − Proj(V̂_h)‖₂ over already-projected vectors.
inline Tensor aux_loss(const Tensor& projected_online, const Tensor& projected_target) {
  if (projected_online.size() != projected_target.size()) {
    throw DimensionError("aux_loss: " + shape_string(projected_online.shape()) + " vs " +
                         shape_string(projected_target.shape()));
  }
  Tensor target = projected_target.shape() == projected_online.shape()
                      ? projected_target
                      : Tensor(projected_online.shape(), projected_target.data());
  return l2_norm(sub(projected_online, target));
}

// ---- scheduled sampling ------------------------------------------------------

// Replacement probability ramps linearly from 0 to `max_probability` over
// `horizon` steps, then stays flat.
struct ScheduledSampling {
  double max_probability = 0.25;
  std::size_t horizon = 0;

  double probability(std::size_t step) const {
    if (horizon == 0) return max_probability;
    return max_probability * std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
  }

  // Per input position: true when the ground-truth word is replaced. The BOS
  // position is never replaced.
  std::vector<bool> decide(std::size_t step, std::size_t inputs, Rng& rng) const {
    std::vector<bool> out(inputs, false);
    const double p = probability(step);
    if (p <= 0.0) return out;
    std::bernoulli_distribution coin(p);
    for (std::size_t i = 1; i < inputs; ++i) out[i] = coin(rng);
    return out;
  }
};

// ---- optimizer -----------------------------------------------------------

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamList& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      first_.emplace_back(p.tensor.size(), 0.0);
      second_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  // Applies one update from the accumulated grads; returns the pre-clip norm.
  double step(const ParamList& params) {
    if (params.size() != first_.size()) throw ContractError("optimizer: parameter list changed");
    double sq = 0.0;
    for (const auto& p : params)
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto t = params[i].tensor;
      if (!t.has_grad()) continue;
      auto& w = t.data();
      const auto& g = t.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] * clip;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon) + cfg_.weight_decay * w[k];
        w[k] -= lr * update;
      }
    }
    return norm;
  }

  std::uint64_t steps_taken() const noexcept { return t_; }
  std::vector<std::vector<double>>& first_moments() { return first_; }
  std::vector<std::vector<double>>& second_moments() { return second_; }
  void set_steps_taken(std::uint64_t t) { t_ = t; }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> first_, second_;
  std::uint64_t t_ = 0;
};

inline void zero_grads(const ParamList& params) {
  for (auto p : params) p.tensor.zero_grad();
}

// ---- per-example forward -------------------------------------------------

// Everything a training forward needs that is held fixed during the
// differentiable pass: drafts of stages 0..K−1 (condensed vectors and
// confidences), D⁰ inputs after scheduled sampling, and the momentum target.
struct PreparedExample {
  MaskedEventSequence masked;
  std::vector<std::vector<std::size_t>> targets;
  std::vector<std::vector<std::size_t>> initial_inputs;
  std::vector<std::vector<std::size_t>> refine_inputs;
  std::vector<StageOutput> drafts;
  Tensor momentum_target;  // projected V̂_h, no gradient
};

struct ExampleLoss {
  MainLoss main;
  Tensor aux;
  std::vector<std::vector<Tensor>> logits;  // [stage][event]
  Tensor encoded;
};

inline PreparedExample prepare_example(const Model& model, const MomentumEncoder& ema, const synth::Example& ex,
                                       const ScheduledSampling& sampling, std::size_t step, Rng& rng) {
  const auto& cfg = model.config;
  PreparedExample p;
  p.masked = synth::mask_explanation(ex);
  for (const auto& s : ex.sentences) {
    if (s.empty() || s.size() > cfg.max_len) {
      throw ContractError("target sentence length " + std::to_string(s.size()) + " outside [1, " +
                          std::to_string(cfg.max_len) + "]");
    }
    p.targets.push_back(s);
    p.refine_inputs.push_back(shifted_inputs(s));
  }
  NoGradGuard no_grad;
  const std::size_t draft_refinements = cfg.cascade > 0 ? cfg.cascade - 1 : 0;
  const bool sample = sampling.probability(step) > 0.0;
  if (cfg.cascade > 0 || sample) {
    p.drafts = cascade_decode(model.decoder, cfg.decoder(), model.encode_values(p.masked), draft_refinements);
  }
  p.initial_inputs = p.refine_inputs;
  if (sample) {
    for (std::size_t n = 0; n < ex.events(); ++n) {
      auto& in = p.initial_inputs[n];
      const auto replace = sampling.decide(step, in.size(), rng);
      const auto& own = p.drafts.front().events[n].tokens;
      for (std::size_t i = 1; i < in.size(); ++i)
        if (replace[i] && i - 1 < own.size()) in[i] = own[i - 1];
    }
  }
  Tensor original = encode_features(ex.feature_tensor(), ex.explanation, ema.encoder, cfg.encoder());
  p.momentum_target = ema.projection(slice_rows(original, ex.explanation, 1));
  return p;
}

// Teacher-forced cascade and both losses for one prepared example.
inline ExampleLoss example_loss(const Model& model, const PreparedExample& p) {
  const auto& cfg = model.config;
  const auto dcfg = cfg.decoder();
  ExampleLoss out;
  out.encoded = encode(p.masked, model.encoder, cfg.encoder());
  const std::size_t events = p.targets.size();
  std::vector<Tensor> visual(events);
  out.logits.emplace_back();
  for (std::size_t n = 0; n < events; ++n) {
    auto pass = initial_decode(model.decoder, dcfg, slice_rows(out.encoded, n, 1), p.initial_inputs[n]);
    visual[n] = pass.visual;
    out.logits.back().push_back(pass.logits);
  }
  for (std::size_t k = 1; k <= cfg.cascade; ++k) {
    const auto& prev = p.drafts.at(k - 1);
    RefineContext ctx;
    ctx.condensed = to_tensor(stack_condensed(prev));
    ctx.confidences = normalize_confidences(prev.confidences());
    out.logits.emplace_back();
    std::vector<Tensor> next(events);
    for (std::size_t n = 0; n < events; ++n) {
      ctx.event = n;
      auto pass = refine_decode(model.decoder, dcfg, visual[n], p.refine_inputs[n], ctx);
      next[n] = pass.visual;
      out.logits.back().push_back(pass.logits);
    }
    visual = std::move(next);
  }
  out.main = main_loss(out.logits, p.targets);
  out.aux = aux_loss(model.projection(slice_rows(out.encoded, p.masked.explanation, 1)), p.momentum_target);
  return out;
}

struct LossReport {
  double main = 0.0;       // Σ NLL per example, averaged over the batch
  double aux = 0.0;        // averaged over the batch
  double total = 0.0;      // main + λ·aux
  double per_token = 0.0;  // main NLL per target token
  double grad_norm = 0.0;
  std::size_t step = 0;
};

// Owns the online model, its momentum copy and optimizer state.
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg)
      : cfg_(cfg), model_(Model::create(model_cfg, cfg.seed)), momentum_(MomentumEncoder::from(model_)),
        params_(model_.parameters()), optimizer_(params_, cfg), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg.validate();
    sampling_.max_probability = cfg.sampling_max;
    sampling_.horizon = static_cast<std::size_t>(std::llround(cfg.sampling_warmup * static_cast<double>(cfg.steps)));
  }

  LossReport train_step(std::span<const synth::Example> batch) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    for (const auto& p : params_)
      for (double v : p.tensor.data())
        if (!std::isfinite(v)) throw DivergenceError("non-finite parameter " + p.name + " at step " + std::to_string(step_));
    zero_grads(params_);
    LossReport r;
    r.step = step_;
    std::size_t tokens = 0;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
      auto prepared = prepare_example(model_, momentum_, ex, sampling_, step_, rng_);
      auto loss = example_loss(model_, prepared);
      const double main = loss.main.total.item();
      const double aux = loss.aux.item();
      if (!std::isfinite(main) || !std::isfinite(aux)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step_) + " (main " + std::to_string(main) +
                              ", aux " + std::to_string(aux) + ")");
      }
      Tensor objective = cfg_.aux_weight > 0.0 ? add(loss.main.total, scale(loss.aux, cfg_.aux_weight)) : loss.main.total;
      backward(scale(objective, inv_batch));
      r.main += main;
      r.aux += aux;
      tokens += loss.main.tokens;
    }
    r.main *= inv_batch;
    r.aux *= inv_batch;
    r.total = r.main + cfg_.aux_weight * r.aux;
    r.per_token = tokens ? r.main * static_cast<double>(batch.size()) / static_cast<double>(tokens) : 0.0;
    r.grad_norm = optimizer_.step(params_);
    if (!std::isfinite(r.grad_norm)) throw DivergenceError("non-finite gradient norm at step " + std::to_string(step_));
    momentum_update(encoder_and_projection(), momentum_.parameters(), cfg_.momentum);
    ++step_;
    return r;
  }

  ParamList encoder_and_projection() const {
    ParamList out;
    model_.encoder.collect("encoder", out);
    model_.projection.collect("projection", out);
    return out;
  }

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const ParamList& parameters() const { return params_; }
  MomentumEncoder& momentum() { return momentum_; }
  AdamW& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return cfg_; }
  const ScheduledSampling& sampling() const { return sampling_; }
  Rng& rng() { return rng_; }
  std::size_t step() const { return step_; }
  void set_step(std::size_t s) { step_ = s; }

 private:
  TrainConfig cfg_;
  Model model_;
  MomentumEncoder momentum_;
  ParamList params_;
  AdamW optimizer_;
  ScheduledSampling sampling_;
  Rng rng_;
  std::size_t step_ = 0;
};

}  // namespace reasoner
