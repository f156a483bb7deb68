#pragma once

#include <string>

#include "reasoner/decoder.hpp"
#include "reasoner/encoder.hpp"

namespace reasoner {

// Flat hyperparameter set for the whole encoder-decoder.
struct ModelConfig {
  std::size_t input_width = 16;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t ffn_width = 128;
  std::size_t vocab_size = 200;
  std::size_t max_events = 6;
  std::size_t max_len = 20;
  std::size_t buckets = 10;
  std::size_t cascade = 3;
  std::size_t projection_width = 32;
  PositionMode position_mode = PositionMode::ContextualDirectional;
  ExplanationMask mask = ExplanationMask::Hard;
  bool confidence_bias = true;

  // d=16, 2 heads, 20 words, K=2: the gradient-check configuration.
  static ModelConfig tiny() {
    ModelConfig c;
    c.input_width = 8;
    c.hidden = 16;
    c.heads = 2;
    c.ffn_width = 32;
    c.vocab_size = 20;
    c.max_events = 3;
    c.max_len = 8;
    c.cascade = 2;
    c.projection_width = 8;
    return c;
  }

  void validate() const {
    if (heads == 0 || hidden % heads != 0) throw ConfigError("hidden size must be divisible by head count");
    if (buckets < 1) throw ConfigError("bucket size must be at least 1");
    if (vocab_size < 4) throw ConfigError("vocabulary needs at least 4 entries");
    if (max_events < 2) throw ConfigError("max_events must be at least 2");
    if (max_len < 1) throw ConfigError("max_len must be at least 1");
    if (input_width == 0 || projection_width == 0 || ffn_width == 0) throw ConfigError("widths must be positive");
  }

  EncoderConfig encoder() const {
    return {input_width, hidden, heads, encoder_blocks, ffn_width, max_events, position_mode, mask};
  }

  DecoderConfig decoder() const {
    return {hidden, heads, decoder_blocks, ffn_width, vocab_size, max_len, buckets, cascade, confidence_bias};
  }
};

// Two affine layers with a nonlinearity between them.
struct ProjectionHead {
  Linear first;
  Linear second;

  static ProjectionHead create(std::size_t in, std::size_t out, Rng& rng) {
    return {Linear::create(in, in, rng), Linear::create(in, out, rng)};
  }

  Tensor operator()(const Tensor& x) const { return second(gelu(first(x))); }

  void collect(const std::string& prefix, ParamList& out) const {
    first.collect(prefix + ".first", out);
    second.collect(prefix + ".second", out);
  }
};

struct Model {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;
  ProjectionHead projection;

  static Model create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model m;
    m.config = cfg;
    m.encoder = EncoderParams::create(cfg.encoder(), rng);
    m.decoder = DecoderParams::create(cfg.decoder(), rng);
    m.projection = ProjectionHead::create(cfg.hidden, cfg.projection_width, rng);
    return m;
  }

  // Trainable tensors. Refinement weights are omitted when K = 0.
  ParamList parameters() const {
    ParamList out;
    encoder.collect("encoder", out);
    decoder.collect("decoder", out, config.cascade > 0);
    projection.collect("projection", out);
    return out;
  }

  // All tensors including unused refinement weights (for checkpoints).
  ParamList all_tensors() const {
    ParamList out;
    encoder.collect("encoder", out);
    decoder.collect("decoder", out, true);
    projection.collect("projection", out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  // Encoded rows without recording a tape.
  Matrix encode_values(const MaskedEventSequence& seq) const {
    NoGradGuard no_grad;
    return to_matrix(encode(seq, encoder, config.encoder()));
  }

  // Greedy cascade over a masked sequence; entry K holds the final sentences.
  std::vector<StageOutput> infer(const MaskedEventSequence& seq) const {
    return cascade_decode(decoder, config.decoder(), encode_values(seq), config.cascade);
  }
};

// Exponential-moving-average copy of the encoder and projection head.
// Its tensors never require gradients.
struct MomentumEncoder {
  EncoderParams encoder;
  ProjectionHead projection;

  static MomentumEncoder from(const Model& model) {
    MomentumEncoder m;
    m.encoder = model.encoder;
    m.projection = model.projection;
    m.detach_copy();
    return m;
  }

  ParamList parameters() const {
    ParamList out;
    encoder.collect("encoder", out);
    projection.collect("projection", out);
    return out;
  }

 private:
  // Replaces aliased handles with independent non-trainable copies.
  void detach_copy() {
    auto fix_linear = [](Linear& l) {
      l.weight = l.weight.clone();
      if (l.bias.defined()) l.bias = l.bias.clone();
    };
    auto fix_norm = [](LayerNorm& n) {
      n.gamma = n.gamma.clone();
      n.beta = n.beta.clone();
    };
    fix_linear(encoder.input);
    for (Tensor* t : {&encoder.directional_table, &encoder.directional_bias, &encoder.absolute_table})
      if (t->defined()) *t = t->clone();
    for (auto& b : encoder.blocks) {
      fix_norm(b.attn_norm);
      fix_norm(b.ffn_norm);
      for (Linear* l : {&b.query, &b.key, &b.value, &b.output, &b.ffn_in, &b.ffn_out}) fix_linear(*l);
    }
    fix_norm(encoder.final_norm);
    fix_linear(projection.first);
    fix_linear(projection.second);
  }
};

// p_ema ← m·p_ema + (1 − m)·p_online for every matching tensor.
inline void momentum_update(const ParamList& online, const ParamList& ema, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum coefficient outside [0, 1]");
  if (online.size() != ema.size()) throw DimensionError("momentum_update: parameter lists differ in length");
  for (std::size_t i = 0; i < online.size(); ++i) {
    const auto& src = online[i].tensor;
    auto dst = ema[i].tensor;
    if (src.shape() != dst.shape() || online[i].name != ema[i].name) {
      throw DimensionError("momentum_update: mismatch at " + online[i].name + " " + shape_string(src.shape()) +
                           " vs " + ema[i].name + " " + shape_string(dst.shape()));
    }
    auto& d = dst.data();
    const auto& s = src.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = momentum * d[k] + (1.0 - momentum) * s[k];
  }
}

}  // namespace reasoner
