#pragma once

#include <string>
#include <vector>

#include "reasoner/nn.hpp"

// Causality-aware event encoder: stacked pre-norm attention blocks whose
// logits carry a content-conditioned directional position term, with the
// masked explanation event hidden from every other query.
namespace reasoner {

enum class PositionMode {
  Absolute,               // learned table added to the input rows
  Directional,            // learned scalar per signed offset
  ContextualDirectional,  // query row · directional table row
};

enum class ExplanationMask {
  Hard,  // −∞ logit: no information from the masked event reaches premises
  Soft,  // logit forced to 0 (a literal reading that still leaks)
};

inline const char* to_string(PositionMode m) {
  switch (m) {
    case PositionMode::Absolute: return "absolute";
    case PositionMode::Directional: return "directional";
    case PositionMode::ContextualDirectional: return "contextual-directional";
  }
  return "?";
}

inline PositionMode position_mode_from_string(const std::string& s) {
  if (s == "absolute") return PositionMode::Absolute;
  if (s == "directional") return PositionMode::Directional;
  if (s == "contextual-directional" || s == "contextual") return PositionMode::ContextualDirectional;
  throw ConfigError("unknown position mode '" + s + "'");
}

struct EncoderConfig {
  std::size_t input_width = 16;  // raw event feature width
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ffn_width = 128;
  std::size_t max_events = 6;
  PositionMode position_mode = PositionMode::ContextualDirectional;
  ExplanationMask mask = ExplanationMask::Hard;
};

struct EncoderParams {
  Linear input;
  Tensor directional_table;  // [(2·max_events − 1) × hidden], contextual mode
  Tensor directional_bias;   // [2·max_events − 1], plain directional mode
  Tensor absolute_table;     // [max_events × hidden], absolute mode
  std::vector<BlockParams> blocks;
  LayerNorm final_norm;

  static EncoderParams create(const EncoderConfig& cfg, Rng& rng) {
    if (cfg.heads == 0 || cfg.hidden % cfg.heads != 0) {
      throw ConfigError("encoder hidden size must be divisible by head count");
    }
    EncoderParams p;
    p.input = Linear::create(cfg.input_width, cfg.hidden, rng);
    const std::size_t offsets = 2 * cfg.max_events - 1;
    switch (cfg.position_mode) {
      case PositionMode::ContextualDirectional:
        p.directional_table = init_normal({offsets, cfg.hidden}, 0.02, rng);
        break;
      case PositionMode::Directional:
        p.directional_bias = init_constant({offsets}, 0.0);
        break;
      case PositionMode::Absolute:
        p.absolute_table = init_normal({cfg.max_events, cfg.hidden}, 0.02, rng);
        break;
    }
    for (std::size_t b = 0; b < cfg.blocks; ++b) p.blocks.push_back(BlockParams::create(cfg.hidden, cfg.ffn_width, rng));
    p.final_norm = LayerNorm::create(cfg.hidden);
    return p;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    input.collect(prefix + ".input", out);
    if (directional_table.defined()) out.push_back({prefix + ".directional_table", directional_table});
    if (directional_bias.defined()) out.push_back({prefix + ".directional_bias", directional_bias});
    if (absolute_table.defined()) out.push_back({prefix + ".absolute_table", absolute_table});
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(prefix + ".block" + std::to_string(b), out);
    final_norm.collect(prefix + ".final_norm", out);
  }

  ParamList parameters() const {
    ParamList out;
    collect("encoder", out);
    return out;
  }
};

// Event features with the explanation row zeroed. `explanation` is 0-based.
struct MaskedEventSequence {
  Tensor features;  // [N × input_width]
  std::size_t explanation = 0;

  std::size_t size() const { return features.rows(); }
};

// Signed-offset table index ℓ(n, m) = n − m + N over 1-based positions;
// the result lies in [1, 2N − 1].
inline std::size_t directional_index(std::size_t n, std::size_t m, std::size_t count) {
  if (n < 1 || m < 1 || n > count || m > count) {
    throw ContractError("directional_index: positions (" + std::to_string(n) + ", " + std::to_string(m) +
                        ") outside [1, " + std::to_string(count) + "]");
  }
  return n + count - m;
}

// U[n,m] = X_n · R_{ℓ(n,m)}: each query row selects its own projection of the
// directional table.
inline Tensor contextual_position_bias(const Tensor& x, const Tensor& table, std::size_t max_events) {
  const std::size_t count = x.rows();
  if (count > max_events) {
    throw CapacityError("contextual_position_bias: " + std::to_string(count) + " events exceed capacity " +
                        std::to_string(max_events));
  }
  const std::size_t offsets = table.rows();
  if (offsets < 2 * count - 1) throw CapacityError("contextual_position_bias: table too small");
  Tensor projected = matmul_nt(x, table);  // [N × offsets]
  std::vector<std::size_t> idx;
  idx.reserve(count * count);
  for (std::size_t n = 1; n <= count; ++n)
    for (std::size_t m = 1; m <= count; ++m) idx.push_back((n - 1) * offsets + directional_index(n, m, count) - 1);
  return gather(projected, std::move(idx), {count, count});
}

// Content-free variant: U[n,m] = r_{ℓ(n,m)}.
inline Tensor directional_position_bias(const Tensor& bias, std::size_t count) {
  if (bias.size() < 2 * count - 1) throw CapacityError("directional_position_bias: table too small");
  std::vector<std::size_t> idx;
  idx.reserve(count * count);
  for (std::size_t n = 1; n <= count; ++n)
    for (std::size_t m = 1; m <= count; ++m) idx.push_back(directional_index(n, m, count) - 1);
  return gather(bias, std::move(idx), {count, count});
}

// Additive mask: −∞ at (n, h) for every n ≠ h.
inline Tensor explanation_logit_mask(std::size_t count, std::size_t explanation) {
  auto mask = Tensor::zeros({count, count});
  for (std::size_t n = 0; n < count; ++n)
    if (n != explanation) mask.data()[n * count + explanation] = kNegInf;
  return mask;
}

// Multiplicative gate: 0 at (n, h) for every n ≠ h, 1 elsewhere.
inline Tensor explanation_logit_gate(std::size_t count, std::size_t explanation) {
  auto gate = Tensor::filled({count, count}, 1.0);
  for (std::size_t n = 0; n < count; ++n)
    if (n != explanation) gate.data()[n * count + explanation] = 0.0;
  return gate;
}

// One encoder block: position-biased, explanation-masked attention followed
// by the feed-forward sublayer, both pre-norm with residuals.
inline Tensor masked_biased_attention(const Tensor& x, const BlockParams& block, const EncoderParams& params,
                                      const EncoderConfig& cfg, std::size_t explanation,
                                      AttentionTrace* trace = nullptr) {
  const std::size_t count = x.rows();
  if (explanation >= count) {
    throw ContractError("explanation index " + std::to_string(explanation) + " outside " +
                        std::to_string(count) + " events");
  }
  if (count > cfg.max_events) {
    throw CapacityError(std::to_string(count) + " events exceed capacity " + std::to_string(cfg.max_events));
  }
  Tensor normed = block.attn_norm(x);
  Tensor position;
  if (cfg.position_mode == PositionMode::ContextualDirectional) {
    position = contextual_position_bias(normed, params.directional_table, cfg.max_events);
  } else if (cfg.position_mode == PositionMode::Directional) {
    position = directional_position_bias(params.directional_bias, count);
  }
  Tensor bias, gate;
  if (cfg.mask == ExplanationMask::Hard) {
    Tensor mask = explanation_logit_mask(count, explanation);
    bias = position.defined() ? add(position, mask) : mask;
  } else {
    bias = position;
    gate = explanation_logit_gate(count, explanation);
  }
  Tensor attended = add(x, multi_head_attention(block, normed, bias, cfg.heads, trace, gate));
  return add(attended, feed_forward(block, block.ffn_norm(attended)));
}

// Encodes raw rows without checking that the explanation row is zero.
inline Tensor encode_features(const Tensor& features, std::size_t explanation, const EncoderParams& params,
                              const EncoderConfig& cfg, std::vector<AttentionTrace>* traces = nullptr) {
  if (features.cols() != cfg.input_width) {
    throw DimensionError("event features of width " + std::to_string(features.cols()) + ", expected " +
                         std::to_string(cfg.input_width));
  }
  Tensor x = params.input(features);
  if (cfg.position_mode == PositionMode::Absolute) {
    if (x.rows() > cfg.max_events) throw CapacityError("event count exceeds capacity");
    x = add(x, slice_rows(params.absolute_table, 0, x.rows()));
  }
  if (traces) traces->assign(params.blocks.size(), {});
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = masked_biased_attention(x, params.blocks[b], params, cfg, explanation, traces ? &(*traces)[b] : nullptr);
  }
  return params.final_norm(x);
}

// Encoded event representations Ṽ, one row per event.
inline Tensor encode(const MaskedEventSequence& seq, const EncoderParams& params, const EncoderConfig& cfg,
                     std::vector<AttentionTrace>* traces = nullptr) {
  const std::size_t count = seq.size();
  if (count < 2 || count > cfg.max_events) {
    throw ContractError("event count " + std::to_string(count) + " outside [2, " + std::to_string(cfg.max_events) + "]");
  }
  if (seq.explanation >= count) throw ContractError("explanation index outside the sequence");
  const std::size_t w = seq.features.cols();
  for (std::size_t j = 0; j < w; ++j) {
    if (seq.features.data()[seq.explanation * w + j] != 0.0) {
      throw ContractError("explanation event features must be zero");
    }
  }
  return encode_features(seq.features, seq.explanation, params, cfg, traces);
}

}  // namespace reasoner
