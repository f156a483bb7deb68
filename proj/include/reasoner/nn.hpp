#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "reasoner/grad_check.hpp"
#include "reasoner/ops.hpp"

// Shared transformer building blocks used by the encoder, the decoders and
// the projection head.
namespace reasoner {

using Rng = std::mt19937_64;

inline Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

inline Tensor init_constant(Shape shape, double v) {
  std::vector<double> data(shape_size(shape), v);
  return Tensor(std::move(shape), std::move(data), true);
}

struct Linear {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]

  static Linear create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    Linear l;
    l.weight = init_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    if (with_bias) l.bias = init_constant({out}, 0.0);
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_row_vector(y, bias) : y;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(std::size_t width) {
    return {init_constant({width}, 1.0), init_constant({width}, 0.0)};
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

// Pre-norm transformer block weights.
struct BlockParams {
  LayerNorm attn_norm;
  Linear query, key, value, output;
  LayerNorm ffn_norm;
  Linear ffn_in, ffn_out;

  static BlockParams create(std::size_t d, std::size_t ffn_width, Rng& rng) {
    BlockParams b;
    b.attn_norm = LayerNorm::create(d);
    b.query = Linear::create(d, d, rng, false);
    b.key = Linear::create(d, d, rng, false);
    b.value = Linear::create(d, d, rng, false);
    b.output = Linear::create(d, d, rng);
    b.ffn_norm = LayerNorm::create(d);
    b.ffn_in = Linear::create(d, ffn_width, rng);
    b.ffn_out = Linear::create(ffn_width, d, rng);
    return b;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    attn_norm.collect(prefix + ".attn_norm", out);
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
    ffn_norm.collect(prefix + ".ffn_norm", out);
    ffn_in.collect(prefix + ".ffn_in", out);
    ffn_out.collect(prefix + ".ffn_out", out);
  }
};

// Post-softmax attention weights per head, recorded on request.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

// Multi-head attention over already-normalized rows. `bias` is an additive
// [n×n] logit term shared by all heads (masks included as −∞); `logit_gate`,
// when defined, multiplies the logits elementwise after the bias is added.
inline Tensor multi_head_attention(const BlockParams& p, const Tensor& normed, const Tensor& bias,
                                   std::size_t heads, AttentionTrace* trace = nullptr,
                                   const Tensor& logit_gate = Tensor()) {
  const std::size_t d = normed.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = p.query(normed);
  Tensor k = p.key(normed);
  Tensor v = p.value(normed);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor logits = scale(matmul_nt(qh, kh), inv_sqrt);
    if (bias.defined()) logits = add(logits, bias);
    if (logit_gate.defined()) logits = mul(logits, logit_gate);
    Tensor w = softmax_rows(logits);
    if (trace) trace->weights.push_back(w);
    outs.push_back(matmul(w, vh));
  }
  Tensor merged = heads == 1 ? outs.front() : concat_cols(outs);
  return p.output(merged);
}

inline Tensor feed_forward(const BlockParams& p, const Tensor& x) {
  return p.ffn_out(gelu(p.ffn_in(x)));
}

}  // namespace reasoner
