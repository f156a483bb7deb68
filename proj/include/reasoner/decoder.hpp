#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "reasoner/nn.hpp"

// Cascaded-reasoning decoder: an initial multimodal masked decoder per
// event, then K weight-shared refinement decoders that read every event's
// condensed draft, with attention biased by bucketed relative confidence.
namespace reasoner {

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 4) throw VocabularyError("vocabulary needs at least 4 entries");
    if (tokens_[kPad] == tokens_[kBos] || tokens_[kPad] == tokens_[kEos] || tokens_[kBos] == tokens_[kEos]) {
      throw VocabularyError("special tokens must be distinct");
    }
  }

  // <pad> <bos> <eos> followed by generated word forms.
  static Vocabulary synthetic(std::size_t size) {
    if (size < 4) throw VocabularyError("vocabulary needs at least 4 entries");
    std::vector<std::string> t{"<pad>", "<bos>", "<eos>"};
    static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
    for (std::size_t i = 3; i < size; ++i) {
      std::size_t x = i - 3;
      std::string w;
      do {
        w += kOnsets[x % 14];
        x /= 14;
        w += kVowels[x % 5];
        x /= 5;
      } while (x > 0);
      t.push_back(w);
    }
    return Vocabulary(std::move(t));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size()) throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
  }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  // Space-joined words, special tokens dropped.
  std::string render(std::span<const std::size_t> ids) const {
    std::string out;
    for (std::size_t id : ids) {
      if (id == kPad || id == kBos || id == kEos) continue;
      if (!out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
};

struct DecoderConfig {
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ffn_width = 128;
  std::size_t vocab_size = 200;
  std::size_t max_len = 20;
  std::size_t buckets = 10;
  std::size_t cascade = 3;
  bool confidence_bias = true;
};

enum class ModalType : std::size_t { Visual = 0, Text = 1, Condensed = 2 };

struct DecoderParams {
  Tensor word_embedding;  // Ω [vocab × hidden], tied to the captioning head
  Tensor word_position;   // [max_len × hidden]
  Tensor modal_type;      // [3 × hidden]
  std::vector<BlockParams> initial_blocks;
  LayerNorm initial_norm;
  std::vector<BlockParams> refine_blocks;  // shared by every refinement stage
  LayerNorm refine_norm;
  Tensor confidence_bias;  // r^c [2B − 1]

  static DecoderParams create(const DecoderConfig& cfg, Rng& rng) {
    if (cfg.buckets < 1) throw ConfigError("bucket size must be at least 1");
    if (cfg.heads == 0 || cfg.hidden % cfg.heads != 0) throw ConfigError("decoder hidden size must be divisible by head count");
    DecoderParams p;
    p.word_embedding = init_normal({cfg.vocab_size, cfg.hidden}, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng);
    p.word_position = init_normal({cfg.max_len, cfg.hidden}, 0.02, rng);
    p.modal_type = init_normal({3, cfg.hidden}, 0.02, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) p.initial_blocks.push_back(BlockParams::create(cfg.hidden, cfg.ffn_width, rng));
    p.initial_norm = LayerNorm::create(cfg.hidden);
    for (std::size_t b = 0; b < cfg.blocks; ++b) p.refine_blocks.push_back(BlockParams::create(cfg.hidden, cfg.ffn_width, rng));
    p.refine_norm = LayerNorm::create(cfg.hidden);
    p.confidence_bias = init_constant({2 * cfg.buckets - 1}, 0.0);
    return p;
  }

  // Refinement weights exist once regardless of cascade depth; they are
  // listed only when at least one refinement stage runs.
  void collect(const std::string& prefix, ParamList& out, bool with_refinement = true) const {
    out.push_back({prefix + ".word_embedding", word_embedding});
    out.push_back({prefix + ".word_position", word_position});
    out.push_back({prefix + ".modal_type", modal_type});
    for (std::size_t b = 0; b < initial_blocks.size(); ++b) initial_blocks[b].collect(prefix + ".initial" + std::to_string(b), out);
    initial_norm.collect(prefix + ".initial_norm", out);
    if (!with_refinement) return;
    for (std::size_t b = 0; b < refine_blocks.size(); ++b) refine_blocks[b].collect(prefix + ".refine" + std::to_string(b), out);
    refine_norm.collect(prefix + ".refine_norm", out);
    out.push_back({prefix + ".confidence_bias", confidence_bias});
  }
};

// ---- confidence arithmetic -------------------------------------------------

// Mean probability of the chosen words.
inline double sentence_confidence(std::span<const double> step_probabilities) {
  if (step_probabilities.empty()) throw ContractError("sentence_confidence: empty sentence");
  double s = 0.0;
  for (double p : step_probabilities) {
    if (std::isnan(p)) throw DivergenceError("sentence_confidence: probability is NaN");
    if (!(p > 0.0 && p <= 1.0)) throw ContractError("sentence_confidence: probability outside (0, 1]");
    s += p;
  }
  return s / static_cast<double>(step_probabilities.size());
}

// Divides by the maximum, so the most confident sentence maps to exactly 1.
inline std::vector<double> normalize_confidences(std::span<const double> raw) {
  std::vector<double> out(raw.begin(), raw.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  for (auto& c : out) c /= mx;
  return out;
}

// ⌈c·B⌉ clamped to [1, B].
inline std::size_t confidence_bucket(double c, std::size_t buckets) {
  if (buckets < 1) throw ConfigError("bucket size must be at least 1");
  const double raw = std::ceil(c * static_cast<double>(buckets));
  if (raw < 1.0) return 1;
  if (raw > static_cast<double>(buckets)) return buckets;
  return static_cast<std::size_t>(raw);
}

// ι(c_i, c_j) = ⌈c_i·B⌉ − ⌈c_j·B⌉ + B, 1-based, in [1, 2B − 1].
inline std::size_t confidence_bucket_index(double ci, double cj, std::size_t buckets) {
  return confidence_bucket(ci, buckets) + buckets - confidence_bucket(cj, buckets);
}

// ---- teacher-forced (differentiable) pass -----------------------------------

struct DecoderPass {
  Tensor visual;  // [1 × hidden], the refreshed event vector
  Tensor states;  // [L × hidden], token states after the final norm
  Tensor logits;  // [L × vocab]
  std::vector<AttentionTrace> traces;
};

// Context for a refinement stage: every event's condensed draft vector and
// the normalized confidences that key the attention bias.
struct RefineContext {
  Tensor condensed;                 // [N × hidden], treated as constant input
  std::vector<double> confidences;  // normalized, length N
  std::size_t event = 0;            // which event this pass decodes
};

namespace detail {

inline Tensor embed_words(const DecoderParams& p, std::span<const std::size_t> inputs) {
  const std::size_t len = inputs.size();
  if (len > p.word_position.rows()) {
    throw ContractError("sentence of " + std::to_string(len) + " inputs exceeds maximum length");
  }
  Tensor words = embedding_lookup(p.word_embedding, inputs);
  Tensor pos = slice_rows(p.word_position, 0, len);
  Tensor type = slice_rows(p.modal_type, static_cast<std::size_t>(ModalType::Text), 1);
  return add_row_vector(add(words, pos), type);
}

inline Tensor typed(const DecoderParams& p, const Tensor& rows, ModalType t) {
  return add_row_vector(rows, slice_rows(p.modal_type, static_cast<std::size_t>(t), 1));
}

// Prefix of `context` mutually visible rows, one visual row, then causal text.
inline Tensor prefix_causal_mask(std::size_t context, std::size_t text) {
  const std::size_t total = context + 1 + text;
  auto mask = Tensor::zeros({total, total});
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t j = 0; j < total; ++j) {
      const bool visible = i < context ? j < context : j <= i;
      if (!visible) mask.data()[i * total + j] = kNegInf;
    }
  }
  return mask;
}

inline Tensor run_blocks(const std::vector<BlockParams>& blocks, const LayerNorm& norm, Tensor x, const Tensor& bias,
                         std::size_t heads, std::vector<AttentionTrace>* traces) {
  if (traces) traces->assign(blocks.size(), {});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    x = add(x, multi_head_attention(block, block.attn_norm(x), bias, heads, traces ? &(*traces)[b] : nullptr));
    x = add(x, feed_forward(block, block.ffn_norm(x)));
  }
  return norm(x);
}

inline void check_tokens(std::span<const std::size_t> tokens, std::size_t vocab) {
  for (std::size_t t : tokens) {
    if (t >= vocab) throw VocabularyError("token index " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
  }
}

}  // namespace detail

// Input tokens for teacher forcing: BOS followed by all but the last target.
inline std::vector<std::size_t> shifted_inputs(std::span<const std::size_t> targets) {
  std::vector<std::size_t> in{Vocabulary::kBos};
  if (!targets.empty()) in.insert(in.end(), targets.begin(), targets.end() - 1);
  return in;
}

// D⁰ over [Ṽ_n, H_n]; text position l sees the visual row and words ≤ l.
inline DecoderPass initial_decode(const DecoderParams& p, const DecoderConfig& cfg, const Tensor& event_vector,
                                  std::span<const std::size_t> inputs, bool keep_traces = false) {
  detail::check_tokens(inputs, p.word_embedding.rows());
  const std::size_t len = inputs.size();
  Tensor x = concat_rows({detail::typed(p, event_vector, ModalType::Visual), detail::embed_words(p, inputs)});
  DecoderPass out;
  Tensor y = detail::run_blocks(p.initial_blocks, p.initial_norm, x, detail::prefix_causal_mask(0, len), cfg.heads,
                                keep_traces ? &out.traces : nullptr);
  out.visual = slice_rows(y, 0, 1);
  out.states = slice_rows(y, 1, len);
  out.logits = matmul_nt(out.states, p.word_embedding);
  return out;
}

// Additive [T×T] bias for a refinement sequence [condensed_1..N, visual, text]
// keyed by each row's source event; masks are folded in.
inline Tensor refinement_bias(const DecoderParams& p, const DecoderConfig& cfg, const RefineContext& ctx,
                              std::size_t text_len) {
  const std::size_t events = ctx.condensed.rows();
  Tensor mask = detail::prefix_causal_mask(events, text_len);
  if (!cfg.confidence_bias) return mask;
  const std::size_t total = events + 1 + text_len;
  std::vector<std::size_t> bucket(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t src = i < events ? i : ctx.event;
    bucket[i] = confidence_bucket(ctx.confidences[src], cfg.buckets);
  }
  std::vector<std::size_t> idx(total * total);
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < total; ++j) idx[i * total + j] = bucket[i] + cfg.buckets - bucket[j] - 1;
  return add(gather(p.confidence_bias, std::move(idx), {total, total}), mask);
}

// One refinement decoder pass D^k over [Ṽ^{k−1}_n, H_n, {h^{k−1}_m}].
inline DecoderPass refine_decode(const DecoderParams& p, const DecoderConfig& cfg, const Tensor& event_vector,
                                 std::span<const std::size_t> inputs, const RefineContext& ctx,
                                 bool keep_traces = false) {
  if (!ctx.condensed.defined() || ctx.condensed.rows() == 0) {
    throw ContractError("refine_decode: condensed vectors of the previous stage are missing");
  }
  if (ctx.confidences.size() != ctx.condensed.rows() || ctx.event >= ctx.condensed.rows()) {
    throw ContractError("refine_decode: confidences do not match condensed vectors");
  }
  detail::check_tokens(inputs, p.word_embedding.rows());
  const std::size_t events = ctx.condensed.rows();
  const std::size_t len = inputs.size();
  Tensor x = concat_rows({detail::typed(p, ctx.condensed, ModalType::Condensed),
                          detail::typed(p, event_vector, ModalType::Visual), detail::embed_words(p, inputs)});
  DecoderPass out;
  Tensor y = detail::run_blocks(p.refine_blocks, p.refine_norm, x, refinement_bias(p, cfg, ctx, len), cfg.heads,
                                keep_traces ? &out.traces : nullptr);
  out.visual = slice_rows(y, events, 1);
  out.states = slice_rows(y, events + 1, len);
  out.logits = matmul_nt(out.states, p.word_embedding);
  return out;
}

// ---- cached greedy decoding ------------------------------------------------

using Matrix = detail::RowMat;
using Vector = Eigen::VectorXd;

// Incremental evaluation of a decoder with per-block key/value caches. Rows
// are appended in groups; a row attends every earlier row and every row of
// its own group. Produces the same values as the teacher-forced pass.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const DecoderParams& p, const DecoderConfig& cfg, bool refinement)
      : params_(p), cfg_(cfg), blocks_(refinement ? p.refine_blocks : p.initial_blocks),
        norm_(refinement ? p.refine_norm : p.initial_norm), use_bias_(refinement && cfg.confidence_bias),
        keys_(blocks_.size()), values_(blocks_.size()) {}

  // Appends rows of (already embedded) inputs; returns their final-normed
  // outputs. `buckets` holds ⌈c·B⌉ for each row's source event.
  Matrix append(const Matrix& rows, std::span<const std::size_t> buckets) {
    const auto g = rows.rows();
    const auto d = rows.cols();
    const std::size_t heads = cfg_.heads;
    const auto dh = d / static_cast<Eigen::Index>(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto start = static_cast<Eigen::Index>(buckets_.size());
    buckets_.insert(buckets_.end(), buckets.begin(), buckets.end());
    const auto total = start + g;
    Matrix x = rows;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      Matrix a = layer_norm_rows(x, blk.attn_norm);
      Matrix q = a * mat(blk.query.weight);
      Matrix k = a * mat(blk.key.weight);
      Matrix v = a * mat(blk.value.weight);
      append_rows(keys_[b], k);
      append_rows(values_[b], v);
      Matrix merged(g, d);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        Matrix logits = q.middleCols(c0, dh) * keys_[b].middleCols(c0, dh).transpose() * inv_sqrt;
        for (Eigen::Index i = 0; i < g; ++i) {
          if (use_bias_) {
            for (Eigen::Index j = 0; j < total; ++j) {
              logits(i, j) += params_.confidence_bias.data()[buckets_[static_cast<std::size_t>(start + i)] + cfg_.buckets -
                                                             buckets_[static_cast<std::size_t>(j)] - 1];
            }
          }
        }
        Matrix w(g, total);
        for (Eigen::Index i = 0; i < g; ++i) {
          const double mx = logits.row(i).maxCoeff();
          double z = 0.0;
          for (Eigen::Index j = 0; j < total; ++j) {
            w(i, j) = std::exp(logits(i, j) - mx);
            z += w(i, j);
          }
          w.row(i) /= z;
        }
        merged.middleCols(c0, dh) = w * values_[b].middleCols(c0, dh);
      }
      Matrix attn = merged * mat(blk.output.weight);
      attn.rowwise() += vec(blk.output.bias).transpose();
      x += attn;
      Matrix f = layer_norm_rows(x, blk.ffn_norm) * mat(blk.ffn_in.weight);
      f.rowwise() += vec(blk.ffn_in.bias).transpose();
      f = f.unaryExpr([](double u) { return gelu_value(u); });
      Matrix f2 = f * mat(blk.ffn_out.weight);
      f2.rowwise() += vec(blk.ffn_out.bias).transpose();
      x += f2;
    }
    return layer_norm_rows(x, norm_);
  }

  std::size_t length() const noexcept { return buckets_.size(); }

  static detail::ConstMatMap mat(const Tensor& t) { return detail::as_matrix(t.data(), t.rows(), t.cols()); }
  static Eigen::Map<const Vector> vec(const Tensor& t) {
    return Eigen::Map<const Vector>(t.data().data(), static_cast<Eigen::Index>(t.size()));
  }

  static Matrix layer_norm_rows(const Matrix& x, const LayerNorm& ln) {
    Matrix out(x.rows(), x.cols());
    const auto m = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double mean = 0.0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
      mean /= m;
      double var = 0.0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= m;
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out(i, j) = (x(i, j) - mean) * inv * ln.gamma.data()[static_cast<std::size_t>(j)] +
                    ln.beta.data()[static_cast<std::size_t>(j)];
      }
    }
    return out;
  }

 private:
  static void append_rows(Matrix& cache, const Matrix& rows) {
    const auto old = cache.rows();
    cache.conservativeResize(old + rows.rows(), rows.cols());
    cache.bottomRows(rows.rows()) = rows;
  }

  const DecoderParams& params_;
  const DecoderConfig& cfg_;
  const std::vector<BlockParams>& blocks_;
  const LayerNorm& norm_;
  bool use_bias_;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
  std::vector<std::size_t> buckets_;
};

struct GeneratedSentence {
  std::vector<std::size_t> tokens;      // ends with EOS unless the cap was hit
  std::vector<double> probabilities;    // chosen-word probability per step
  Matrix states;                        // [tokens × hidden]
  Vector visual;                        // refreshed event vector
};

// Per-event result of one cascade stage.
struct EventOutput {
  Vector visual;                 // Ṽ^k_n
  Matrix states;                 // H^k_n
  std::vector<std::size_t> tokens;
  std::vector<double> probabilities;
  double confidence = 0.0;       // raw c^k_n
  Vector condensed;              // h^k_n = max over rows of H^k_n
};

struct StageOutput {
  std::vector<EventOutput> events;

  std::vector<double> confidences() const {
    std::vector<double> c;
    for (const auto& e : events) c.push_back(e.confidence);
    return c;
  }
};

// Inputs for generating one event at one stage.
struct GenerationContext {
  Vector event_vector;
  bool refinement = false;
  Matrix condensed;                 // refinement only, [N × hidden]
  std::vector<double> confidences;  // refinement only, normalized
  std::size_t event = 0;
};

namespace detail {

inline Vector modal_row(const DecoderParams& p, ModalType t) {
  const std::size_t d = p.modal_type.cols();
  Vector v(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) v(static_cast<Eigen::Index>(j)) = p.modal_type.data()[static_cast<std::size_t>(t) * d + j];
  return v;
}

inline Vector word_input(const DecoderParams& p, std::size_t token, std::size_t position) {
  const std::size_t d = p.word_embedding.cols();
  Vector v(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    v(static_cast<Eigen::Index>(j)) = p.word_embedding.data()[token * d + j] + p.word_position.data()[position * d + j] +
                                      p.modal_type.data()[static_cast<std::size_t>(ModalType::Text) * d + j];
  }
  return v;
}

}  // namespace detail

// Greedy decoding: append the argmax word (lowest id on ties) until EOS or
// `max_len` words.
inline GeneratedSentence greedy_generate(const DecoderParams& p, const DecoderConfig& cfg, const GenerationContext& ctx,
                                         std::size_t max_len) {
  const auto d = static_cast<Eigen::Index>(p.word_embedding.cols());
  max_len = std::min(max_len, p.word_position.rows());
  IncrementalDecoder dec(p, cfg, ctx.refinement);
  std::size_t own_bucket = 1;
  if (ctx.refinement) {
    const auto events = ctx.condensed.rows();
    if (events == 0 || ctx.confidences.size() != static_cast<std::size_t>(events)) {
      throw ContractError("greedy_generate: refinement context incomplete");
    }
    std::vector<std::size_t> b(static_cast<std::size_t>(events));
    for (std::size_t m = 0; m < b.size(); ++m) b[m] = confidence_bucket(ctx.confidences[m], cfg.buckets);
    own_bucket = b[ctx.event];
    Matrix rows = ctx.condensed;
    rows.rowwise() += detail::modal_row(p, ModalType::Condensed).transpose();
    dec.append(rows, b);
  }
  GeneratedSentence out;
  {
    Matrix vis(1, d);
    vis.row(0) = (ctx.event_vector + detail::modal_row(p, ModalType::Visual)).transpose();
    const std::size_t b[] = {own_bucket};
    out.visual = dec.append(vis, b).row(0).transpose();
  }
  const auto omega = IncrementalDecoder::mat(p.word_embedding);
  std::vector<Vector> states;
  std::size_t input = Vocabulary::kBos;
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    Matrix row(1, d);
    row.row(0) = detail::word_input(p, input, pos).transpose();
    const std::size_t b[] = {own_bucket};
    Vector s = dec.append(row, b).row(0).transpose();
    Vector logits = omega * s;
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.size(); ++j)
      if (logits(j) > logits(best)) best = j;
    const double mx = logits(best);
    double z = 0.0;
    for (Eigen::Index j = 0; j < logits.size(); ++j) z += std::exp(logits(j) - mx);
    states.push_back(std::move(s));
    out.tokens.push_back(static_cast<std::size_t>(best));
    out.probabilities.push_back(1.0 / z);
    if (static_cast<std::size_t>(best) == Vocabulary::kEos) break;
    input = static_cast<std::size_t>(best);
  }
  out.states.resize(static_cast<Eigen::Index>(states.size()), d);
  for (std::size_t i = 0; i < states.size(); ++i) out.states.row(static_cast<Eigen::Index>(i)) = states[i].transpose();
  return out;
}

inline Vector condense(const Matrix& states) { return states.colwise().maxCoeff().transpose(); }

inline EventOutput to_event_output(GeneratedSentence g) {
  EventOutput e;
  e.visual = std::move(g.visual);
  e.condensed = condense(g.states);
  e.states = std::move(g.states);
  e.tokens = std::move(g.tokens);
  e.probabilities = std::move(g.probabilities);
  e.confidence = sentence_confidence(e.probabilities);
  return e;
}

inline Matrix stack_condensed(const StageOutput& stage) {
  const auto n = static_cast<Eigen::Index>(stage.events.size());
  const auto d = stage.events.front().condensed.size();
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) = stage.events[static_cast<std::size_t>(i)].condensed.transpose();
  return m;
}

// Generation context of event n at refinement stage k from stage k−1.
inline GenerationContext refinement_context(const StageOutput& previous, std::size_t event) {
  GenerationContext ctx;
  ctx.refinement = true;
  ctx.event_vector = previous.events[event].visual;
  ctx.condensed = stack_condensed(previous);
  const auto raw = previous.confidences();
  ctx.confidences = normalize_confidences(raw);
  ctx.event = event;
  return ctx;
}

// Initial stage for every event of `encoded` ([N × hidden] values).
inline StageOutput initial_stage(const DecoderParams& p, const DecoderConfig& cfg, const Matrix& encoded) {
  StageOutput stage;
  for (Eigen::Index n = 0; n < encoded.rows(); ++n) {
    GenerationContext ctx;
    ctx.event_vector = encoded.row(n).transpose();
    stage.events.push_back(to_event_output(greedy_generate(p, cfg, ctx, cfg.max_len)));
  }
  return stage;
}

// Refinement stage k from stage k−1; weights are shared by all k ≥ 1.
inline StageOutput refine_stage(const DecoderParams& p, const DecoderConfig& cfg, const StageOutput& previous) {
  if (previous.events.empty()) throw ContractError("refine_stage: previous stage is empty");
  StageOutput stage;
  for (std::size_t n = 0; n < previous.events.size(); ++n) {
    stage.events.push_back(to_event_output(greedy_generate(p, cfg, refinement_context(previous, n), cfg.max_len)));
  }
  return stage;
}

// Every stage 0..K of the cascade; the last entry holds the final sentences.
inline std::vector<StageOutput> cascade_decode(const DecoderParams& p, const DecoderConfig& cfg, const Matrix& encoded,
                                               std::size_t stages_after_initial) {
  std::vector<StageOutput> out;
  out.push_back(initial_stage(p, cfg, encoded));
  for (std::size_t k = 1; k <= stages_after_initial; ++k) out.push_back(refine_stage(p, cfg, out.back()));
  return out;
}

inline Matrix to_matrix(const Tensor& t) { return detail::as_matrix(t.data(), t.rows(), t.cols()); }

inline Tensor to_tensor(const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  detail::as_matrix(data, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())) = m;
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(data));
}

}  // namespace reasoner
