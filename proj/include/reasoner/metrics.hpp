#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "reasoner/errors.hpp"

// Corpus-level captioning metrics: BLEU@4, ROUGE-L and CIDEr(-D).
//
// Tokenization is fixed: lowercase, drop ASCII punctuation, split on
// whitespace. Scores depend on it, so it is applied inside make_item().
namespace reasoner::metrics {

using Tokens = std::vector<std::string>;

enum class Role { Premise, Explanation };

inline const char* to_string(Role r) { return r == Role::Premise ? "premise" : "explanation"; }

inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct ScoredItem {
  std::string id;
  Tokens candidate;
  std::vector<Tokens> references;
  Role role = Role::Premise;
};

inline ScoredItem make_item(std::string id, std::string_view candidate, const std::vector<std::string>& references,
                            Role role = Role::Premise) {
  ScoredItem it{std::move(id), tokenize(candidate), {}, role};
  for (const auto& r : references) it.references.push_back(tokenize(r));
  return it;
}

struct ScoredCorpus {
  std::vector<ScoredItem> items;

  void validate() const {
    if (items.empty()) throw ContractError("metric over an empty corpus");
    std::unordered_set<std::string> ids;
    for (const auto& it : items) {
      if (it.references.empty()) throw ContractError("item '" + it.id + "' has no reference");
      if (!ids.insert(it.id).second) throw ContractError("duplicate item id '" + it.id + "'");
    }
  }

  ScoredCorpus subset(Role role) const {
    ScoredCorpus c;
    for (const auto& it : items)
      if (it.role == role) c.items.push_back(it);
    return c;
  }
};

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngram_counts(const Tokens& t, std::size_t n) {
  NgramCounts c;
  if (t.size() < n) return c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

// ---- BLEU@4 ---------------------------------------------------------------

// Additive sufficient statistics; the pooled statistics of a corpus are the
// sum over any partition of it.
struct BleuStats {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double candidate_length = 0.0;
  double reference_length = 0.0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int i = 0; i < 4; ++i) {
      matches[i] += o.matches[i];
      totals[i] += o.totals[i];
    }
    candidate_length += o.candidate_length;
    reference_length += o.reference_length;
    return *this;
  }
};

inline BleuStats bleu_stats(const ScoredItem& it) {
  BleuStats s;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(it.candidate, n);
    std::map<std::vector<std::string>, std::size_t> max_ref;
    for (const auto& r : it.references)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : cand) {
      auto f = max_ref.find(g);
      s.matches[n - 1] += static_cast<double>(std::min(c, f == max_ref.end() ? std::size_t{0} : f->second));
      s.totals[n - 1] += static_cast<double>(c);
    }
  }
  s.candidate_length = static_cast<double>(it.candidate.size());
  // Closest reference length, shorter one on ties.
  std::size_t best = it.references.front().size();
  for (const auto& r : it.references) {
    const auto diff = [&](std::size_t len) {
      return std::abs(static_cast<long>(len) - static_cast<long>(it.candidate.size()));
    };
    if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
  }
  s.reference_length = static_cast<double>(best);
  return s;
}

inline BleuStats bleu_stats(const ScoredCorpus& corpus) {
  BleuStats s;
  for (const auto& it : corpus.items) s += bleu_stats(it);
  return s;
}

// Geometric mean of clipped 1..4-gram precisions times the brevity penalty.
// Orders 2..4 use add-one smoothing: (matches + 1) / (totals + 1). Unigram
// precision is unsmoothed, so no shared word gives exactly 0.
inline double bleu4_from_stats(const BleuStats& s) {
  if (s.totals[0] == 0.0 || s.matches[0] == 0.0) return 0.0;
  double log_sum = std::log(s.matches[0] / s.totals[0]);
  for (int n = 1; n < 4; ++n) log_sum += std::log((s.matches[n] + 1.0) / (s.totals[n] + 1.0));
  const double bp = s.candidate_length > s.reference_length ? 1.0 : std::exp(1.0 - s.reference_length / s.candidate_length);
  return bp * std::exp(log_sum / 4.0);
}

inline double bleu4(const ScoredCorpus& corpus) {
  corpus.validate();
  return bleu4_from_stats(bleu_stats(corpus));
}

// ---- ROUGE-L ----------------------------------------------------------------

inline constexpr double kRougeBeta = 1.2;

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS F-measure with β = 1.2; with several references the best precision
// and best recall are combined.
inline double rouge_l(const ScoredItem& it) {
  double best_p = 0.0, best_r = 0.0;
  for (const auto& r : it.references) {
    const double lcs = static_cast<double>(lcs_length(it.candidate, r));
    if (!it.candidate.empty()) best_p = std::max(best_p, lcs / static_cast<double>(it.candidate.size()));
    if (!r.empty()) best_r = std::max(best_r, lcs / static_cast<double>(r.size()));
  }
  if (best_p == 0.0 || best_r == 0.0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p);
}

inline double rouge_l(const ScoredCorpus& corpus) {
  corpus.validate();
  double s = 0.0;
  for (const auto& it : corpus.items) s += rouge_l(it);
  return s / static_cast<double>(corpus.items.size());
}

// ---- CIDEr -----------------------------------------------------------------

struct CiderOptions {
  bool penalized = true;  // CIDEr-D: clipped counts and Gaussian length penalty
  double sigma = 6.0;
};

namespace detail {

struct TfIdf {
  std::array<std::map<std::vector<std::string>, double>, 4> weights;
  std::array<double, 4> norms{};
  std::size_t length = 0;
};

}  // namespace detail

// Document frequencies count items whose reference set contains an n-gram.
class CiderScorer {
 public:
  explicit CiderScorer(const ScoredCorpus& corpus, CiderOptions options = {}) : options_(options) {
    corpus.validate();
    documents_ = static_cast<double>(corpus.items.size());
    for (const auto& it : corpus.items) {
      for (std::size_t n = 1; n <= 4; ++n) {
        std::set<std::vector<std::string>> seen;
        for (const auto& r : it.references)
          for (const auto& [g, c] : ngram_counts(r, n)) seen.insert(g);
        for (const auto& g : seen) df_[n - 1][g] += 1.0;
      }
    }
  }

  // Per-item score, ×10 scaled; averaged over references and n = 1..4.
  double score(const ScoredItem& it) const {
    const auto cand = vectorize(it.candidate);
    double total = 0.0;
    for (const auto& r : it.references) {
      const auto ref = vectorize(r);
      double per_n = 0.0;
      for (std::size_t n = 0; n < 4; ++n) {
        double dot = 0.0;
        for (const auto& [g, w] : cand.weights[n]) {
          auto f = ref.weights[n].find(g);
          if (f == ref.weights[n].end()) continue;
          dot += (options_.penalized ? std::min(w, f->second) : w) * f->second;
        }
        double sim = 0.0;
        if (cand.norms[n] != 0.0 && ref.norms[n] != 0.0) sim = dot / (cand.norms[n] * ref.norms[n]);
        if (options_.penalized) {
          const double delta = static_cast<double>(cand.length) - static_cast<double>(ref.length);
          sim *= std::exp(-(delta * delta) / (2.0 * options_.sigma * options_.sigma));
        }
        per_n += sim;
      }
      total += per_n / 4.0;
    }
    return 10.0 * total / static_cast<double>(it.references.size());
  }

  double document_frequency(const std::vector<std::string>& ngram) const {
    if (ngram.empty() || ngram.size() > 4) return 0.0;
    auto f = df_[ngram.size() - 1].find(ngram);
    return f == df_[ngram.size() - 1].end() ? 0.0 : f->second;
  }

 private:
  detail::TfIdf vectorize(const Tokens& t) const {
    detail::TfIdf v;
    v.length = t.size();
    const double log_docs = std::log(documents_);
    for (std::size_t n = 1; n <= 4; ++n) {
      for (const auto& [g, c] : ngram_counts(t, n)) {
        auto f = df_[n - 1].find(g);
        const double df = f == df_[n - 1].end() ? 0.0 : f->second;
        const double w = static_cast<double>(c) * (log_docs - std::log(std::max(1.0, df)));
        v.weights[n - 1][g] = w;
        v.norms[n - 1] += w * w;
      }
      v.norms[n - 1] = std::sqrt(v.norms[n - 1]);
    }
    return v;
  }

  CiderOptions options_;
  double documents_ = 0.0;
  std::array<std::map<std::vector<std::string>, double>, 4> df_;
};

inline double cider(const ScoredCorpus& corpus, CiderOptions options = {}) {
  CiderScorer scorer(corpus, options);
  double s = 0.0;
  for (const auto& it : corpus.items) s += scorer.score(it);
  return s / static_cast<double>(corpus.items.size());
}

// ---- report ------------------------------------------------------------------

struct ReportRow {
  std::string metric;
  std::string split;  // premise | explanation | pooled
  double value = 0.0;
  std::size_t items = 0;
};

struct MetricReport {
  std::vector<ReportRow> rows;
  BleuStats premise_bleu, explanation_bleu, pooled_bleu;

  double get(const std::string& metric, const std::string& split) const {
    for (const auto& r : rows)
      if (r.metric == metric && r.split == split) return r.value;
    throw ContractError("no report row " + metric + "/" + split);
  }

  std::string to_tsv() const {
    std::ostringstream os;
    os << "metric\tsplit\tvalue\titems\n";
    os << std::setprecision(17);
    for (const auto& r : rows) os << r.metric << '\t' << r.split << '\t' << r.value << '\t' << r.items << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) j.push_back({{"metric", r.metric}, {"split", r.split}, {"value", r.value}, {"items", r.items}});
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "metric" << std::right << std::setw(12) << "premise" << std::setw(14)
       << "explanation" << std::setw(12) << "pooled" << '\n';
    for (const char* m : {"BLEU@4", "ROUGE-L", "CIDEr"}) {
      os << std::left << std::setw(10) << m << std::right << std::fixed << std::setprecision(4);
      for (const char* s : {"premise", "explanation", "pooled"}) {
        const int w = std::string(s) == "explanation" ? 14 : 12;
        bool found = false;
        for (const auto& r : rows) {
          if (r.metric == m && r.split == s) {
            os << std::setw(w) << r.value;
            found = true;
          }
        }
        if (!found) os << std::setw(w) << "-";
      }
      os << '\n';
    }
    return os.str();
  }
};

// One row per metric × {premise, explanation, pooled}. CIDEr document
// frequencies come from the pooled corpus, so split averages combine
// item-weighted into the pooled value (as do ROUGE-L averages; BLEU
// statistics add).
inline MetricReport evaluate(const ScoredCorpus& corpus, CiderOptions cider_options = {}) {
  corpus.validate();
  MetricReport rep;
  CiderScorer scorer(corpus, cider_options);
  struct Acc {
    double rouge = 0.0, cider = 0.0;
    std::size_t n = 0;
    BleuStats bleu;
  } prem, expl;
  for (const auto& it : corpus.items) {
    Acc& a = it.role == Role::Premise ? prem : expl;
    a.rouge += rouge_l(it);
    a.cider += scorer.score(it);
    a.bleu += bleu_stats(it);
    ++a.n;
  }
  rep.premise_bleu = prem.bleu;
  rep.explanation_bleu = expl.bleu;
  rep.pooled_bleu = prem.bleu;
  rep.pooled_bleu += expl.bleu;
  const std::size_t total = prem.n + expl.n;
  auto avg = [](double s, std::size_t n) { return n ? s / static_cast<double>(n) : 0.0; };
  rep.rows.push_back({"BLEU@4", "premise", bleu4_from_stats(prem.bleu), prem.n});
  rep.rows.push_back({"BLEU@4", "explanation", bleu4_from_stats(expl.bleu), expl.n});
  rep.rows.push_back({"BLEU@4", "pooled", bleu4_from_stats(rep.pooled_bleu), total});
  rep.rows.push_back({"ROUGE-L", "premise", avg(prem.rouge, prem.n), prem.n});
  rep.rows.push_back({"ROUGE-L", "explanation", avg(expl.rouge, expl.n), expl.n});
  rep.rows.push_back({"ROUGE-L", "pooled", avg(prem.rouge + expl.rouge, total), total});
  rep.rows.push_back({"CIDEr", "premise", avg(prem.cider, prem.n), prem.n});
  rep.rows.push_back({"CIDEr", "explanation", avg(expl.cider, expl.n), expl.n});
  rep.rows.push_back({"CIDEr", "pooled", avg(prem.cider + expl.cider, total), total});
  return rep;
}

}  // namespace reasoner::metrics
