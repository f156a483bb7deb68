#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "reasoner/metrics.hpp"

using namespace reasoner;
using namespace reasoner::metrics;

namespace {

ScoredCorpus corpus_of(const std::vector<std::pair<std::string, std::vector<std::string>>>& pairs,
                       Role role = Role::Premise) {
  ScoredCorpus c;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    c.items.push_back(make_item("item" + std::to_string(i), pairs[i].first, pairs[i].second, role));
  return c;
}

ScoredCorpus single(const std::string& cand, const std::string& ref) { return corpus_of({{cand, {ref}}}); }

const std::vector<std::pair<std::string, std::vector<std::string>>> kToy = {
    {"a man rides a horse", {"a man rides a horse", "a person rides a brown horse"}},
    {"the dog runs", {"a dog runs fast"}},
    {"a woman cooks dinner", {"the woman cooks a meal", "a woman is cooking dinner"}},
};

// Table-style TF-IDF: n-grams keyed as joined strings, one table per order.
double cider_oracle(const std::vector<std::pair<std::string, std::vector<std::string>>>& pairs, bool penalized) {
  auto split = [](const std::string& s) {
    std::vector<std::string> w;
    std::istringstream is(s);
    for (std::string t; is >> t;) w.push_back(t);
    return w;
  };
  auto grams = [](const std::vector<std::string>& w, std::size_t n) {
    std::map<std::string, double> tf;
    for (std::size_t i = 0; i + n <= w.size(); ++i) {
      std::string key;
      for (std::size_t j = i; j < i + n; ++j) key += w[j] + "|";
      tf[key] += 1.0;
    }
    return tf;
  };
  const double docs = static_cast<double>(pairs.size());
  std::map<std::string, double> df[5];
  for (const auto& [c, refs] : pairs)
    for (std::size_t n = 1; n <= 4; ++n) {
      std::set<std::string> seen;
      for (const auto& r : refs)
        for (const auto& [k, v] : grams(split(r), n)) seen.insert(k);
      for (const auto& k : seen) df[n][k] += 1.0;
    }
  auto tfidf = [&](const std::vector<std::string>& w, std::size_t n) {
    auto tf = grams(w, n);
    for (auto& [k, v] : tf) v *= std::log(docs) - std::log(std::max(1.0, df[n][k]));
    return tf;
  };
  double sum = 0.0;
  for (const auto& [c, refs] : pairs) {
    const auto cw = split(c);
    double item = 0.0;
    for (const auto& r : refs) {
      const auto rw = split(r);
      const double dl = static_cast<double>(cw.size()) - static_cast<double>(rw.size());
      for (std::size_t n = 1; n <= 4; ++n) {
        auto a = tfidf(cw, n), b = tfidf(rw, n);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (auto& [k, v] : a) na += v * v;
        for (auto& [k, v] : b) nb += v * v;
        for (auto& [k, v] : a)
          if (b.count(k)) dot += (penalized ? std::min(v, b[k]) : v) * b[k];
        double cos = na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
        if (penalized) cos *= std::exp(-dl * dl / 72.0);
        item += cos / 4.0;
      }
    }
    sum += 10.0 * item / static_cast<double>(refs.size());
  }
  return sum / docs;
}

}  // namespace

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("The cat, sat!  On   the MAT."), (Tokens{"the", "cat", "sat", "on", "the", "mat"}));
  EXPECT_EQ(tokenize("don't stop"), (Tokens{"dont", "stop"}));
  EXPECT_TRUE(tokenize(" ,.; ").empty());
  EXPECT_EQ(bleu4(single("The cat sat.", "the cat sat")), 1.0);
}

TEST(Bleu, IdenticalAndDisjoint) {
  EXPECT_DOUBLE_EQ(bleu4(single("a man is riding a horse", "a man is riding a horse")), 1.0);
  EXPECT_EQ(bleu4(single("x y z", "a b c")), 0.0);
}

TEST(Bleu, ShortCandidateHandComputed) {
  // p1 = 3/3; smoothed p2..p4 = 3/3, 2/2, 1/1; BP = e^(1 − 4/3).
  EXPECT_NEAR(bleu4(single("the cat sat", "the cat sat down")), 0.7165313105737893, 1e-15);
  EXPECT_NEAR(bleu4(single("the cat sat", "the cat sat down")), std::exp(1.0 - 4.0 / 3.0), 1e-15);
}

TEST(Bleu, ClippingAndClosestReference) {
  // "the the the the" against "the cat": clipped unigram 1/4; p2: (0+1)/(3+1);
  // p3: 1/3; p4: 1/2; candidate longer than the reference so BP = 1.
  const double expect = std::exp((std::log(0.25) + std::log(0.25) + std::log(1.0 / 3.0) + std::log(0.5)) / 4.0);
  EXPECT_NEAR(bleu4(single("the the the the", "the cat")), expect, 1e-15);
  auto it = make_item("x", "a b c", {"a b c d e f g", "a b", "a b c d"});
  EXPECT_EQ(bleu_stats(it).reference_length, 2.0);  // |3−2| = |3−4|; shorter wins
}

TEST(Rouge, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l(single("a b c d", "a b c d")), 1.0);
  EXPECT_EQ(rouge_l(single("a b", "c d")), 0.0);
  EXPECT_NEAR(rouge_l(single("a b c d", "a c b d")), 0.75, 1e-15);
  EXPECT_EQ(lcs_length({"a", "b", "c", "d"}, {"a", "c", "b", "d"}), 3u);
  // P = 2/2, R = 2/4: F = (1 + β²)·P·R / (R + β²·P).
  const double b2 = 1.44;
  EXPECT_NEAR(rouge_l(single("a b", "a x b y")), (1 + b2) * 0.5 / (0.5 + b2), 1e-15);
}

TEST(Cider, ToyCorpusMatchesTableOracle) {
  EXPECT_NEAR(cider(corpus_of(kToy)), cider_oracle(kToy, true), 1e-9);
  EXPECT_NEAR(cider(corpus_of(kToy), {false, 6.0}), cider_oracle(kToy, false), 1e-9);
  EXPECT_NEAR(cider(corpus_of(kToy)), 3.5909366474341105, 1e-9);
  EXPECT_NEAR(cider(corpus_of(kToy), {false, 6.0}), 3.6178490786539754, 1e-9);
  CiderScorer s(corpus_of(kToy));
  EXPECT_EQ(s.document_frequency({"a"}), 3.0);
  EXPECT_EQ(s.document_frequency({"dog", "runs"}), 1.0);
  EXPECT_EQ(s.document_frequency({"unicorn"}), 0.0);
}

TEST(Cider, DegenerateCorpora) {
  // Every n-gram occurs in the only document, so every IDF weight is 0.
  EXPECT_EQ(cider(single("a man rides", "a man rides")), 0.0);
  auto c = corpus_of({{"x y z", {"a b c"}}, {"d e", {"d e"}}});
  CiderScorer s(c);
  EXPECT_EQ(s.score(c.items[0]), 0.0);
  // Self-cosine 1 at n = 1, 2; no 3- or 4-grams.
  EXPECT_NEAR(s.score(c.items[1]), 10.0 * (1.0 + 1.0) / 4.0, 1e-12);
  EXPECT_NEAR(cider(c), 2.5, 1e-12);
}

TEST(Cider, LengthPenaltyOnlyWhenPenalized) {
  auto c = corpus_of({{"a b c d", {"a b c d e f g h"}}, {"p q", {"r s"}}});
  CiderScorer plain(c, {false, 6.0}), pen(c, {true, 6.0});
  EXPECT_LT(pen.score(c.items[0]), plain.score(c.items[0]));
  EXPECT_NEAR(pen.score(c.items[0]), plain.score(c.items[0]) * std::exp(-16.0 / 72.0), 1e-12);
}

TEST(Metrics, EmptyOrMalformedCorporaAreContractViolations) {
  EXPECT_THROW(bleu4(ScoredCorpus{}), ContractError);
  EXPECT_THROW(rouge_l(ScoredCorpus{}), ContractError);
  EXPECT_THROW(cider(ScoredCorpus{}), ContractError);
  auto noref = corpus_of({{"a", {}}});
  EXPECT_THROW(bleu4(noref), ContractError);
  auto dup = corpus_of({{"a", {"a"}}, {"b", {"b"}}});
  dup.items[1].id = dup.items[0].id;
  EXPECT_THROW(evaluate(dup), ContractError);
}

TEST(Metrics, InvariantToCorpusOrdering) {
  auto c = corpus_of(kToy);
  c.items.push_back(make_item("extra", "a dog rides", {"a man rides a dog"}, Role::Explanation));
  const auto base = evaluate(c);
  std::mt19937 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(c.items.begin(), c.items.end(), rng);
    const auto r = evaluate(c);
    for (std::size_t i = 0; i < base.rows.size(); ++i) EXPECT_NEAR(r.rows[i].value, base.rows[i].value, 1e-12);
  }
}

TEST(Metrics, CorruptingATokenNeverHelps) {
  const std::vector<std::string> words{"a", "man", "dog", "runs", "rides", "horse", "the", "fast", "brown", "cooks"};
  std::mt19937 rng(4);
  std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), len(2, 9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, std::vector<std::string>>> pairs;
    for (int i = 0; i < 4; ++i) {
      std::string s;
      for (std::size_t k = len(rng); k > 0; --k) s += words[w(rng)] + " ";
      pairs.push_back({s, {s}});
    }
    auto perfect = corpus_of(pairs);
    auto corrupted = perfect;
    auto& cand = corrupted.items[trial % 4].candidate;
    cand[std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng)] = "zebra";
    EXPECT_LE(bleu4(corrupted), bleu4(perfect));
    EXPECT_LE(rouge_l(corrupted), rouge_l(perfect));
    EXPECT_LE(cider(corrupted), cider(perfect) + 1e-12);
  }
}

TEST(Report, SplitsAreConsistentWithPooled) {
  auto c = corpus_of(kToy);
  c.items[1].role = Role::Explanation;
  c.items.push_back(make_item("e2", "a dog rides", {"a man rides a dog"}, Role::Explanation));
  const auto rep = evaluate(c);
  EXPECT_EQ(rep.rows.size(), 9u);

  auto pooled = rep.premise_bleu;
  pooled += rep.explanation_bleu;
  EXPECT_EQ(pooled.matches, rep.pooled_bleu.matches);
  EXPECT_EQ(pooled.totals, rep.pooled_bleu.totals);
  EXPECT_NEAR(rep.get("BLEU@4", "pooled"), bleu4(c), 1e-15);
  EXPECT_NEAR(rep.get("BLEU@4", "premise"), bleu4(c.subset(Role::Premise)), 1e-15);
  for (const char* m : {"ROUGE-L", "CIDEr"}) {
    EXPECT_NEAR(rep.get(m, "pooled"), (2.0 * rep.get(m, "premise") + 2.0 * rep.get(m, "explanation")) / 4.0, 1e-12)
        << m;
  }
  EXPECT_NEAR(rep.get("ROUGE-L", "pooled"), rouge_l(c), 1e-15);
  EXPECT_NEAR(rep.get("CIDEr", "pooled"), cider(c), 1e-12);
  EXPECT_THROW(rep.get("METEOR", "pooled"), ContractError);
}

TEST(Report, MachineReadableFormats) {
  auto c = corpus_of(kToy);
  const auto rep = evaluate(c);
  const auto tsv = rep.to_tsv();
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "metric\tsplit\tvalue\titems");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 10);
  const auto j = rep.to_json();
  ASSERT_EQ(j.size(), 9u);
  EXPECT_EQ(j[8]["metric"], "CIDEr");
  EXPECT_EQ(j[8]["split"], "pooled");
  EXPECT_EQ(j[8]["items"], 3);
  EXPECT_EQ(j[8]["value"].get<double>(), rep.get("CIDEr", "pooled"));
  EXPECT_EQ(rep.get("BLEU@4", "explanation"), 0.0);  // empty split
  EXPECT_NE(rep.to_text().find("explanation"), std::string::npos);
}
