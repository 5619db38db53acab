#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "support.hpp"

using namespace mpqg;

namespace {

Tokens random_tokens(Rng& rng, std::size_t min_len, std::size_t max_len, std::size_t alphabet) {
  Tokens out(min_len + rng.below(max_len - min_len + 1));
  for (auto& t : out) t = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return out;
}

}  // namespace

TEST(Metrics, FrozenOracles) {
  for (const auto& o : test::metric_oracles())
    EXPECT_NEAR(score(o.metric, tokenize(o.candidate), tokenize(o.reference)), o.value, 1e-9)
        << metric_name(o.metric) << ": " << o.candidate << " | " << o.reference;
}

TEST(Bleu, ClippedUnigramPrecision) {
  const auto p = modified_precision(tokenize("the the the the the the the"), tokenize("the cat is on the mat"), 1);
  EXPECT_EQ(p.clipped, 2u);
  EXPECT_EQ(p.total, 7u);
}

TEST(Bleu, EdgeCases) {
  EXPECT_THROW(bleu4({"a"}, {}), ContractError);
  EXPECT_EQ(bleu4({}, {"a"}), 0.0);
  EXPECT_DOUBLE_EQ(bleu4({"a"}, {"a"}), 1.0);
  // Disjoint token sets fall to the ε floor.
  EXPECT_LT(bleu4(tokenize("p q r s"), tokenize("w x y z")), 1e-8);
}

TEST(Bleu, NoBrevityPenaltyForLongerCandidates) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const Tokens ref = random_tokens(rng, 1, 6, 4);
    Tokens cand = random_tokens(rng, ref.size(), ref.size() + 5, 4);
    double log_sum = 0.0;
    std::size_t orders = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      if (cand.size() < n && ref.size() < n) continue;
      const auto p = modified_precision(cand, ref, n);
      log_sum += std::log((p.clipped ? double(p.clipped) : kBleuSmoothing) / double(std::max<std::size_t>(p.total, 1)));
      ++orders;
    }
    EXPECT_NEAR(bleu4(cand, ref), std::exp(log_sum / double(orders)), 1e-15);
  }
}

TEST(Rouge, EdgeCases) {
  EXPECT_THROW(rouge_l({"a"}, {}), ContractError);
  EXPECT_EQ(rouge_l({}, {"a"}), 0.0);
  EXPECT_EQ(rouge_l({"x", "y"}, {"a", "b"}), 0.0);
  EXPECT_EQ(lcs_length(tokenize("a b c d"), tokenize("a c d")), 3u);
}

TEST(Rouge, ExhaustiveLcsThreeSymbolsLengthSix) {
  const auto r = test::exhaustive_lcs_check({"a", "b", "c"}, 6);
  EXPECT_EQ(r.pairs, 1093u * 1093u);
  EXPECT_EQ(r.lcs_mismatches, 0u) << r.first_mismatch;
  EXPECT_LT(r.max_rouge_error, 1e-9);
}

TEST(Rouge, ExhaustiveLcsTwoSymbolsLengthEight) {
  const auto r = test::exhaustive_lcs_check({"a", "b"}, 8);
  EXPECT_EQ(r.lcs_mismatches, 0u) << r.first_mismatch;
  EXPECT_LT(r.max_rouge_error, 1e-9);
}

TEST(Metrics, RangeIdentityAndClipping) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tokens a = random_tokens(rng, 0, 7, 3), b = random_tokens(rng, 1, 7, 3);
    for (Metric m : {Metric::kBleu4, Metric::kRougeL}) {
      const double s = score(m, a, b);
      ASSERT_GE(s, 0.0);
      ASSERT_LE(s, 1.0);
      ASSERT_NEAR(score(m, b, b), 1.0, 1e-12);
    }
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto ref = ngram_counts(b, n);
      std::size_t clipped = 0, total = 0;
      for (const auto& [gram, count] : ngram_counts(a, n)) {
        ASSERT_GE(count, 1u);
        auto it = ref.find(gram);
        clipped += std::min(count, it == ref.end() ? std::size_t{0} : it->second);
        total += count;
      }
      const auto p = modified_precision(a, b, n);
      ASSERT_EQ(p.clipped, clipped);
      ASSERT_EQ(p.total, total);
      ASSERT_LE(p.clipped, std::min(p.total, b.size() >= n ? b.size() - n + 1 : 0));
    }
  }
}

TEST(Rouge, SharedTokenNeverLowersRecall) {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    Tokens a = random_tokens(rng, 1, 7, 3), b = random_tokens(rng, 1, 7, 3);
    const double recall = double(lcs_length(a, b)) / double(b.size());
    a.push_back("z");
    b.push_back("z");
    ASSERT_GE(double(lcs_length(a, b)) / double(b.size()), recall);
  }
}

TEST(CorpusMetric, MeansAndBreakdown) {
  EXPECT_THROW(corpus_metric({}, Metric::kBleu4), ContractError);
  const Tokens s = {"a", "b"};
  EXPECT_DOUBLE_EQ(corpus_metric({{"1", s, s}, {"2", s, s}}, Metric::kRougeL).mean, 1.0);
  EXPECT_DOUBLE_EQ(corpus_metric({{"1", s, s}, {"2", {"x"}, s}}, Metric::kRougeL).mean, 0.5);

  std::vector<ScoredPair> pairs;
  double total = 0.0;
  std::size_t k = 0;
  for (const auto& o : test::metric_oracles()) {
    if (o.metric != Metric::kBleu4 || k == 5) continue;
    pairs.push_back({"p" + std::to_string(k++), tokenize(o.candidate), tokenize(o.reference)});
    total += o.value;
  }
  const CorpusScore c = corpus_metric(pairs, Metric::kBleu4);
  EXPECT_NEAR(c.mean, total / 5.0, 1e-12);
  ASSERT_EQ(c.per_example.size(), 5u);
  EXPECT_EQ(c.per_example[2].first, "p2");
  EXPECT_NEAR(c.per_example[2].second, 0.6703200460356393, 1e-12);

  const auto j = c.to_json();
  EXPECT_EQ(j["metric"], "bleu4");
  EXPECT_EQ(j["per_example"].size(), 5u);
  EXPECT_EQ(j["per_example"][0]["id"], "p0");
  EXPECT_TRUE(j["per_example"][0].contains("score"));
}

TEST(Metrics, NameParsing) {
  EXPECT_EQ(parse_metric("bleu4"), Metric::kBleu4);
  EXPECT_EQ(parse_metric("rouge_l"), Metric::kRougeL);
  EXPECT_THROW(parse_metric("meteor"), ContractError);
}
