#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/errors.hpp"
#include "mpqg/text.hpp"

namespace mpqg {

// Zero n-gram match counts are replaced by this before taking logs.
inline constexpr double kBleuSmoothing = 1e-9;
inline constexpr double kRougeBeta = 1.2;

using NGramCounts = std::map<Tokens, std::size_t>;

inline NGramCounts ngram_counts(const Tokens& seq, std::size_t n) {
  NGramCounts counts;
  if (n == 0 || seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[Tokens(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

struct ModifiedPrecision {
  std::size_t clipped = 0;  // candidate n-grams matched, each clipped to its reference count
  std::size_t total = 0;    // candidate n-grams
};

inline ModifiedPrecision modified_precision(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  const NGramCounts cand = ngram_counts(candidate, n);
  const NGramCounts ref = ngram_counts(reference, n);
  ModifiedPrecision p;
  for (const auto& [gram, count] : cand) {
    p.total += count;
    auto it = ref.find(gram);
    if (it != ref.end()) p.clipped += std::min(count, it->second);
  }
  return p;
}

// Sentence-level BLEU-4 against a single reference. Orders longer than both
// sequences are left out of the geometric mean; an order with no matches
// contributes kBleuSmoothing in place of its match count.
inline double bleu4(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty()) throw ContractError("bleu4: empty reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (candidate.size() < n && reference.size() < n) continue;
    const ModifiedPrecision p = modified_precision(candidate, reference, n);
    const double matches = p.clipped > 0 ? static_cast<double>(p.clipped) : kBleuSmoothing;
    log_sum += std::log(matches / static_cast<double>(std::max<std::size_t>(p.total, 1)));
    ++orders;
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
  return brevity * std::exp(log_sum / static_cast<double>(orders));
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS-based F-measure, F = (1 + β²)PR / (R + β²P) with β = 1.2.
inline double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty()) throw ContractError("rouge_l: empty reference");
  if (candidate.empty()) return 0.0;
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

enum class Metric { kBleu4, kRougeL };

inline const char* metric_name(Metric m) { return m == Metric::kBleu4 ? "bleu4" : "rouge_l"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "bleu4" || s == "bleu" || s == "BLEU-4") return Metric::kBleu4;
  if (s == "rouge_l" || s == "rouge-l" || s == "rouge" || s == "ROUGE-L") return Metric::kRougeL;
  throw ContractError("unknown metric '" + s + "' (expected bleu4 or rouge_l)");
}

inline double score(Metric m, const Tokens& candidate, const Tokens& reference) {
  return m == Metric::kBleu4 ? bleu4(candidate, reference) : rouge_l(candidate, reference);
}

struct ScoredPair {
  std::string id;
  Tokens candidate;
  Tokens reference;
};

struct CorpusScore {
  Metric metric = Metric::kBleu4;
  double mean = 0.0;
  std::vector<std::pair<std::string, double>> per_example;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [id, s] : per_example) rows.push_back({{"id", id}, {"score", s}});
    return {{"metric", metric_name(metric)}, {"mean", mean}, {"per_example", rows}};
  }
};

// Arithmetic mean of sentence-level scores.
inline CorpusScore corpus_metric(const std::vector<ScoredPair>& pairs, Metric metric) {
  if (pairs.empty()) throw ContractError("corpus_metric: no pairs");
  CorpusScore out;
  out.metric = metric;
  double total = 0.0;
  for (const auto& p : pairs) {
    const double s = score(metric, p.candidate, p.reference);
    out.per_example.emplace_back(p.id, s);
    total += s;
  }
  out.mean = total / static_cast<double>(pairs.size());
  return out;
}

}  // namespace mpqg
