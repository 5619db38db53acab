#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/errors.hpp"
#include "mpqg/rng.hpp"
#include "mpqg/tensor.hpp"

namespace mpqg {

using Tokens = std::vector<std::string>;
using TokenId = std::size_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kSos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr std::size_t kReservedTokens = 4;

inline const char* const kPadToken = "<pad>";
inline const char* const kUnkToken = "<unk>";
inline const char* const kSosToken = "<s>";
inline const char* const kEosToken = "</s>";

namespace detail {
inline bool is_split_punct(char c) {
  return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':' || c == '"';
}
}  // namespace detail

// Lowercases, splits on whitespace and peels leading/trailing punctuation
// (. , ? ! ; : ") off each word as separate tokens.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string word;
    word.reserve(j - i);
    for (std::size_t k = i; k < j; ++k) word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[k])));
    i = j;

    std::size_t lo = 0, hi = word.size();
    while (lo < hi && detail::is_split_punct(word[lo])) ++lo;
    while (hi > lo && detail::is_split_punct(word[hi - 1])) --hi;
    for (std::size_t k = 0; k < lo; ++k) out.emplace_back(1, word[k]);
    if (hi > lo) out.push_back(word.substr(lo, hi - lo));
    for (std::size_t k = hi; k < word.size(); ++k) out.emplace_back(1, word[k]);
  }
  return out;
}

inline std::string detokenize(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

// Bijection between tokens and ids [0, size). Ids 0..3 are always
// <pad>, <unk>, <s>, </s>.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(Tokens{}) {}

  // `tokens` lists the non-reserved tokens in id order, or the full list
  // including the reserved prefix.
  explicit Vocabulary(const Tokens& tokens) {
    for (const char* r : {kPadToken, kUnkToken, kSosToken, kEosToken}) insert(r);
    std::size_t start = 0;
    if (tokens.size() >= kReservedTokens && tokens[0] == kPadToken) {
      for (std::size_t i = 0; i < kReservedTokens; ++i)
        if (tokens[i] != tokens_[i]) throw SchemaError("vocabulary reserved token mismatch at id " + std::to_string(i));
      start = kReservedTokens;
    }
    for (std::size_t i = start; i < tokens.size(); ++i) {
      if (index_.count(tokens[i])) throw SchemaError("duplicate vocabulary token '" + tokens[i] + "'");
      insert(tokens[i]);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const Tokens& tokens() const { return tokens_; }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
  }

  std::vector<TokenId> encode(const Tokens& tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  Tokens decode(const std::vector<TokenId>& ids) const {
    Tokens out;
    for (TokenId i : ids) out.push_back(token(i));
    return out;
  }

  nlohmann::json to_json() const { return nlohmann::json{{"tokens", tokens_}}; }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array())
      throw SchemaError("vocabulary JSON needs a \"tokens\" array");
    return Vocabulary(j["tokens"].get<Tokens>());
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void insert(const std::string& t) {
    index_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }

  Tokens tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Reserved tokens first, then by descending frequency (ties lexicographic),
// dropping tokens seen fewer than min_count times, capped at max_size ids.
inline Vocabulary build_vocab(const std::vector<Tokens>& corpus, std::size_t max_size, std::size_t min_count = 1) {
  if (max_size < kReservedTokens) throw ContractError("build_vocab: max_size must be at least 4");
  std::map<std::string, std::size_t> counts;
  const Vocabulary reserved;
  for (const auto& seq : corpus)
    for (const auto& t : seq)
      if (!reserved.contains(t)) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokens kept;
  for (const auto& [tok, n] : ranked) {
    if (kept.size() + kReservedTokens >= max_size) break;
    if (n < min_count) break;
    kept.push_back(tok);
  }
  return Vocabulary(kept);
}

// Per-example ids for passage tokens outside the base vocabulary. The k-th
// distinct OOV token (in passage order) gets id base_size + k.
class ExtendedVocabMap {
 public:
  ExtendedVocabMap() = default;

  ExtendedVocabMap(const Vocabulary& vocab, const Tokens& passage) : base_size_(vocab.size()) {
    for (const auto& t : passage) {
      if (vocab.contains(t) || index_.count(t)) continue;
      index_.emplace(t, base_size_ + oov_.size());
      oov_.push_back(t);
    }
  }

  std::size_t base_size() const { return base_size_; }
  std::size_t size() const { return base_size_ + oov_.size(); }
  const Tokens& oov_tokens() const { return oov_; }

  bool is_extended(TokenId id) const { return id >= base_size_; }

  // Id of `token`: base id if in the vocabulary, extended id if a passage
  // OOV, otherwise <unk>.
  TokenId id(const Vocabulary& vocab, const std::string& token) const {
    if (vocab.contains(token)) return vocab.id(token);
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(const Vocabulary& vocab, TokenId id) const {
    if (id < base_size_) return vocab.token(id);
    if (id - base_size_ >= oov_.size()) throw ContractError("extended id " + std::to_string(id) + " out of range");
    return oov_[id - base_size_];
  }

 private:
  std::size_t base_size_ = 0;
  Tokens oov_;
  std::unordered_map<std::string, TokenId> index_;
};

// vocab-size × d word vectors. Frozen tables never receive updates.
struct EmbeddingTable {
  Tensor matrix;
  bool frozen = true;

  std::size_t dim() const { return matrix.cols(); }
  std::size_t rows() const { return matrix.rows(); }
};

inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  Tensor m({vocab.size(), dim});
  for (std::size_t r = 0; r < vocab.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) m.at(r, c) = rng.uniform(-0.1, 0.1);
  for (std::size_t c = 0; c < dim; ++c) m.at(kPad, c) = 0.0;
  return {std::move(m), true};
}

// GloVe-style text: "token v1 ... vd" per line. With dim == 0 the width is
// taken from the first line and any later line of a different width is a
// DimensionError; with dim > 0 a line of the wrong width is a ParseError.
// Vocabulary tokens missing from the file get uniform(-0.1, 0.1) rows.
inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embeddings file " + path);
  std::unordered_map<std::string, std::vector<double>> found;
  std::string line;
  std::size_t lineno = 0;
  const bool fixed = dim > 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> values;
    std::string field;
    while (ls >> field) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      values.push_back(v);
    }
    if (values.empty()) throw ParseError(path + ":" + std::to_string(lineno) + ": no vector values");
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      const std::string msg = path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                              " values, got " + std::to_string(values.size());
      if (fixed) throw ParseError(msg);
      throw DimensionError(msg);
    }
    if (vocab.contains(token) && !found.count(token)) found.emplace(token, std::move(values));
  }
  if (dim == 0) throw ParseError(path + ": no embeddings and no dimension given");

  Tensor m({vocab.size(), dim});
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    auto it = found.find(vocab.token(r));
    for (std::size_t c = 0; c < dim; ++c) m.at(r, c) = it != found.end() ? it->second[c] : rng.uniform(-0.1, 0.1);
  }
  for (std::size_t c = 0; c < dim; ++c) m.at(kPad, c) = 0.0;
  return {std::move(m), true};
}

}  // namespace mpqg
