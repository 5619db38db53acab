#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mpqg/errors.hpp"
#include "mpqg/kernels.hpp"
#include "mpqg/rng.hpp"
#include "mpqg/tape.hpp"

namespace mpqg {

// Standard LSTM cell over [input; previous hidden]. W stacks the input,
// forget, output and candidate blocks, in that order: W is 4h × (d + h).
struct LstmParams {
  Parameter* W = nullptr;
  Parameter* b = nullptr;

  std::size_t hidden() const { return b->value.size() / 4; }
  std::size_t input_dim() const { return W->value.cols() - hidden(); }
};

struct LstmState {
  Var h;
  Var c;
};

inline LstmParams add_lstm_params(ModelParams& params, const std::string& prefix, std::size_t input_dim,
                                  std::size_t hidden, Rng& rng) {
  Tensor W({4 * hidden, input_dim + hidden});
  for (double& x : W.values()) x = rng.uniform(-0.1, 0.1);
  Tensor b({4 * hidden});
  for (std::size_t i = 0; i < 4 * hidden; ++i) b[i] = (i >= hidden && i < 2 * hidden) ? 1.0 : rng.uniform(-0.1, 0.1);
  LstmParams p;
  p.W = &params.add(prefix + ".W", std::move(W));
  p.b = &params.add(prefix + ".b", std::move(b));
  return p;
}

inline LstmParams lstm_params(ModelParams& params, const std::string& prefix) {
  return {&params.at(prefix + ".W"), &params.at(prefix + ".b")};
}

inline LstmState lstm_zero_state(Tape& tape, std::size_t hidden) {
  return {tape.constant(Tensor::zeros({hidden})), tape.constant(Tensor::zeros({hidden}))};
}

inline LstmState lstm_step(Tape& tape, const LstmParams& p, const Var& x, const LstmState& prev) {
  const std::size_t h = p.hidden();
  if (x.size() != p.input_dim())
    throw DimensionError("lstm_step: input " + shape_string(x.shape()) + " for cell expecting " +
                         std::to_string(p.input_dim()));
  Var gates = add(matvec(tape.param(*p.W), concat({x, prev.h})), tape.param(*p.b));
  Var in = sigmoid(slice(gates, 0, h));
  Var forget = sigmoid(slice(gates, h, h));
  Var out = sigmoid(slice(gates, 2 * h, h));
  Var cand = tanh(slice(gates, 3 * h, h));
  Var c = add(mul(forget, prev.c), mul(in, cand));
  return {mul(out, tanh(c)), c};
}

inline std::vector<LstmState> run_lstm(Tape& tape, const LstmParams& p, const std::vector<Var>& inputs, bool reverse) {
  std::vector<LstmState> states(inputs.size());
  LstmState s = lstm_zero_state(tape, p.hidden());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t i = reverse ? inputs.size() - 1 - k : k;
    s = lstm_step(tape, p, inputs[i], s);
    states[i] = s;
  }
  return states;
}

// Per-position BiLSTM states. forward[i] has read tokens 0..i, backward[i]
// tokens i..N-1.
struct ContextualEncoding {
  std::vector<Var> forward;
  std::vector<Var> backward;

  std::size_t length() const { return forward.size(); }

  // [backward; forward] at position i.
  Var concatenated(std::size_t i) const { return concat({backward[i], forward[i]}); }

  Var matrix() const {
    std::vector<Var> rows;
    for (std::size_t i = 0; i < length(); ++i) rows.push_back(concatenated(i));
    return stack_rows(rows);
  }
};

inline ContextualEncoding encode_contextual(Tape& tape, const std::vector<Var>& embeds, const LstmParams& fwd,
                                            const LstmParams& bwd) {
  if (embeds.empty()) throw ContractError("encode_contextual: empty input sequence");
  ContextualEncoding enc;
  for (const auto& s : run_lstm(tape, fwd, embeds, false)) enc.forward.push_back(s.h);
  for (const auto& s : run_lstm(tape, bwd, embeds, true)) enc.backward.push_back(s.h);
  return enc;
}

// f_m: l cosine similarities between v1 and v2, each under one row of W.
inline Var multi_perspective_match(const Var& v1, const Var& v2, const Var& W) {
  return multi_perspective_cosine(v1, v2, W);
}

enum class MatchStrategy { kFull = 0, kMaxpooling = 1, kAttentive = 2, kMaxAttentive = 3 };

inline constexpr std::array<MatchStrategy, 4> kAllStrategies = {
    MatchStrategy::kFull, MatchStrategy::kMaxpooling, MatchStrategy::kAttentive, MatchStrategy::kMaxAttentive};

inline const char* strategy_name(MatchStrategy s) {
  switch (s) {
    case MatchStrategy::kFull: return "full";
    case MatchStrategy::kMaxpooling: return "maxpooling";
    case MatchStrategy::kAttentive: return "attentive";
    case MatchStrategy::kMaxAttentive: return "max_attentive";
  }
  return "?";
}

namespace detail {

inline void require_query(const ContextualEncoding& query, const char* op) {
  if (query.length() == 0) throw ContractError(std::string(op) + ": empty query");
}

// Applies `per_direction(passage_states, query_states, W)` to the forward
// and backward halves and stacks [fwd ; bwd] per passage position.
template <typename PerDirection>
Var match_both_directions(const ContextualEncoding& passage, const ContextualEncoding& query, const Var& W_fwd,
                          const Var& W_bwd, PerDirection per_direction) {
  std::vector<Var> f = per_direction(passage.forward, query.forward, W_fwd, true);
  std::vector<Var> b = per_direction(passage.backward, query.backward, W_bwd, false);
  std::vector<Var> rows;
  for (std::size_t j = 0; j < f.size(); ++j) rows.push_back(concat({f[j], b[j]}));
  return stack_rows(rows);
}

}  // namespace detail

// Each passage state against the query's final state in that direction:
// the last token for forward, the first token for backward.
inline Var full_matching(const ContextualEncoding& passage, const ContextualEncoding& query, const Var& W_fwd,
                         const Var& W_bwd) {
  detail::require_query(query, "full_matching");
  return detail::match_both_directions(
      passage, query, W_fwd, W_bwd,
      [](const std::vector<Var>& p, const std::vector<Var>& q, const Var& W, bool forward) {
        const Var& last = forward ? q.back() : q.front();
        std::vector<Var> out;
        for (const auto& pj : p) out.push_back(multi_perspective_match(pj, last, W));
        return out;
      });
}

// Per perspective, the maximum of f_m over all query positions.
inline Var maxpooling_matching(const ContextualEncoding& passage, const ContextualEncoding& query, const Var& W_fwd,
                               const Var& W_bwd) {
  detail::require_query(query, "maxpooling_matching");
  return detail::match_both_directions(
      passage, query, W_fwd, W_bwd, [](const std::vector<Var>& p, const std::vector<Var>& q, const Var& W, bool) {
        std::vector<Var> out;
        for (const auto& pj : p) {
          std::vector<Var> per_query;
          for (const auto& qi : q) per_query.push_back(multi_perspective_match(pj, qi, W));
          out.push_back(max_over(stack_rows(per_query), 0));
        }
        return out;
      });
}

// Attentive vector = Σ_i cos(p_j, q_i)·q_i / (Σ_i cos(p_j, q_i) + 1e-8), then f_m(p_j, attentive).
inline constexpr double kAttentiveEpsilon = 1e-8;

inline Var attentive_matching(const ContextualEncoding& passage, const ContextualEncoding& query, const Var& W_fwd,
                              const Var& W_bwd) {
  detail::require_query(query, "attentive_matching");
  return detail::match_both_directions(
      passage, query, W_fwd, W_bwd, [](const std::vector<Var>& p, const std::vector<Var>& q, const Var& W, bool) {
        Var qm = stack_rows(q);
        std::vector<Var> out;
        for (const auto& pj : p) {
          std::vector<Var> weights;
          for (const auto& qi : q) weights.push_back(cosine(pj, qi));
          Var w = concat(weights);
          Var attended = divide_by(vecmat(w, qm), add_const(sum(w), kAttentiveEpsilon));
          out.push_back(multi_perspective_match(pj, attended, W));
        }
        return out;
      });
}

// Index of the query state most cosine-similar to `p` (smallest index on ties).
inline std::size_t most_similar(const Var& p, const std::vector<Var>& q) {
  std::size_t best = 0;
  double bv = -2.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double c = cosine_value(p.value().values(), q[i].value().values());
    if (c > bv) {
      bv = c;
      best = i;
    }
  }
  return best;
}

inline Var max_attentive_matching(const ContextualEncoding& passage, const ContextualEncoding& query,
                                  const Var& W_fwd, const Var& W_bwd) {
  detail::require_query(query, "max_attentive_matching");
  return detail::match_both_directions(
      passage, query, W_fwd, W_bwd, [](const std::vector<Var>& p, const std::vector<Var>& q, const Var& W, bool) {
        std::vector<Var> out;
        for (const auto& pj : p) out.push_back(multi_perspective_match(pj, q[most_similar(pj, q)], W));
        return out;
      });
}

inline Var match(MatchStrategy s, const ContextualEncoding& passage, const ContextualEncoding& query, const Var& W_fwd,
                 const Var& W_bwd) {
  switch (s) {
    case MatchStrategy::kFull: return full_matching(passage, query, W_fwd, W_bwd);
    case MatchStrategy::kMaxpooling: return maxpooling_matching(passage, query, W_fwd, W_bwd);
    case MatchStrategy::kAttentive: return attentive_matching(passage, query, W_fwd, W_bwd);
    case MatchStrategy::kMaxAttentive: return max_attentive_matching(passage, query, W_fwd, W_bwd);
  }
  throw ContractError("unknown matching strategy");
}

// Attention memory H: one row per passage position, [h^p_j ; smoothed m_j].
struct MultiPerspectiveMemory {
  Var rows;  // N × width

  std::size_t positions() const { return rows.value().rows(); }
  std::size_t width() const { return rows.value().cols(); }
};

inline MultiPerspectiveMemory build_memory(Tape& tape, const ContextualEncoding& passage, const Var& matching,
                                           const LstmParams& smooth_fwd, const LstmParams& smooth_bwd) {
  if (matching.value().rank() != 2) throw DimensionError("build_memory: matching must be a matrix");
  const std::size_t n = matching.value().rows();
  if (n == 0 || n != passage.length())
    throw ContractError("build_memory: " + std::to_string(passage.length()) + " contextual positions but " +
                        std::to_string(n) + " matching vectors");
  std::vector<Var> inputs;
  for (std::size_t j = 0; j < n; ++j) inputs.push_back(row(matching, j));
  ContextualEncoding smoothed = encode_contextual(tape, inputs, smooth_fwd, smooth_bwd);
  std::vector<Var> rows;
  for (std::size_t j = 0; j < n; ++j) rows.push_back(concat({passage.concatenated(j), smoothed.concatenated(j)}));
  return {stack_rows(rows)};
}

struct EncoderParams {
  LstmParams context_fwd, context_bwd;
  LstmParams smooth_fwd, smooth_bwd;
  std::array<std::array<Parameter*, 2>, 4> match{};  // [strategy][0 = forward, 1 = backward]
};

struct EncoderOutput {
  ContextualEncoding passage;
  ContextualEncoding query;
  Var matching;  // N × 8l
  MultiPerspectiveMemory memory;
};

// Shared contextual BiLSTM over passage and query, the four matching
// strategies, then the smoothing BiLSTM.
inline EncoderOutput encode(Tape& tape, const EncoderParams& p, const std::vector<Var>& passage_embeds,
                            const std::vector<Var>& query_embeds) {
  EncoderOutput out;
  out.passage = encode_contextual(tape, passage_embeds, p.context_fwd, p.context_bwd);
  out.query = encode_contextual(tape, query_embeds, p.context_fwd, p.context_bwd);
  std::vector<Var> blocks;
  for (MatchStrategy s : kAllStrategies) {
    const auto& w = p.match[static_cast<std::size_t>(s)];
    blocks.push_back(match(s, out.passage, out.query, tape.param(*w[0]), tape.param(*w[1])));
  }
  out.matching = concat_cols(blocks);
  out.memory = build_memory(tape, out.passage, out.matching, p.smooth_fwd, p.smooth_bwd);
  return out;
}

}  // namespace mpqg
