#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mpqg/encoder.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/kernels.hpp"
#include "mpqg/tape.hpp"
#include "mpqg/text.hpp"

namespace mpqg {

struct AttentionParams {
  Parameter* W_h = nullptr;  // a × memory width
  Parameter* W_s = nullptr;  // a × decoder hidden
  Parameter* w_u = nullptr;  // a, scales the per-position coverage scalar
  Parameter* b_e = nullptr;  // a
  Parameter* v_e = nullptr;  // a
};

struct OutputProjectionParams {
  Parameter* V1 = nullptr;  // o × (hidden + width)
  Parameter* b1 = nullptr;
  Parameter* V2 = nullptr;  // vocab × o
  Parameter* b2 = nullptr;
};

struct CopyGateParams {
  Parameter* w_c = nullptr;
  Parameter* w_s = nullptr;
  Parameter* w_x = nullptr;
  Parameter* b_g = nullptr;  // [1]
};

struct DecoderParams {
  LstmParams lstm;  // input is [x_{t-1} ; c_{t-1}]
  AttentionParams attention;
  OutputProjectionParams output;
  CopyGateParams copy;
};

// Where copied attention mass lands: the extended id of every passage
// position and the size of the extended vocabulary.
struct CopySource {
  std::vector<TokenId> passage_ids;
  std::size_t extended_size = 0;
};

inline CopySource make_copy_source(const Vocabulary& vocab, const ExtendedVocabMap& ext, const Tokens& passage) {
  CopySource src;
  for (const auto& t : passage) src.passage_ids.push_back(ext.id(vocab, t));
  src.extended_size = ext.size();
  return src;
}

// Memory with the step-independent attention term W_h·h_i precomputed.
struct DecoderMemory {
  Var rows;       // N × width
  Var projected;  // N × a

  std::size_t positions() const { return rows.value().rows(); }
  std::size_t width() const { return rows.value().cols(); }
};

inline DecoderMemory prepare_memory(Tape& tape, const DecoderParams& p, const MultiPerspectiveMemory& memory) {
  if (!memory.rows.valid() || memory.positions() == 0) throw ContractError("decoder: empty memory");
  return {memory.rows, matmul(memory.rows, transpose(tape.param(*p.attention.W_h)))};
}

// (s_t, cell, c_t, u_t, t). The initial state (t = -1) is all zeros.
struct DecoderState {
  LstmState lstm;
  Var context;
  Var coverage;
  int step = -1;
};

inline DecoderState initial_state(Tape& tape, const DecoderParams& p, const DecoderMemory& memory) {
  DecoderState s;
  s.lstm = lstm_zero_state(tape, p.lstm.hidden());
  s.context = tape.constant(Tensor::zeros({memory.width()}));
  s.coverage = tape.constant(Tensor::zeros({memory.positions()}));
  return s;
}

struct StepOutput {
  DecoderState state;
  Var attention;  // α_t over passage positions
  Var gate;       // g_t, probability of generating from the vocabulary
  Var p_vocab;    // base vocabulary
  Var p_attn;     // extended vocabulary
  Var p_final;    // extended vocabulary
  Var prev_coverage;  // u_{t-1}, kept for the coverage loss
};

inline StepOutput decoder_step(Tape& tape, const DecoderParams& p, const DecoderState& state,
                               const Var& prev_embedding, const DecoderMemory& memory, const CopySource& copy) {
  if (!memory.rows.valid() || memory.positions() == 0) throw ContractError("decoder_step: empty memory");
  if (copy.passage_ids.size() != memory.positions())
    throw ContractError("decoder_step: copy source covers " + std::to_string(copy.passage_ids.size()) +
                        " positions, memory has " + std::to_string(memory.positions()));
  const auto& a = p.attention;
  StepOutput out;
  out.prev_coverage = state.coverage;

  // s_t = LSTM(s_{t-1}, [x_{t-1}, c_{t-1}])
  out.state.lstm = lstm_step(tape, p.lstm, concat({prev_embedding, state.context}), state.lstm);
  const Var& s = out.state.lstm.h;

  // e_{t,i} = v_e · tanh(W_h h_i + W_s s_t + w_u u_{t-1,i} + b_e)
  Var per_step = add(matvec(tape.param(*a.W_s), s), tape.param(*a.b_e));
  Var pre = add(add_row(memory.projected, per_step), outer(state.coverage, tape.param(*a.w_u)));
  Var scores = matvec(tanh(pre), tape.param(*a.v_e));
  out.attention = softmax(scores);

  out.state.coverage = add(state.coverage, out.attention);
  out.state.context = vecmat(out.attention, memory.rows);
  out.state.step = state.step + 1;

  const auto& o = p.output;
  Var hidden = add(matvec(tape.param(*o.V1), concat({s, out.state.context})), tape.param(*o.b1));
  out.p_vocab = softmax(add(matvec(tape.param(*o.V2), hidden), tape.param(*o.b2)));

  const auto& g = p.copy;
  Var gate_logit = add_n({dot(tape.param(*g.w_c), out.state.context), dot(tape.param(*g.w_s), s),
                          dot(tape.param(*g.w_x), prev_embedding), tape.param(*g.b_g)});
  out.gate = sigmoid(gate_logit);

  const std::size_t vocab = out.p_vocab.size();
  const std::size_t ext = std::max(copy.extended_size, vocab);
  out.p_attn = scatter_add(out.attention, copy.passage_ids, ext);
  out.p_final = interpolate(out.gate, pad(out.p_vocab, ext), out.p_attn);
  return out;
}

// First maximum (smallest id on ties).
inline TokenId argmax_id(const Tensor& dist) {
  TokenId best = 0;
  for (TokenId i = 1; i < dist.size(); ++i)
    if (dist[i] > dist[best]) best = i;
  return best;
}

}  // namespace mpqg
