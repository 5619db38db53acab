#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/data.hpp"
#include "mpqg/decoder.hpp"
#include "mpqg/encoder.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/rng.hpp"
#include "mpqg/tape.hpp"
#include "mpqg/text.hpp"

namespace mpqg {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 300;
  std::size_t hidden = 100;          // contextual BiLSTM, per direction
  std::size_t smooth_hidden = 100;   // smoothing BiLSTM, per direction
  std::size_t decoder_hidden = 100;
  std::size_t attention_dim = 100;
  std::size_t output_hidden = 100;
  std::size_t perspectives = 5;

  std::size_t matching_width() const { return 8 * perspectives; }
  std::size_t memory_width() const { return 2 * hidden + 2 * smooth_hidden; }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},         {"embed_dim", embed_dim},
            {"hidden", hidden},                 {"smooth_hidden", smooth_hidden},
            {"decoder_hidden", decoder_hidden}, {"attention_dim", attention_dim},
            {"output_hidden", output_hidden},   {"perspectives", perspectives}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    auto get = [&](const char* k, std::size_t& dst) {
      if (!j.contains(k)) throw SchemaError(std::string("model config missing \"") + k + "\"");
      dst = j[k].get<std::size_t>();
    };
    get("vocab_size", c.vocab_size);
    get("embed_dim", c.embed_dim);
    get("hidden", c.hidden);
    get("smooth_hidden", c.smooth_hidden);
    get("decoder_hidden", c.decoder_hidden);
    get("attention_dim", c.attention_dim);
    get("output_hidden", c.output_hidden);
    get("perspectives", c.perspectives);
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// An example mapped to ids. Passage/query ids use <unk> for OOV tokens;
// gold ids are extended ids terminated by </s>.
struct PreparedExample {
  std::string id;
  Tokens passage;
  Tokens target;
  std::vector<TokenId> passage_ids;
  std::vector<TokenId> query_ids;
  ExtendedVocabMap extended;
  CopySource copy;
  std::vector<TokenId> gold;
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // without </s>
  bool ended = false;           // true when </s> was emitted
};

// Encoder + decoder over a shared vocabulary and embedding table.
class Seq2SeqModel {
 public:
  static inline const std::string kEmbedding = "embedding";

  Seq2SeqModel(ModelConfig config, Vocabulary vocab, EmbeddingTable embeddings, std::uint64_t seed)
      : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.vocab_size = vocab_.size();
    if (embeddings.rows() != vocab_.size())
      throw DimensionError("embedding table has " + std::to_string(embeddings.rows()) + " rows for a vocabulary of " +
                           std::to_string(vocab_.size()));
    config_.embed_dim = embeddings.dim();
    Rng rng(seed);
    init_params(std::move(embeddings), rng);
  }

  Seq2SeqModel(ModelConfig config, Vocabulary vocab, ModelParams params)
      : config_(std::move(config)), vocab_(std::move(vocab)), params_(std::move(params)) {
    if (config_.vocab_size != vocab_.size()) throw SchemaError("model config vocabulary size disagrees with vocabulary");
    validate_shapes();
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  EncoderParams encoder_params() {
    EncoderParams p;
    p.context_fwd = lstm_params(params_, "encoder.context.fwd");
    p.context_bwd = lstm_params(params_, "encoder.context.bwd");
    p.smooth_fwd = lstm_params(params_, "encoder.smooth.fwd");
    p.smooth_bwd = lstm_params(params_, "encoder.smooth.bwd");
    for (MatchStrategy s : kAllStrategies) {
      const std::string base = std::string("encoder.match.") + strategy_name(s);
      p.match[static_cast<std::size_t>(s)] = {&params_.at(base + ".fwd"), &params_.at(base + ".bwd")};
    }
    return p;
  }

  DecoderParams decoder_params() {
    DecoderParams p;
    p.lstm = lstm_params(params_, "decoder.lstm");
    p.attention = {&params_.at("decoder.attn.W_h"), &params_.at("decoder.attn.W_s"), &params_.at("decoder.attn.w_u"),
                   &params_.at("decoder.attn.b_e"), &params_.at("decoder.attn.v_e")};
    p.output = {&params_.at("decoder.out.V1"), &params_.at("decoder.out.b1"), &params_.at("decoder.out.V2"),
                &params_.at("decoder.out.b2")};
    p.copy = {&params_.at("decoder.copy.w_c"), &params_.at("decoder.copy.w_s"), &params_.at("decoder.copy.w_x"),
              &params_.at("decoder.copy.b_g")};
    return p;
  }

  // Embedding of a token id; extended ids read the <unk> row.
  Var embed(Tape& tape, TokenId id) {
    if (id >= vocab_.size()) id = kUnk;
    Parameter& e = params_.at(kEmbedding);
    if (e.frozen) {
      auto r = e.value.row(id);
      return tape.constant(Tensor::vector({r.begin(), r.end()}));
    }
    return row(tape.param(e), id);
  }

  std::vector<Var> embed_all(Tape& tape, const std::vector<TokenId>& ids) {
    std::vector<Var> out;
    out.reserve(ids.size());
    for (TokenId i : ids) out.push_back(embed(tape, i));
    return out;
  }

  PreparedExample prepare(const TrainingExample& ex) const {
    if (ex.passage.empty()) throw ContractError("example '" + ex.id + "' has an empty passage");
    if (ex.query.empty()) throw ContractError("example '" + ex.id + "' has an empty query");
    PreparedExample p;
    p.id = ex.id;
    p.passage = ex.passage;
    p.target = ex.target;
    p.passage_ids = vocab_.encode(ex.passage);
    p.query_ids = vocab_.encode(ex.query);
    p.extended = ExtendedVocabMap(vocab_, ex.passage);
    p.copy = make_copy_source(vocab_, p.extended, ex.passage);
    for (const auto& t : ex.target) p.gold.push_back(p.extended.id(vocab_, t));
    p.gold.push_back(kEos);
    return p;
  }

  struct Encoded {
    EncoderOutput encoder;
    DecoderMemory memory;
  };

  Encoded encode(Tape& tape, const PreparedExample& ex) {
    Encoded e;
    e.encoder = mpqg::encode(tape, encoder_params(), embed_all(tape, ex.passage_ids), embed_all(tape, ex.query_ids));
    e.memory = prepare_memory(tape, decoder_params(), e.encoder.memory);
    return e;
  }

  // Runs the decoder over `sequence` with teacher forcing: step t reads
  // <s> for t = 0 and sequence[t-1] afterwards.
  std::vector<StepOutput> teacher_force(Tape& tape, const PreparedExample& ex, const Encoded& enc,
                                        const std::vector<TokenId>& sequence) {
    const DecoderParams dp = decoder_params();
    DecoderState state = initial_state(tape, dp, enc.memory);
    std::vector<StepOutput> steps;
    TokenId prev = kSos;
    for (TokenId y : sequence) {
      steps.push_back(decoder_step(tape, dp, state, embed(tape, prev), enc.memory, ex.copy));
      state = steps.back().state;
      prev = y;
    }
    return steps;
  }

  // Greedy argmax decoding from <s>, stopping at </s> or after max_len tokens.
  DecodeResult greedy_decode(const PreparedExample& ex, std::size_t max_len) {
    if (max_len == 0) throw ContractError("greedy_decode: max_len must be at least 1");
    Tape tape;
    Encoded enc = encode(tape, ex);
    const DecoderParams dp = decoder_params();
    DecoderState state = initial_state(tape, dp, enc.memory);
    DecodeResult out;
    TokenId prev = kSos;
    while (out.tokens.size() < max_len) {
      StepOutput step = decoder_step(tape, dp, state, embed(tape, prev), enc.memory, ex.copy);
      const TokenId next = argmax_id(step.p_final.value());
      if (next == kEos) {
        out.ended = true;
        break;
      }
      out.tokens.push_back(next);
      state = step.state;
      prev = next;
    }
    return out;
  }

  // Surface tokens of an extended-id sequence, cut at the first </s>.
  Tokens surface(const PreparedExample& ex, const std::vector<TokenId>& ids) const {
    Tokens out;
    for (TokenId i : ids) {
      if (i == kEos) break;
      out.push_back(ex.extended.token(vocab_, i));
    }
    return out;
  }

 private:
  void init_params(EmbeddingTable embeddings, Rng& rng) {
    const auto& c = config_;
    auto uniform = [&](Shape shape) {
      Tensor t(std::move(shape));
      for (double& x : t.values()) x = rng.uniform(-0.1, 0.1);
      return t;
    };
    params_.add(kEmbedding, std::move(embeddings.matrix), embeddings.frozen);
    add_lstm_params(params_, "encoder.context.fwd", c.embed_dim, c.hidden, rng);
    add_lstm_params(params_, "encoder.context.bwd", c.embed_dim, c.hidden, rng);
    for (MatchStrategy s : kAllStrategies) {
      const std::string base = std::string("encoder.match.") + strategy_name(s);
      params_.add(base + ".fwd", uniform({c.perspectives, c.hidden}));
      params_.add(base + ".bwd", uniform({c.perspectives, c.hidden}));
    }
    add_lstm_params(params_, "encoder.smooth.fwd", c.matching_width(), c.smooth_hidden, rng);
    add_lstm_params(params_, "encoder.smooth.bwd", c.matching_width(), c.smooth_hidden, rng);

    const std::size_t w = c.memory_width();
    add_lstm_params(params_, "decoder.lstm", c.embed_dim + w, c.decoder_hidden, rng);
    params_.add("decoder.attn.W_h", uniform({c.attention_dim, w}));
    params_.add("decoder.attn.W_s", uniform({c.attention_dim, c.decoder_hidden}));
    params_.add("decoder.attn.w_u", uniform({c.attention_dim}));
    params_.add("decoder.attn.b_e", uniform({c.attention_dim}));
    params_.add("decoder.attn.v_e", uniform({c.attention_dim}));
    params_.add("decoder.out.V1", uniform({c.output_hidden, c.decoder_hidden + w}));
    params_.add("decoder.out.b1", uniform({c.output_hidden}));
    params_.add("decoder.out.V2", uniform({c.vocab_size, c.output_hidden}));
    params_.add("decoder.out.b2", uniform({c.vocab_size}));
    params_.add("decoder.copy.w_c", uniform({w}));
    params_.add("decoder.copy.w_s", uniform({c.decoder_hidden}));
    params_.add("decoder.copy.w_x", uniform({c.embed_dim}));
    params_.add("decoder.copy.b_g", uniform({1}));
  }

  void validate_shapes() {
    const auto& c = config_;
    auto expect = [&](const std::string& name, Shape shape) {
      const auto& have = params_.at(name).value.shape();
      if (have != shape)
        throw SchemaError("parameter " + name + " has shape " + shape_string(have) + ", expected " +
                          shape_string(shape));
    };
    const std::size_t w = c.memory_width();
    expect(kEmbedding, {c.vocab_size, c.embed_dim});
    for (const char* dir : {"fwd", "bwd"}) {
      expect(std::string("encoder.context.") + dir + ".W", {4 * c.hidden, c.embed_dim + c.hidden});
      expect(std::string("encoder.smooth.") + dir + ".W", {4 * c.smooth_hidden, c.matching_width() + c.smooth_hidden});
      for (MatchStrategy s : kAllStrategies)
        expect(std::string("encoder.match.") + strategy_name(s) + "." + dir, {c.perspectives, c.hidden});
    }
    expect("decoder.lstm.W", {4 * c.decoder_hidden, c.embed_dim + w + c.decoder_hidden});
    expect("decoder.attn.W_h", {c.attention_dim, w});
    expect("decoder.out.V2", {c.vocab_size, c.output_hidden});
    expect("decoder.copy.w_c", {w});
  }

  ModelConfig config_;
  Vocabulary vocab_;
  ModelParams params_;
};

}  // namespace mpqg
