#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/checkpoint.hpp"
#include "mpqg/config.hpp"
#include "mpqg/data.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/grad_check.hpp"
#include "mpqg/kernels.hpp"
#include "mpqg/metrics.hpp"
#include "mpqg/model.hpp"
#include "mpqg/rl.hpp"
#include "mpqg/training.hpp"

namespace mpqg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitBadConfig = 2;

// Raised for configuration problems detected before any work starts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// TrainConfig plus file locations. The JSON form is flat: training keys and
// path keys live side by side.
struct RunConfig {
  TrainConfig train;
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::string embeddings_path;
  std::string checkpoint_dir = "checkpoints";
  std::string init_checkpoint;
  std::string data_format = "jsonl";  // "jsonl" or "squad"

  void update_from_json(const nlohmann::json& j) {
    try {
      train.update_from_json(j);
      auto get = [&](const char* key, std::string& dst) {
        if (!j.contains(key)) return;
        if (!j[key].is_string()) throw SchemaError(std::string("config key \"") + key + "\" must be a string");
        dst = j[key].get<std::string>();
      };
      get("train", train_path);
      get("dev", dev_path);
      get("test", test_path);
      get("embeddings", embeddings_path);
      get("checkpoint_dir", checkpoint_dir);
      get("init_checkpoint", init_checkpoint);
      get("data_format", data_format);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = train.to_json();
    j["train"] = train_path;
    j["dev"] = dev_path;
    j["test"] = test_path;
    j["embeddings"] = embeddings_path;
    j["checkpoint_dir"] = checkpoint_dir;
    j["init_checkpoint"] = init_checkpoint;
    j["data_format"] = data_format;
    return j;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
    RunConfig c;
    c.update_from_json(j);
    return c;
  }

  // Checks everything a training command needs before it starts.
  void validate_for_training(bool needs_init_checkpoint) const {
    try {
      train.validate();
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
    if (!(train.lr_ce > 0.0) || !(train.lr_rl > 0.0)) throw ConfigError("learning rates must be positive");
    if (data_format != "jsonl" && data_format != "squad")
      throw ConfigError("data_format must be \"jsonl\" or \"squad\", got \"" + data_format + "\"");
    if (train_path.empty()) throw ConfigError("no training data path given (key \"train\")");
    auto require = [](const std::string& path, const char* what) {
      if (!path.empty() && !std::filesystem::exists(path))
        throw ConfigError(std::string(what) + " path does not exist: " + path);
    };
    require(train_path, "training data");
    require(dev_path, "dev data");
    require(test_path, "test data");
    require(embeddings_path, "embeddings");
    if (needs_init_checkpoint && init_checkpoint.empty())
      throw ConfigError("finetune needs a pretrained checkpoint (key \"init_checkpoint\")");
    require(init_checkpoint, "init checkpoint");
    if (checkpoint_dir.empty()) throw ConfigError("checkpoint_dir must not be empty");
  }

  std::vector<TrainingExample> load(const std::string& path) const {
    if (path.empty()) return {};
    return data_format == "squad" ? squad_adapter(path, train.mode, train.max_passage_len)
                                  : load_jsonl(path, train.max_passage_len);
  }
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw LoadError("cannot write " + path.string());
  }
  void write(const EpochRecord& r) { out_ << r.to_json().dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

inline void write_run_outputs(const std::filesystem::path& dir, const TrainResult& result) {
  save_checkpoint(result.best, (dir / "best.ckpt").string());
  save_checkpoint(result.last, (dir / "last.ckpt").string());
}

inline void report_epoch(std::ostream& out, const EpochRecord& r) {
  out << r.phase << " epoch " << r.epoch << " loss " << std::setprecision(6) << r.loss;
  if (r.dev_metric) out << " dev " << *r.dev_metric;
  if (r.reward_greedy) out << " reward_greedy " << *r.reward_greedy << " reward_sampled " << *r.reward_sampled;
  out << '\n';
}

}  // namespace detail

inline int cmd_train(const RunConfig& config, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    config.validate_for_training(false);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadConfig;
  }
  try {
    const auto train_set = config.load(config.train_path);
    const auto dev_set = config.load(config.dev_path);
    Seq2SeqModel model = build_model(train_set, config.train, config.embeddings_path);
    const std::filesystem::path dir(config.checkpoint_dir);
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "vocab.json", model.vocab().to_json().dump() + "\n");
    detail::MetricsLog log(dir / "metrics.jsonl");
    const TrainResult result = train(train_set, dev_set, model, config.train, [&](const EpochRecord& r) {
      log.write(r);
      detail::report_epoch(out, r);
    });
    detail::write_run_outputs(dir, result);
    out << "best epoch " << result.best_epoch << ", checkpoints in " << dir.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline int cmd_finetune(const RunConfig& config, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    config.validate_for_training(true);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadConfig;
  }
  try {
    Seq2SeqModel model = load_checkpoint(config.init_checkpoint).model();
    const auto train_set = config.load(config.train_path);
    const auto dev_set = config.load(config.dev_path);
    const std::filesystem::path dir(config.checkpoint_dir);
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "vocab.json", model.vocab().to_json().dump() + "\n");
    detail::MetricsLog log(dir / "metrics.jsonl");
    const TrainResult result = finetune(train_set, dev_set, model, config.train, [&](const EpochRecord& r) {
      log.write(r);
      detail::report_epoch(out, r);
    });
    detail::write_run_outputs(dir, result);
    out << "best epoch " << result.best_epoch << ", checkpoints in " << dir.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

struct GenerateOptions {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string vocab;  // optional vocab.json that must match the checkpoint
  std::size_t max_decode_len = 0;  // 0 takes the checkpoint's setting
};

// Greedy decode of every input example; writes {"id", "output"} per line.
inline int cmd_generate(const GenerateOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const Checkpoint ck = load_checkpoint(opt.checkpoint);
    if (!opt.vocab.empty()) {
      std::ifstream vin(opt.vocab);
      if (!vin) throw LoadError("cannot open vocabulary " + opt.vocab);
      if (!(Vocabulary::from_json(nlohmann::json::parse(vin)) == ck.vocab))
        throw SchemaError("vocabulary " + opt.vocab + " does not match checkpoint " + opt.checkpoint);
    }
    Seq2SeqModel model = ck.model();
    const std::size_t max_len = opt.max_decode_len ? opt.max_decode_len : ck.train_config.max_decode_len;
    const auto examples = load_jsonl(opt.input, ck.train_config.max_passage_len);
    std::ofstream o(opt.output, std::ios::binary | std::ios::trunc);
    if (!o) throw LoadError("cannot write " + opt.output);
    for (const auto& ex : examples) {
      const PreparedExample p = model.prepare(ex);
      const DecodeResult d = model.greedy_decode(p, max_len);
      o << nlohmann::json{{"id", ex.id}, {"output", detokenize(model.surface(p, d.tokens))}}.dump() << '\n';
    }
    out << "generated " << examples.size() << " outputs to " << opt.output << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

struct EvaluateOptions {
  std::string predictions;  // {"id", "output"} lines
  std::string references;   // canonical examples, or {"id", "output"} lines
  Metric metric = Metric::kBleu4;
  std::string report;  // optional report path
};

namespace detail {

// id → text from a JSONL file, reading `field` (falling back to "output").
inline std::vector<std::pair<std::string, std::string>> read_id_text(const std::string& path, const char* field) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id")) throw SchemaError(where + ": missing field \"id\"");
    const std::string id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    const char* key = j.contains(field) ? field : "output";
    if (!j.contains(key) || !j[key].is_string())
      throw SchemaError(where + ": missing string field \"" + std::string(field) + "\"");
    rows.emplace_back(id, j[key].get<std::string>());
  }
  return rows;
}

}  // namespace detail

inline int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const auto preds = detail::read_id_text(opt.predictions, "output");
    const auto refs = detail::read_id_text(opt.references, "target");
    std::map<std::string, std::string> by_id;
    for (const auto& [id, text] : preds) by_id.emplace(id, text);
    std::set<std::string> ref_ids;
    std::vector<ScoredPair> pairs;
    for (const auto& [id, text] : refs) {
      ref_ids.insert(id);
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        err << "error: prediction missing for id " << id << '\n';
        return kExitFailure;
      }
      pairs.push_back({id, tokenize(it->second), tokenize(text)});
    }
    for (const auto& [id, _] : preds)
      if (!ref_ids.count(id)) {
        err << "error: reference missing for id " << id << '\n';
        return kExitFailure;
      }
    const CorpusScore s = corpus_metric(pairs, opt.metric);
    if (!opt.report.empty()) detail::write_file(opt.report, s.to_json().dump(2) + "\n");
    out << metric_name(opt.metric) << ' ' << std::setprecision(10) << s.mean << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// Toy instance shared by the gradient-check blocks.
struct GradcheckInstance {
  Seq2SeqModel model;
  PreparedExample example;
};

inline GradcheckInstance make_gradcheck_instance(std::uint64_t seed) {
  TrainingExample ex;
  ex.id = "gradcheck";
  ex.passage = {"the", "river", "flows", "past", "zorvik"};
  ex.query = {"which", "river", "flows"};
  ex.target = {"river", "flows", "zorvik"};
  Vocabulary vocab(Tokens{"the", "river", "flows", "past", "which", "city", "a"});
  ModelConfig mc;
  mc.embed_dim = 6;
  mc.hidden = mc.smooth_hidden = mc.decoder_hidden = mc.attention_dim = mc.output_hidden = 8;
  mc.perspectives = 2;
  Rng rng(seed);
  EmbeddingTable table = random_embeddings(vocab, mc.embed_dim, rng);
  Seq2SeqModel model(mc, std::move(vocab), std::move(table), rng.next_u64());
  PreparedExample p = model.prepare(ex);
  return {std::move(model), std::move(p)};
}

struct GradcheckBlock {
  std::string name;
  GradCheckResult result;
  bool passed = false;
};

inline std::vector<std::string> param_names_with_prefix(const ModelParams& params, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& [name, p] : params)
    if (!p.frozen && name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

// Central-difference checks of the encoder, one decoder step, the
// cross-entropy plus coverage loss and the policy-gradient loss.
inline std::vector<GradcheckBlock> run_gradcheck(std::uint64_t seed, double tolerance) {
  GradcheckInstance inst = make_gradcheck_instance(seed);
  Seq2SeqModel& model = inst.model;
  const PreparedExample& ex = inst.example;
  Rng rng = Rng(seed).fork(7);

  const std::size_t w = model.config().memory_width();
  const std::size_t n = ex.passage_ids.size();
  Tensor memory_weights({n, w});
  for (double& x : memory_weights.values()) x = rng.uniform(-1.0, 1.0);
  Tensor decoder_memory({n, w});
  for (double& x : decoder_memory.values()) x = rng.uniform(-0.5, 0.5);

  std::vector<GradcheckBlock> blocks;
  auto run = [&](const std::string& name, const LossOfParams& f, const std::vector<std::string>& names) {
    GradcheckBlock b;
    b.name = name;
    b.result = grad_check_params(f, model.params(), names);
    b.passed = b.result.max_rel_error < tolerance;
    blocks.push_back(std::move(b));
  };

  run(
      "encoder",
      [&](Tape& tape) {
        auto enc = model.encode(tape, ex);
        return sum(mul(enc.encoder.memory.rows, tape.constant(memory_weights)));
      },
      param_names_with_prefix(model.params(), "encoder."));

  run(
      "decoder_step",
      [&](Tape& tape) {
        const DecoderParams dp = model.decoder_params();
        MultiPerspectiveMemory mem{tape.constant(decoder_memory)};
        DecoderMemory dm = prepare_memory(tape, dp, mem);
        DecoderState s0 = initial_state(tape, dp, dm);
        StepOutput s1 = decoder_step(tape, dp, s0, model.embed(tape, kSos), dm, ex.copy);
        StepOutput s2 = decoder_step(tape, dp, s1.state, model.embed(tape, ex.gold[0]), dm, ex.copy);
        Var nll = negative_log_likelihood({s1.p_final, s2.p_final}, {ex.gold[0], ex.gold[1]});
        return add(nll, coverage_loss({s1.attention, s2.attention}, {s1.prev_coverage, s2.prev_coverage}));
      },
      param_names_with_prefix(model.params(), "decoder."));

  run(
      "ce_coverage_loss",
      [&](Tape& tape) { return cross_entropy_loss(tape, model, ex, 0.1).total; }, {});

  // Y^s differs from Ŷ so the reward coefficient is nonzero.
  const std::vector<TokenId> greedy = {ex.gold[0], ex.gold[0], kEos};
  run(
      "rl_loss",
      [&](Tape& tape) { return rl_loss(tape, model, ex, ex.gold, greedy, RewardSpec{Metric::kBleu4}).loss; }, {});
  return blocks;
}

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  bool inject_fault = false;  // corrupt the tanh backward pass
};

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  double& fault = testing_hooks::tanh_backward_scale();
  const double saved = fault;
  if (opt.inject_fault) fault = 1.5;
  std::vector<GradcheckBlock> blocks;
  try {
    blocks = run_gradcheck(opt.seed, opt.tolerance);
  } catch (const std::exception& e) {
    fault = saved;
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  fault = saved;
  int code = kExitOk;
  for (const auto& b : blocks) {
    out << nlohmann::json{{"block", b.name},
                          {"max_rel_error", b.result.max_rel_error},
                          {"coordinates", b.result.coordinates},
                          {"worst", b.result.worst},
                          {"passed", b.passed}}
               .dump()
        << '\n';
    if (!b.passed) {
      err << "gradcheck failed in block " << b.name << ": max relative error " << b.result.max_rel_error
          << " >= " << opt.tolerance << " at " << b.result.worst << '\n';
      code = kExitFailure;
    }
  }
  return code;
}

}  // namespace mpqg
