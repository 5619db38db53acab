// Command-line driver: train, finetune, generate, evaluate, gradcheck.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mpqg/commands.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

struct TrainFlags {
  std::string train, dev, embeddings, checkpoint_dir, init_checkpoint;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "JSON config file with flat keys");
  app->add_option("--seed", f.seed, "random seed (overrides the config file)");
  app->add_option("--mode", f.mode, "task mode: qg or qa")->check(CLI::IsMember({"qg", "qa"}));
}

void add_training(CLI::App* app, TrainFlags& f) {
  app->add_option("--train", f.train, "training data");
  app->add_option("--dev", f.dev, "dev data for model selection");
  app->add_option("--embeddings", f.embeddings, "pretrained embeddings text file");
  app->add_option("--checkpoint-dir", f.checkpoint_dir, "output directory");
  app->add_option("--epochs", f.epochs, "number of epochs for this phase");
}

// Config file first, then command-line overrides.
mpqg::RunConfig resolve(const CommonFlags& c, const TrainFlags& t, bool rl_phase) {
  mpqg::RunConfig cfg;
  if (!c.config_path.empty()) cfg = mpqg::RunConfig::from_file(c.config_path);
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.mode) cfg.train.mode = mpqg::parse_mode(*c.mode);
  if (!t.train.empty()) cfg.train_path = t.train;
  if (!t.dev.empty()) cfg.dev_path = t.dev;
  if (!t.embeddings.empty()) cfg.embeddings_path = t.embeddings;
  if (!t.checkpoint_dir.empty()) cfg.checkpoint_dir = t.checkpoint_dir;
  if (!t.init_checkpoint.empty()) cfg.init_checkpoint = t.init_checkpoint;
  if (t.epochs) (rl_phase ? cfg.train.epochs_rl : cfg.train.epochs_ce) = *t.epochs;
  return cfg;
}

int run_training(const CommonFlags& c, const TrainFlags& t, bool rl_phase) {
  mpqg::RunConfig cfg;
  try {
    cfg = resolve(c, t, rl_phase);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mpqg::kExitBadConfig;
  }
  return rl_phase ? mpqg::cmd_finetune(cfg) : mpqg::cmd_train(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-based question generation and answering"};
  app.require_subcommand(1);

  CommonFlags train_common, finetune_common, gradcheck_common;
  TrainFlags train_flags, finetune_flags;

  auto* train = app.add_subcommand("train", "cross-entropy pretraining");
  add_common(train, train_common);
  add_training(train, train_flags);

  auto* finetune = app.add_subcommand("finetune", "policy-gradient fine-tuning from a checkpoint");
  add_common(finetune, finetune_common);
  add_training(finetune, finetune_flags);
  finetune->add_option("--init-checkpoint", finetune_flags.init_checkpoint, "pretrained checkpoint");

  mpqg::GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "greedy decoding of a JSONL file");
  generate->add_option("--checkpoint", gen.checkpoint, "model checkpoint")->required();
  generate->add_option("--input", gen.input, "input JSONL")->required();
  generate->add_option("--output", gen.output, "output JSONL of {id, output}")->required();
  generate->add_option("--vocab", gen.vocab, "vocab.json that must match the checkpoint");
  generate->add_option("--max-len", gen.max_decode_len, "maximum output length");

  mpqg::EvaluateOptions eval;
  std::string metric = "bleu4";
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against references");
  evaluate->add_option("--predictions", eval.predictions, "JSONL of {id, output}")->required();
  evaluate->add_option("--references", eval.references, "JSONL with id and target")->required();
  evaluate->add_option("--metric", metric, "bleu4 or rouge_l");
  evaluate->add_option("--report", eval.report, "write the per-example report here");

  mpqg::GradcheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck, gradcheck_common);
  gradcheck->add_option("--tolerance", gc.tolerance, "maximum relative error");
  gradcheck->add_flag("--inject-fault", gc.inject_fault, "corrupt a backward pass on purpose");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mpqg::kExitBadConfig;
  }

  if (train->parsed()) return run_training(train_common, train_flags, false);
  if (finetune->parsed()) return run_training(finetune_common, finetune_flags, true);
  if (generate->parsed()) return mpqg::cmd_generate(gen);
  if (evaluate->parsed()) {
    try {
      eval.metric = mpqg::parse_metric(metric);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return mpqg::kExitBadConfig;
    }
    return mpqg::cmd_evaluate(eval);
  }
  if (gradcheck->parsed()) {
    try {
      gc.seed = resolve(gradcheck_common, TrainFlags{}, false).train.seed;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return mpqg::kExitBadConfig;
    }
    return mpqg::cmd_gradcheck(gc);
  }
  return mpqg::kExitBadConfig;
}
