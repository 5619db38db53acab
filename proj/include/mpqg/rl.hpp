#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mpqg/adam.hpp"
#include "mpqg/checkpoint.hpp"
#include "mpqg/config.hpp"
#include "mpqg/data.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/metrics.hpp"
#include "mpqg/model.hpp"
#include "mpqg/training.hpp"

namespace mpqg {

struct SampledTriple {
  std::vector<TokenId> gold;     // Y*
  std::vector<TokenId> greedy;   // Ŷ
  std::vector<TokenId> sampled;  // Y^s, same length as Y*
  std::vector<bool> flipped;     // position took Ŷ[i]
};

// Walks Y*; at each position still inside Ŷ a uniform draw below p_flip
// takes Ŷ[i] instead of Y*[i]. Past the end of Ŷ the gold token is kept
// and no draw is made.
inline SampledTriple scheduled_sample(const std::vector<TokenId>& gold, const std::vector<TokenId>& greedy,
                                      double p_flip, Rng& rng) {
  if (gold.empty()) throw ContractError("scheduled_sample: empty gold sequence");
  if (p_flip < 0.0 || p_flip > 1.0) throw ContractError("scheduled_sample: p_flip must lie in [0, 1]");
  SampledTriple out{gold, greedy, {}, {}};
  out.sampled.reserve(gold.size());
  out.flipped.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool flip = i < greedy.size() && rng.uniform() < p_flip;
    out.sampled.push_back(flip ? greedy[i] : gold[i]);
    out.flipped.push_back(flip);
  }
  return out;
}

struct RewardSpec {
  Metric metric = Metric::kBleu4;

  static RewardSpec for_mode(TaskMode mode) { return {task_metric(mode)}; }

  // Sentence-level reward of an extended-id sequence, read up to </s>.
  double operator()(const Seq2SeqModel& model, const PreparedExample& ex, const std::vector<TokenId>& ids) const {
    return score(metric, model.surface(ex, ids), ex.target);
  }
};

struct RlLossTerms {
  Var loss;
  double reward_greedy = 0.0;
  double reward_sampled = 0.0;

  // r(Ŷ) - r(Y^s), a constant with respect to the parameters.
  double coefficient() const { return reward_greedy - reward_sampled; }
};

// (r(Ŷ) - r(Y^s)) · Σ_t log P_final(y^s_t), teacher-forced on Y^s.
inline RlLossTerms rl_loss(Tape& tape, Seq2SeqModel& model, const PreparedExample& ex,
                           const std::vector<TokenId>& sampled, const std::vector<TokenId>& greedy,
                           const RewardSpec& reward) {
  if (sampled.empty()) throw ContractError("rl_loss: empty sampled sequence");
  RlLossTerms out;
  out.reward_greedy = reward(model, ex, greedy);
  out.reward_sampled = reward(model, ex, sampled);
  auto enc = model.encode(tape, ex);
  auto steps = model.teacher_force(tape, ex, enc, sampled);
  std::vector<Var> dists;
  for (const auto& s : steps) dists.push_back(s.p_final);
  out.loss = scale(negative_log_likelihood(dists, sampled), -out.coefficient());
  return out;
}

// Greedy decode as an id sequence, with </s> appended when it was emitted.
inline std::vector<TokenId> greedy_sequence(Seq2SeqModel& model, const PreparedExample& ex, std::size_t max_len) {
  DecodeResult d = model.greedy_decode(ex, max_len);
  if (d.ended) d.tokens.push_back(kEos);
  return d.tokens;
}

// Self-critical fine-tuning with a fresh Adam state at lr_rl. Examples whose
// rewards tie contribute nothing and skip the backward pass.
inline TrainResult finetune(const std::vector<TrainingExample>& train_set,
                            const std::vector<TrainingExample>& dev_set, Seq2SeqModel& model,
                            const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw ContractError("finetune: empty training set");
  const auto train_ex = prepare_all(model, train_set);
  const auto dev_ex = prepare_all(model, dev_set);
  const RewardSpec reward = RewardSpec::for_mode(config.mode);

  Rng order_rng = Rng(config.seed).fork(4);
  Rng flip_rng = Rng(config.seed).fork(5);
  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState adam;
  TrainResult result;
  BestTracker tracker;
  for (std::size_t epoch = 1; epoch <= config.epochs_rl; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0, greedy_sum = 0.0, sampled_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const PreparedExample& ex = train_ex[order[k]];
        const auto greedy = greedy_sequence(model, ex, config.max_decode_len);
        const auto triple = scheduled_sample(ex.gold, greedy, config.p_flip, flip_rng);
        Tape tape;
        RlLossTerms terms = rl_loss(tape, model, ex, triple.sampled, greedy, reward);
        loss_sum += terms.loss.value()[0];
        greedy_sum += terms.reward_greedy;
        sampled_sum += terms.reward_sampled;
        if (terms.coefficient() != 0.0) tape.backward(terms.loss, inv_batch);
      }
      clip_grad_norm(model.params(), config.clip_norm);
      adam_step(model.params(), adam, config.lr_rl);
    }

    const double n = static_cast<double>(train_ex.size());
    EpochRecord rec;
    rec.phase = "rl";
    rec.epoch = epoch;
    rec.loss = loss_sum / n;
    rec.reward_greedy = greedy_sum / n;
    rec.reward_sampled = sampled_sum / n;
    if (!dev_ex.empty()) rec.dev_metric = evaluate_greedy(model, dev_ex, reward.metric, config.max_decode_len);
    result.history.push_back(rec);
    result.last = make_checkpoint(model, config, adam, "rl", epoch, adam.step);
    // Without a dev set the highest mean greedy training reward wins.
    if (tracker.offer(rec.dev_metric ? *rec.dev_metric : *rec.reward_greedy)) {
      result.best = result.last;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  if (result.history.empty()) {
    result.last = make_checkpoint(model, config, adam, "rl", 0, 0);
    result.best = result.last;
  }
  return result;
}

}  // namespace mpqg
