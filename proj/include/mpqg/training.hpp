#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/adam.hpp"
#include "mpqg/checkpoint.hpp"
#include "mpqg/config.hpp"
#include "mpqg/data.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/kernels.hpp"
#include "mpqg/metrics.hpp"
#include "mpqg/model.hpp"
#include "mpqg/text.hpp"

namespace mpqg {

inline constexpr double kLogFloor = 1e-12;

// Task metric used for dev selection and as the RL reward.
inline Metric task_metric(TaskMode mode) { return mode == TaskMode::kQG ? Metric::kBleu4 : Metric::kRougeL; }

// -Σ_t log p_t(y_t), with each log clamped at kLogFloor.
inline Var negative_log_likelihood(const std::vector<Var>& distributions, const std::vector<TokenId>& sequence) {
  if (distributions.size() != sequence.size())
    throw ContractError("negative_log_likelihood: " + std::to_string(distributions.size()) + " distributions for " +
                        std::to_string(sequence.size()) + " tokens");
  if (sequence.empty()) throw ContractError("negative_log_likelihood: empty sequence");
  std::vector<Var> terms;
  terms.reserve(sequence.size());
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    if (sequence[t] >= distributions[t].size())
      throw ContractError("negative_log_likelihood: token id " + std::to_string(sequence[t]) +
                          " outside a distribution of size " + std::to_string(distributions[t].size()));
    terms.push_back(log_clamped(pick(distributions[t], sequence[t]), kLogFloor));
  }
  return scale(add_n(terms), -1.0);
}

// Σ_t Σ_i min(α_{t,i}, u_{t-1,i}) where u_{t-1} is the coverage before step t.
inline Var coverage_loss(const std::vector<Var>& attention, const std::vector<Var>& prev_coverage) {
  if (attention.size() != prev_coverage.size())
    throw ContractError("coverage_loss: " + std::to_string(attention.size()) + " attention vectors, " +
                        std::to_string(prev_coverage.size()) + " coverage vectors");
  if (attention.empty()) throw ContractError("coverage_loss: empty sequence");
  std::vector<Var> terms;
  terms.reserve(attention.size());
  for (std::size_t t = 0; t < attention.size(); ++t) terms.push_back(sum(minimum(attention[t], prev_coverage[t])));
  return add_n(terms);
}

// Same quantity from attention values alone, accumulating coverage from zero.
inline double coverage_loss_value(const std::vector<Tensor>& attention) {
  if (attention.empty()) return 0.0;
  Tensor u = Tensor::zeros(attention.front().shape());
  double total = 0.0;
  for (const auto& a : attention) {
    if (a.shape() != u.shape()) throw ContractError("coverage_loss_value: attention shapes differ across steps");
    for (std::size_t i = 0; i < a.size(); ++i) {
      total += std::min(a[i], u[i]);
      u[i] += a[i];
    }
  }
  return total;
}

struct LossTerms {
  Var total;  // ce + η·coverage
  double ce = 0.0;
  double coverage = 0.0;
};

inline LossTerms cross_entropy_loss(Tape& tape, Seq2SeqModel& model, const PreparedExample& ex,
                                    double coverage_weight) {
  if (ex.target.empty()) throw ContractError("cross_entropy_loss: example '" + ex.id + "' has an empty target");
  auto enc = model.encode(tape, ex);
  auto steps = model.teacher_force(tape, ex, enc, ex.gold);
  std::vector<Var> dists, alphas, coverage;
  for (const auto& s : steps) {
    dists.push_back(s.p_final);
    alphas.push_back(s.attention);
    coverage.push_back(s.prev_coverage);
  }
  LossTerms out;
  Var ce = negative_log_likelihood(dists, ex.gold);
  Var cov = coverage_loss(alphas, coverage);
  out.ce = ce.value()[0];
  out.coverage = cov.value()[0];
  out.total = add(ce, scale(cov, coverage_weight));
  return out;
}

// Mean task metric of greedy decodes against the references.
inline double evaluate_greedy(Seq2SeqModel& model, const std::vector<PreparedExample>& examples, Metric metric,
                              std::size_t max_decode_len) {
  if (examples.empty()) throw ContractError("evaluate_greedy: no examples");
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto decoded = model.greedy_decode(ex, max_decode_len);
    total += score(metric, model.surface(ex, decoded.tokens), ex.target);
  }
  return total / static_cast<double>(examples.size());
}

inline std::vector<PreparedExample> prepare_all(const Seq2SeqModel& model,
                                                const std::vector<TrainingExample>& examples) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(model.prepare(ex));
  return out;
}

struct EpochRecord {
  std::string phase = "ce";
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-example loss over the epoch
  std::optional<double> dev_metric;
  std::optional<double> reward_greedy;
  std::optional<double> reward_sampled;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"phase", phase}, {"epoch", epoch}, {"loss", loss}};
    j["dev_metric"] = dev_metric ? nlohmann::json(*dev_metric) : nlohmann::json(nullptr);
    if (reward_greedy) j["reward_greedy"] = *reward_greedy;
    if (reward_sampled) j["reward_sampled"] = *reward_sampled;
    return j;
  }
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Checkpoint best;
  Checkpoint last;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Keeps the highest selection key seen so far. Ties keep the earlier epoch.
class BestTracker {
 public:
  bool offer(double key) {
    if (seen_ && !(key > best_)) return false;
    seen_ = true;
    best_ = key;
    return true;
  }

 private:
  bool seen_ = false;
  double best_ = 0.0;
};

// Cross-entropy pretraining with Adam at lr_ce. Gradients are averaged over
// each minibatch and clipped by global norm before the update.
inline TrainResult train(const std::vector<TrainingExample>& train_set, const std::vector<TrainingExample>& dev_set,
                         Seq2SeqModel& model, const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  const auto train_ex = prepare_all(model, train_set);
  const auto dev_ex = prepare_all(model, dev_set);
  const Metric metric = task_metric(config.mode);

  Rng order_rng = Rng(config.seed).fork(1);
  std::vector<std::size_t> order(train_ex.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState adam;
  TrainResult result;
  BestTracker tracker;
  for (std::size_t epoch = 1; epoch <= config.epochs_ce; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        Tape tape;
        LossTerms loss = cross_entropy_loss(tape, model, train_ex[order[k]], config.coverage_weight);
        loss_sum += loss.total.value()[0];
        tape.backward(loss.total, inv_batch);
      }
      clip_grad_norm(model.params(), config.clip_norm);
      adam_step(model.params(), adam, config.lr_ce);
    }

    EpochRecord rec;
    rec.phase = "ce";
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train_ex.size());
    if (!dev_ex.empty()) rec.dev_metric = evaluate_greedy(model, dev_ex, metric, config.max_decode_len);
    result.history.push_back(rec);
    result.last = make_checkpoint(model, config, adam, "ce", epoch, adam.step);
    // Without a dev set the lowest training loss wins.
    if (tracker.offer(rec.dev_metric ? *rec.dev_metric : -rec.loss)) {
      result.best = result.last;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  if (result.history.empty()) {
    result.last = make_checkpoint(model, config, adam, "ce", 0, 0);
    result.best = result.last;
  }
  return result;
}

// Vocabulary over all passage, query and target tokens of the training set,
// with either random or file-loaded frozen embeddings.
inline Seq2SeqModel build_model(const std::vector<TrainingExample>& train_set, const TrainConfig& config,
                                const std::string& embeddings_path = "") {
  std::vector<Tokens> corpus;
  for (const auto& ex : train_set) {
    corpus.push_back(ex.passage);
    corpus.push_back(ex.query);
    corpus.push_back(ex.target);
  }
  Vocabulary vocab = build_vocab(corpus, config.vocab_max_size, config.vocab_min_count);
  Rng embed_rng = Rng(config.seed).fork(2);
  EmbeddingTable table = embeddings_path.empty() ? random_embeddings(vocab, config.embed_dim, embed_rng)
                                                 : load_embeddings(embeddings_path, vocab, config.embed_dim, embed_rng);
  return Seq2SeqModel(config.model_config(), std::move(vocab), std::move(table), Rng(config.seed).fork(3).next_u64());
}

}  // namespace mpqg
