#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "mpqg/data.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/model.hpp"

namespace mpqg {

// Training hyperparameters. The defaults are the full-scale settings.
struct TrainConfig {
  double lr_ce = 0.005;
  double lr_rl = 0.0001;
  std::size_t epochs_ce = 15;
  std::size_t epochs_rl = 15;
  std::size_t perspectives = 5;
  double p_flip = 0.1;
  double coverage_weight = 0.1;  // η
  std::size_t embed_dim = 300;
  std::size_t hidden = 100;
  std::size_t batch_size = 16;
  std::size_t max_decode_len = 50;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
  TaskMode mode = TaskMode::kQG;
  std::size_t vocab_max_size = 20000;
  std::size_t vocab_min_count = 1;
  std::size_t max_passage_len = kDefaultMaxPassageLength;

  // Learning rates may be zero here (a null optimizer is a useful probe);
  // the command line requires them to be positive.
  void validate() const {
    if (lr_ce < 0.0 || lr_rl < 0.0) throw ContractError("learning rates must be non-negative");
    if (p_flip < 0.0 || p_flip > 1.0) throw ContractError("p_flip must lie in [0, 1]");
    if (coverage_weight < 0.0) throw ContractError("coverage weight must be non-negative");
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    if (max_decode_len == 0) throw ContractError("max_decode_len must be positive");
    if (perspectives == 0 || hidden == 0 || embed_dim == 0) throw ContractError("model dimensions must be positive");
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.embed_dim = embed_dim;
    m.hidden = hidden;
    m.smooth_hidden = hidden;
    m.decoder_hidden = hidden;
    m.attention_dim = hidden;
    m.output_hidden = hidden;
    m.perspectives = perspectives;
    return m;
  }

  nlohmann::json to_json() const {
    return {{"lr_ce", lr_ce},
            {"lr_rl", lr_rl},
            {"epochs_ce", epochs_ce},
            {"epochs_rl", epochs_rl},
            {"perspectives", perspectives},
            {"p_flip", p_flip},
            {"coverage_weight", coverage_weight},
            {"embed_dim", embed_dim},
            {"hidden", hidden},
            {"batch_size", batch_size},
            {"max_decode_len", max_decode_len},
            {"clip_norm", clip_norm},
            {"seed", seed},
            {"mode", mode_name(mode)},
            {"vocab_max_size", vocab_max_size},
            {"vocab_min_count", vocab_min_count},
            {"max_passage_len", max_passage_len}};
  }

  // Reads the keys present in `j`, leaving others at their current values.
  void update_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("config must be a JSON object");
    auto get = [&](const char* key, auto& dst) {
      if (!j.contains(key)) return;
      try {
        j.at(key).get_to(dst);
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("config key \"") + key + "\": " + e.what());
      }
    };
    get("lr_ce", lr_ce);
    get("lr_rl", lr_rl);
    get("epochs_ce", epochs_ce);
    get("epochs_rl", epochs_rl);
    get("perspectives", perspectives);
    get("p_flip", p_flip);
    get("coverage_weight", coverage_weight);
    get("embed_dim", embed_dim);
    get("hidden", hidden);
    get("batch_size", batch_size);
    get("max_decode_len", max_decode_len);
    get("clip_norm", clip_norm);
    get("seed", seed);
    if (j.contains("mode")) mode = parse_mode(j["mode"].get<std::string>());
    get("vocab_max_size", vocab_max_size);
    get("vocab_min_count", vocab_min_count);
    get("max_passage_len", max_passage_len);
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.update_from_json(j);
    return c;
  }
};

}  // namespace mpqg
