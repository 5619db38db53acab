#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/errors.hpp"
#include "mpqg/rng.hpp"
#include "mpqg/text.hpp"

namespace mpqg {

// QG: query is the answer, target the question. QA: the reverse.
enum class TaskMode { kQG, kQA };

inline const char* mode_name(TaskMode m) { return m == TaskMode::kQG ? "qg" : "qa"; }

inline TaskMode parse_mode(const std::string& s) {
  if (s == "qg" || s == "QG") return TaskMode::kQG;
  if (s == "qa" || s == "QA") return TaskMode::kQA;
  throw ContractError("unknown task mode '" + s + "' (expected qg or qa)");
}

struct TrainingExample {
  std::string id;
  Tokens passage;
  Tokens query;
  Tokens target;

  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

inline constexpr std::size_t kDefaultMaxPassageLength = 300;

inline void truncate_passage(TrainingExample& ex, std::size_t max_len) {
  if (max_len == 0 || ex.passage.size() <= max_len) return;
  std::cerr << "warning: passage of example '" << ex.id << "' truncated from " << ex.passage.size() << " to "
            << max_len << " tokens\n";
  ex.passage.resize(max_len);
}

// Canonical JSONL: one {"id", "passage", "query", "target"} object per line,
// all raw strings. Blank lines are skipped.
inline std::vector<TrainingExample> load_jsonl(const std::string& path,
                                               std::size_t max_passage_len = kDefaultMaxPassageLength) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object()) throw SchemaError(path + ":" + std::to_string(lineno) + ": expected a JSON object");
    TrainingExample ex;
    std::array<std::string, 4> raw;
    const std::array<const char*, 4> fields = {"id", "passage", "query", "target"};
    for (std::size_t f = 0; f < fields.size(); ++f) {
      if (!j.contains(fields[f]))
        throw SchemaError(path + ":" + std::to_string(lineno) + ": missing field \"" + fields[f] + "\"");
      const auto& v = j[fields[f]];
      if (v.is_string()) {
        raw[f] = v.get<std::string>();
      } else if (f == 0 && v.is_number_integer()) {
        raw[f] = std::to_string(v.get<long long>());
      } else {
        throw SchemaError(path + ":" + std::to_string(lineno) + ": field \"" + fields[f] + "\" must be a string");
      }
    }
    ex.id = raw[0];
    ex.passage = tokenize(raw[1]);
    ex.query = tokenize(raw[2]);
    ex.target = tokenize(raw[3]);
    truncate_passage(ex, max_passage_len);
    out.push_back(std::move(ex));
  }
  return out;
}

inline nlohmann::json to_json(const TrainingExample& ex) {
  return {{"id", ex.id}, {"passage", detokenize(ex.passage)}, {"query", detokenize(ex.query)},
          {"target", detokenize(ex.target)}};
}

inline void write_jsonl(const std::string& path, const std::vector<TrainingExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path);
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(where + ": missing \"" + key + "\"");
  return j[key];
}

inline const nlohmann::json& require_array(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto& v = require_field(j, key, where);
  if (!v.is_array()) throw SchemaError(where + "." + key + ": expected an array");
  return v;
}

inline std::string require_string(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto& v = require_field(j, key, where);
  if (!v.is_string()) throw SchemaError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

}  // namespace detail

// SQuAD JSON (data → paragraphs → qas). One example per qa entry; the first
// listed answer is used. Answers need not occur in the passage.
inline std::vector<TrainingExample> squad_adapter(const std::string& path, TaskMode mode,
                                                  std::size_t max_passage_len = kDefaultMaxPassageLength) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::vector<TrainingExample> out;
  const auto& data = detail::require_array(root, "data", "$");
  for (std::size_t a = 0; a < data.size(); ++a) {
    const std::string art = "$.data[" + std::to_string(a) + "]";
    const auto& paragraphs = detail::require_array(data[a], "paragraphs", art);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string par = art + ".paragraphs[" + std::to_string(p) + "]";
      const Tokens context = tokenize(detail::require_string(paragraphs[p], "context", par));
      const auto& qas = detail::require_array(paragraphs[p], "qas", par);
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const std::string qa = par + ".qas[" + std::to_string(q) + "]";
        const std::string question = detail::require_string(qas[q], "question", qa);
        const auto& answers = detail::require_array(qas[q], "answers", qa);
        if (answers.empty()) throw SchemaError(qa + ".answers: empty");
        const std::string answer = detail::require_string(answers[0], "text", qa + ".answers[0]");
        TrainingExample ex;
        ex.id = qas[q].contains("id") && qas[q]["id"].is_string()
                    ? qas[q]["id"].get<std::string>()
                    : std::to_string(a) + "-" + std::to_string(p) + "-" + std::to_string(q);
        ex.passage = context;
        if (mode == TaskMode::kQG) {
          ex.query = tokenize(answer);
          ex.target = tokenize(question);
        } else {
          ex.query = tokenize(question);
          ex.target = tokenize(answer);
        }
        truncate_passage(ex, max_passage_len);
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

struct DatasetSplit {
  std::vector<TrainingExample> train, dev, test;
};

// Seeded shuffle, then contiguous cut. Dev and test sizes are floor(n·ratio);
// the remainder goes to train.
inline DatasetSplit split_dataset(std::vector<TrainingExample> examples, std::array<double, 3> ratios,
                                  std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw ContractError("split_dataset: negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split_dataset: ratios sum to " + std::to_string(total));
  Rng rng(seed);
  rng.shuffle(examples);
  const std::size_t n = examples.size();
  const auto n_dev = static_cast<std::size_t>(std::floor(n * ratios[1] + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * ratios[2] + 1e-9));
  const std::size_t n_train = n - n_dev - n_test;
  DatasetSplit s;
  s.train.assign(examples.begin(), examples.begin() + n_train);
  s.dev.assign(examples.begin() + n_train, examples.begin() + n_train + n_dev);
  s.test.assign(examples.begin() + n_train + n_dev, examples.end());
  return s;
}

}  // namespace mpqg
