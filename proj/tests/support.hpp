#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mpqg/mpqg.hpp"

namespace mpqg::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

inline std::vector<Var> random_rows(Tape& tape, std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(tape.constant(random_tensor({dim}, rng)));
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mpqg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small model with the dimensions used for gradient checks.
inline ModelConfig toy_model_config() {
  ModelConfig mc;
  mc.embed_dim = 6;
  mc.hidden = mc.smooth_hidden = mc.decoder_hidden = mc.attention_dim = mc.output_hidden = 8;
  mc.perspectives = 2;
  return mc;
}

inline Vocabulary toy_vocab() { return Vocabulary(Tokens{"the", "river", "flows", "past", "which", "city", "a"}); }

inline TrainingExample toy_example() {
  TrainingExample ex;
  ex.id = "toy";
  ex.passage = {"the", "river", "flows", "past", "zorvik"};
  ex.query = {"which", "river", "flows"};
  ex.target = {"river", "flows", "zorvik"};
  return ex;
}

inline Seq2SeqModel toy_model(std::uint64_t seed = 11) {
  Rng rng(seed);
  Vocabulary vocab = toy_vocab();
  EmbeddingTable table = random_embeddings(vocab, 6, rng);
  return Seq2SeqModel(toy_model_config(), std::move(vocab), std::move(table), rng.next_u64());
}

// Desk-scale profile: h = 32, d = 16, l = 3.
inline TrainConfig desk_config() {
  TrainConfig c;
  c.embed_dim = 16;
  c.hidden = 32;
  c.perspectives = 3;
  c.vocab_max_size = 200;
  c.vocab_min_count = 3;
  c.batch_size = 4;
  c.max_decode_len = 10;
  c.seed = 7;
  return c;
}

// Twenty passages of eight distinct common words plus one rare word each.
// The query is one passage word and the target is the three words after it.
// Every fourth example puts its rare word inside the target, so decoding it
// is only possible through the copy path. Rare words occur twice in the
// corpus, below the vocabulary cut-off of desk_config().
inline std::vector<TrainingExample> copy_corpus(std::uint64_t seed = 2024) {
  const Tokens pool = {"alpha", "bravo", "cedar", "delta", "ember", "fjord", "grove", "harbor", "iris", "jade",
                       "kite",  "lumen", "maple", "north", "opal",  "pine",  "quartz", "raven", "slate", "tide"};
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (std::size_t e = 0; e < 20; ++e) {
    Tokens words = pool;
    rng.shuffle(words);
    Tokens passage(words.begin(), words.begin() + 8);
    const std::string rare = "rare" + std::to_string(e);
    std::size_t q;
    if (e % 4 == 0) {
      q = rng.below(4);
      passage.insert(passage.begin() + static_cast<std::ptrdiff_t>(q + 2), rare);
    } else {
      q = rng.below(5);
      passage.push_back(rare);
    }
    TrainingExample ex;
    ex.id = "copy-" + std::to_string(e);
    ex.passage = passage;
    ex.query = {passage[q]};
    ex.target = Tokens(passage.begin() + static_cast<std::ptrdiff_t>(q + 1),
                       passage.begin() + static_cast<std::ptrdiff_t>(q + 4));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace mpqg::test
