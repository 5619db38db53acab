#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpqg/adam.hpp"
#include "mpqg/config.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/model.hpp"
#include "mpqg/text.hpp"

namespace mpqg {

// File layout:
//   8 bytes   magic "MPQGCKP1"
//   8 bytes   header length H, little-endian uint64
//   H bytes   JSON header: configs, vocabulary, counters and a tensor table
//             of {name, shape, offset} with offsets counted in doubles
//   rest      float64 values, little-endian, in tensor-table order
struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  Vocabulary vocab;
  ModelParams params;
  AdamState optimizer;
  std::string phase = "ce";  // "ce" or "rl"
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;

  Seq2SeqModel model() const { return Seq2SeqModel(model_config, vocab, params); }
};

inline constexpr char kCheckpointMagic[9] = "MPQGCKP1";

namespace detail {

inline void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return x;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Tensor*> blocks;
  std::uint64_t offset = 0;
  auto table_entry = [&](const std::string& name, const Tensor& t, bool frozen) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"frozen", frozen}});
    blocks.push_back(&t);
    offset += t.size();
  };
  for (const auto& [name, p] : ck.params) table_entry(name, p.value, p.frozen);

  nlohmann::json moments = nlohmann::json::array();
  for (const auto& [name, m] : ck.optimizer.m) {
    auto vit = ck.optimizer.v.find(name);
    if (vit == ck.optimizer.v.end()) throw ContractError("optimizer state for " + name + " lacks a second moment");
    moments.push_back({{"name", name}, {"m_offset", offset}, {"v_offset", offset + m.size()}, {"shape", m.shape()}});
    blocks.push_back(&m);
    offset += m.size();
    blocks.push_back(&vit->second);
    offset += vit->second.size();
  }

  nlohmann::json header = {
      {"format", 1},
      {"model_config", ck.model_config.to_json()},
      {"train_config", ck.train_config.to_json()},
      {"vocab", ck.vocab.to_json()},
      {"phase", ck.phase},
      {"epoch", ck.epoch},
      {"step", ck.step},
      {"tensors", tensors},
      {"optimizer",
       {{"beta1", ck.optimizer.beta1},
        {"beta2", ck.optimizer.beta2},
        {"eps", ck.optimizer.eps},
        {"step", ck.optimizer.step},
        {"moments", moments}}},
  };
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + 8 * offset);
  for (const Tensor* t : blocks)
    for (double x : t->values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0) throw LoadError("not a checkpoint file");
  const std::uint64_t hlen = detail::get_u64(bytes, 8);
  if (16 + hlen > bytes.size()) throw LoadError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t data = 16 + hlen;
  const std::size_t count = (bytes.size() - data) / 8;
  if ((bytes.size() - data) % 8 != 0) throw LoadError("checkpoint payload is not a whole number of doubles");
  auto read_tensor = [&](const Shape& shape, std::uint64_t off) {
    const std::size_t n = shape_size(shape);
    if (off + n > count) throw LoadError("checkpoint tensor extends past end of file");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(detail::get_u64(bytes, data + 8 * (off + i)));
    return Tensor(shape, std::move(values));
  };

  try {
    Checkpoint ck;
    ck.model_config = ModelConfig::from_json(header.at("model_config"));
    ck.train_config = TrainConfig::from_json(header.at("train_config"));
    ck.vocab = Vocabulary::from_json(header.at("vocab"));
    ck.phase = header.at("phase").get<std::string>();
    ck.epoch = header.at("epoch").get<std::uint64_t>();
    ck.step = header.at("step").get<std::uint64_t>();
    for (const auto& t : header.at("tensors"))
      ck.params.add(t.at("name").get<std::string>(), read_tensor(t.at("shape").get<Shape>(), t.at("offset")),
                    t.at("frozen").get<bool>());
    const auto& opt = header.at("optimizer");
    ck.optimizer.beta1 = opt.at("beta1").get<double>();
    ck.optimizer.beta2 = opt.at("beta2").get<double>();
    ck.optimizer.eps = opt.at("eps").get<double>();
    ck.optimizer.step = opt.at("step").get<std::uint64_t>();
    for (const auto& m : opt.at("moments")) {
      const auto name = m.at("name").get<std::string>();
      const auto shape = m.at("shape").get<Shape>();
      ck.optimizer.m.emplace(name, read_tensor(shape, m.at("m_offset")));
      ck.optimizer.v.emplace(name, read_tensor(shape, m.at("v_offset")));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed checkpoint header: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

inline Checkpoint make_checkpoint(const Seq2SeqModel& model, const TrainConfig& config, const AdamState& optimizer,
                                  std::string phase, std::uint64_t epoch, std::uint64_t step) {
  Checkpoint ck;
  ck.model_config = model.config();
  ck.train_config = config;
  ck.vocab = model.vocab();
  ck.params = model.params();
  ck.optimizer = optimizer;
  ck.phase = std::move(phase);
  ck.epoch = epoch;
  ck.step = step;
  return ck;
}

}  // namespace mpqg
