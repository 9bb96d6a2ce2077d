#pragma once

// Checkpoint container: 8-byte magic "ECKPT1\0\0", u64 LE header length, a
// JSON header (architecture descriptor + tensor directory), then the tensors
// as back-to-back ETNS1 blobs. See docs/checkpoint.md.

#include <array>
#include <cstring>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "echoflow/etns.hpp"
#include "echoflow/nn/model.hpp"

namespace echoflow::nn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'E', 'C', 'K', 'P', 'T', '1', '\0', '\0'};

inline nlohmann::json architecture_descriptor(const ModelConfig& c) {
  return {{"blocks", c.blocks},
          {"base_channels", c.base_channels},
          {"batch_norm", c.batch_norm},
          {"streams", to_string(c.streams)},
          {"gray_channels", c.gray_channels},
          {"flow_channels", c.flow_channels},
          {"head_in", c.head_inputs()},
          {"head_out", 1},
          {"output", to_string(c.output)}};
}

inline ModelConfig config_from_descriptor(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.blocks = j.at("blocks").get<BlockCounts>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.batch_norm = j.at("batch_norm").get<bool>();
    c.streams = parse_streams(j.at("streams").get<std::string>());
    c.gray_channels = j.at("gray_channels").get<std::size_t>();
    c.flow_channels = j.at("flow_channels").get<std::size_t>();
    c.output = parse_output_activation(j.at("output").get<std::string>());
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::architecture_mismatch, std::string("malformed architecture descriptor: ") + e.what());
  }
}

// Names the first differing component; empty when compatible.
inline std::string architecture_difference(const ModelConfig& file, const ModelConfig& model, bool ignore_head) {
  auto differ = [](const std::string& what, auto a, auto b) {
    return what + ": checkpoint has " + a + ", model has " + b;
  };
  if (file.streams != model.streams) return differ("streams", to_string(file.streams), to_string(model.streams));
  if (file.base_channels != model.base_channels)
    return differ("stem", std::to_string(file.base_channels) + " base channels",
                  std::to_string(model.base_channels) + " base channels");
  if (file.gray_channels != model.gray_channels || file.flow_channels != model.flow_channels)
    return differ("stem", "input channels " + std::to_string(file.gray_channels) + "/" + std::to_string(file.flow_channels),
                  "input channels " + std::to_string(model.gray_channels) + "/" + std::to_string(model.flow_channels));
  if (file.batch_norm != model.batch_norm)
    return differ("normalization", std::string(file.batch_norm ? "batch norm" : "none"),
                  std::string(model.batch_norm ? "batch norm" : "none"));
  for (std::size_t s = 0; s < 4; ++s)
    if (file.blocks[s] != model.blocks[s])
      return differ("stage layer" + std::to_string(s + 1), std::to_string(file.blocks[s]) + " blocks",
                    std::to_string(model.blocks[s]) + " blocks");
  if (!ignore_head && file.output != model.output)
    return differ("head", "output " + to_string(file.output), "output " + to_string(model.output));
  return {};
}

inline void save_checkpoint(const std::string& path, TwoStreamModel<float>& model) {
  auto refs = model.params();
  nlohmann::json dir = nlohmann::json::array();
  std::string blobs;
  auto add = [&](const std::string& name, const Tensor<float>& t) {
    NdArray a;
    a.dims.assign(t.shape.begin(), t.shape.end());
    a.data = t.data;
    const std::string blob = encode_etns(a);
    dir.push_back({{"name", name}, {"shape", t.shape}, {"offset", blobs.size()}, {"length", blob.size()}});
    blobs += blob;
  };
  for (auto* p : refs.params) add(p->name, p->value);
  for (const auto& b : refs.buffers) add(b.name, *b.value);
  const nlohmann::json header = {{"architecture", architecture_descriptor(model.config())}, {"tensors", dir}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic.data(), kCheckpointMagic.size());
  echoflow::detail::put_u64(out, text.size());
  out += text;
  out += blobs;
  write_file_bytes(path, out);
}

struct CheckpointContents {
  ModelConfig config;
  std::map<std::string, NdArray> tensors;
};

inline CheckpointContents read_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) == 0, ErrorCode::bad_magic,
          path + " is not a checkpoint (bad magic)");
  const std::uint64_t hlen = echoflow::detail::get_u64(bytes.data() + 8);
  require(hlen <= bytes.size() - 16, ErrorCode::truncated, path + ": checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + long(hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::truncated, path + ": unreadable checkpoint header: " + e.what());
  }
  CheckpointContents c;
  c.config = config_from_descriptor(header.at("architecture"));
  const std::size_t base = 16 + std::size_t(hlen);
  for (const auto& t : header.at("tensors")) {
    const auto off = t.at("offset").get<std::size_t>(), len = t.at("length").get<std::size_t>();
    require(base + off + len <= bytes.size(), ErrorCode::truncated, path + ": tensor data truncated");
    c.tensors[t.at("name").get<std::string>()] =
        decode_etns(std::span<const unsigned char>(bytes.data() + base + off, len));
  }
  return c;
}

// Copies checkpoint tensors into an existing model after checking the
// architecture. With ignore_head the terminal layer is left untouched.
inline void load_into(const CheckpointContents& ckpt, TwoStreamModel<float>& model, bool ignore_head = false) {
  const std::string diff = architecture_difference(ckpt.config, model.config(), ignore_head);
  require(diff.empty(), ErrorCode::architecture_mismatch, "architecture mismatch at " + diff);
  auto refs = model.params();
  auto copy = [&](const std::string& name, Tensor<float>& dst) {
    if (ignore_head && name.starts_with("head.")) return;
    const auto it = ckpt.tensors.find(name);
    require(it != ckpt.tensors.end(), ErrorCode::architecture_mismatch, "checkpoint lacks tensor " + name);
    const std::vector<std::size_t> shape(it->second.dims.begin(), it->second.dims.end());
    require(shape == dst.shape, ErrorCode::architecture_mismatch,
            name + ": checkpoint shape " + shape_string(shape) + ", model shape " + shape_string(dst.shape));
    dst.data = it->second.data;
  };
  for (auto* p : refs.params) copy(p->name, p->value);
  for (const auto& b : refs.buffers) copy(b.name, *b.value);
}

inline TwoStreamModel<float> load_checkpoint(const std::string& path) {
  const auto ckpt = read_checkpoint(path);
  TwoStreamModel<float> model(ckpt.config);
  load_into(ckpt, model);
  return model;
}

// Replaces the terminal fully-connected layer with a fresh Xavier-initialised
// one feeding a sigmoid; the backbones are untouched.
template <typename T>
void swap_head(TwoStreamModel<T>& model, Rng& rng) {
  model.head().init(rng);
  model.set_output(OutputActivation::sigmoid);
}

}  // namespace echoflow::nn
