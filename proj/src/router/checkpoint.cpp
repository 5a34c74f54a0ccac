#include "medroute/router/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "medroute/core/base64.hpp"

namespace medroute::router {

using nlohmann::json;
using Kind = CheckpointError::Kind;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as little-endian float32");

json config_to_json(const RouterConfig& c) {
  return json{{"embed_dim", c.embed.dim},       {"hash_seed", c.embed.hash_seed},
              {"model_dim", c.model_dim},       {"heads", c.heads},
              {"blocks", c.blocks},             {"block_hidden", c.block_hidden},
              {"head_hidden", c.head_hidden},   {"k_max", c.k_max},
              {"head", std::string(head_name(c.head))}};
}

RouterConfig config_from_json(const json& j) {
  RouterConfig c;
  c.embed.dim = j.at("embed_dim").get<std::size_t>();
  c.embed.hash_seed = j.at("hash_seed").get<std::uint64_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.block_hidden = j.at("block_hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.k_max = j.at("k_max").get<std::size_t>();
  c.head = parse_head(j.at("head").get<std::string>());
  c.validate();
  return c;
}

std::string serialize_checkpoint(const RouterParams& params) {
  json tensors = json::object();
  params.for_each([&](const std::string& name, const numerics::Tensor& t) {
    std::string bytes(t.size() * sizeof(float), '\0');
    std::memcpy(bytes.data(), t.data(), bytes.size());
    tensors[name] = json{{"shape", t.shape()}, {"data", core::base64_encode(bytes)}};
  });
  json envelope{{"format_version", kCheckpointVersion},
                {"config", config_to_json(params.config)},
                {"tensors", std::move(tensors)}};
  return envelope.dump() + "\n";
}

RouterParams parse_checkpoint(const std::string& text) {
  json envelope;
  try {
    envelope = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kCorruptPayload, std::string("corrupt payload: ") + e.what());
  }
  if (!envelope.is_object() || !envelope.contains("format_version"))
    throw CheckpointError(Kind::kCorruptPayload, "corrupt payload: missing format_version");
  if (!envelope["format_version"].is_number_integer() ||
      envelope["format_version"].get<long long>() != kCheckpointVersion)
    throw CheckpointError(Kind::kUnknownVersion,
                          "unknown version " + envelope["format_version"].dump() +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");

  RouterParams params;
  try {
    params.config = config_from_json(envelope.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::kCorruptPayload, std::string("corrupt payload: config: ") + e.what());
  }
  // Allocate every tensor at its expected shape, then fill from the payload.
  params = RouterParams::init(params.config, 0);
  const auto expected = RouterParams::expected_shapes(params.config);
  const json* tensors = envelope.contains("tensors") ? &envelope["tensors"] : nullptr;
  if (!tensors || !tensors->is_object())
    throw CheckpointError(Kind::kCorruptPayload, "corrupt payload: missing tensors");

  std::size_t i = 0;
  params.for_each([&](const std::string& name, numerics::Tensor& t) {
    const numerics::Shape& want = expected[i++];
    auto it = tensors->find(name);
    if (it == tensors->end())
      throw CheckpointError(Kind::kCorruptPayload, "corrupt payload: missing tensor " + name);
    numerics::Shape shape;
    std::string bytes;
    try {
      shape = it->at("shape").get<numerics::Shape>();
      bytes = core::base64_decode(it->at("data").get<std::string>());
    } catch (const std::exception& e) {
      throw CheckpointError(Kind::kCorruptPayload,
                            "corrupt payload: tensor " + name + ": " + e.what());
    }
    if (shape != want)
      throw CheckpointError(Kind::kShapeMismatch, "shape mismatch for " + name + ": file has " +
                                                      numerics::shape_string(shape) +
                                                      ", config expects " +
                                                      numerics::shape_string(want));
    if (bytes.size() != t.size() * sizeof(float))
      throw CheckpointError(Kind::kCorruptPayload,
                            "corrupt payload: tensor " + name + " has " +
                                std::to_string(bytes.size()) + " bytes");
    std::memcpy(t.data(), bytes.data(), bytes.size());
  });
  return params;
}

void save_checkpoint(const RouterParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kIo, "cannot write checkpoint " + path.string());
  out << serialize_checkpoint(params);
  if (!out) throw CheckpointError(Kind::kIo, "write failed for checkpoint " + path.string());
}

RouterParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace medroute::router
