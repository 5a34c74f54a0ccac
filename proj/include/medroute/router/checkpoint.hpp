#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "medroute/core/error.hpp"
#include "medroute/router/router.hpp"

namespace medroute::router {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kCorruptPayload, kShapeMismatch, kUnknownVersion };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

nlohmann::json config_to_json(const RouterConfig& c);
RouterConfig config_from_json(const nlohmann::json& j);

/// Versioned JSON envelope; tensors are base64 little-endian float32 payloads.
std::string serialize_checkpoint(const RouterParams& params);
RouterParams parse_checkpoint(const std::string& text);

void save_checkpoint(const RouterParams& params, const std::filesystem::path& path);
RouterParams load_checkpoint(const std::filesystem::path& path);

}  // namespace medroute::router
