#pragma once

#include "domlm/encoder.hpp"

#include <json.hpp>

#include <filesystem>
#include <vector>

namespace domlm {

/// Versioned binary container: an 8-byte magic, a length-prefixed JSON header
/// (metadata plus a tensor index), then raw little-endian float64 payloads.
struct Checkpoint {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j);

/// Model-only checkpoint: encoder config plus every named parameter.
Checkpoint model_checkpoint(const EncoderConfig& config, const ModelParams& params);
ModelParams params_from_checkpoint(const Checkpoint& checkpoint, EncoderConfig* config_out = nullptr);

}  // namespace domlm
