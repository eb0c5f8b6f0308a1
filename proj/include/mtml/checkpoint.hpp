// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "mtml/autodiff.hpp"
#include "mtml/seqmodel.hpp"
#include "mtml/vocab.hpp"

namespace mtml {

/// Everything needed to resume training or evaluate a model.
///
/// On disk: the 8-byte magic "MTMLCKPT", a little-endian u64 header length,
/// a JSON header (architecture, config, vocabulary, tensor directory, extra
/// metadata) and the raw little-endian float64 payload of every tensor.
struct Checkpoint {
    std::string architecture = "transformer";
    ModelConfig config;
    Vocabulary vocabulary;
    ad::ParameterSet parameters;
    /// Optional optimizer moments, stored by parameter name.
    ad::NamedTensors optimizer_state;
    nlohmann::json metadata = nlohmann::json::object();
};

[[nodiscard]] nlohmann::json to_json(const ModelConfig& config);
[[nodiscard]] ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtml
