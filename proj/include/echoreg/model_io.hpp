// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "echoreg/models.hpp"

namespace echoreg::models {

nlohmann::json to_json(const ModelConfig& config);

/// Applies one model key of a JSON config; returns false when `key` is not a
/// model key. Type mismatches throw ConfigError naming `path`.
bool read_model_key(ModelConfig& config, const std::string& key, const nlohmann::json& value,
                    const std::string& path);

/// Every key must be a model key.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "");

/// Writes `model.json` (config, node structure, tensor manifest) and
/// `model.bin` (little-endian float64 tensors in manifest order) into `dir`.
void save_model(Model& model, const std::filesystem::path& dir);

/// Rebuilds the graph from the stored config, checks it against the stored
/// structure and loads every tensor by name. Throws FormatError on mismatch.
Model load_model(const std::filesystem::path& dir);

}  // namespace echoreg::models
