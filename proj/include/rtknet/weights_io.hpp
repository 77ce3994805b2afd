#pragma once

#include <filesystem>

#include <json.hpp>

#include "rtknet/kernel_update.hpp"

namespace rtknet {

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& doc);

struct WeightBundle {
  PipelineConfig config;
  PipelineWeights weights;
};

// Bundle layout: <dir>/config.json, <dir>/manifest.json listing every named
// tensor, and one <name>.bin payload per tensor.
void save_weight_bundle(const std::filesystem::path& dir, const WeightBundle& bundle);

// Loads and validates every shape against the config before returning.
WeightBundle load_weight_bundle(const std::filesystem::path& dir);

}  // namespace rtknet
