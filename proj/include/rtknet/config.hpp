#pragma once

#include <filesystem>

#include <json.hpp>

#include "rtknet/augmentation.hpp"
#include "rtknet/kernel_update.hpp"
#include "rtknet/losses.hpp"
#include "rtknet/postprocess.hpp"

namespace rtknet {

// One document with optional sections "pipeline", "postproc",
// "augmentation" and "loss". The thing/stuff class table is derived from
// the pipeline section.
struct AppConfig {
  PipelineConfig pipeline;
  PostprocConfig postproc = PostprocConfig::with_classes(19, 8);
  AugConfig augmentation;
  LossWeights loss;

  nlohmann::json to_json() const;
};

// Throws ConfigError on unknown sections or keys and on invalid values.
AppConfig app_config_from_json(const nlohmann::json& doc);
AppConfig load_app_config(const std::filesystem::path& path);

}  // namespace rtknet
