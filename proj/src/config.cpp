#include "rtknet/config.hpp"

#include <string>

#include "rtknet/errors.hpp"
#include "rtknet/tensor_io.hpp"
#include "rtknet/weights_io.hpp"

namespace rtknet {

using nlohmann::json;

namespace {

json postproc_to_json(const PostprocConfig& p) {
  return {{"score_threshold", p.score_threshold}, {"overlap_threshold", p.overlap_threshold}, {"offset", p.offset}};
}

void apply_postproc(const json& doc, PostprocConfig& p) {
  if (!doc.is_object()) throw ConfigError("postproc section must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "score_threshold" || key == "overlap_threshold") {
      if (!value.is_number()) throw ConfigError("postproc key '" + key + "' must be a number");
      (key == "score_threshold" ? p.score_threshold : p.overlap_threshold) = value.get<double>();
    } else if (key == "offset") {
      if (!value.is_number_unsigned()) throw ConfigError("postproc offset must be a positive integer");
      p.offset = value.get<std::uint32_t>();
    } else {
      throw ConfigError("unknown postproc key '" + key + "'");
    }
  }
}

}  // namespace

json AppConfig::to_json() const {
  return {{"pipeline", pipeline_config_to_json(pipeline)},
          {"postproc", postproc_to_json(postproc)},
          {"augmentation", aug_config_to_json(augmentation)},
          {"loss", loss_weights_to_json(loss)}};
}

AppConfig app_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  AppConfig cfg;
  json postproc = json::object();
  for (const auto& [key, value] : doc.items()) {
    if (key == "pipeline") {
      cfg.pipeline = pipeline_config_from_json(value);
    } else if (key == "postproc") {
      postproc = value;
    } else if (key == "augmentation") {
      cfg.augmentation = aug_config_from_json(value);
    } else if (key == "loss") {
      cfg.loss = loss_weights_from_json(value);
    } else {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  cfg.pipeline.validate();
  cfg.postproc = PostprocConfig::with_classes(cfg.pipeline.num_classes, cfg.pipeline.thing_class_count);
  apply_postproc(postproc, cfg.postproc);
  cfg.postproc.validate(cfg.pipeline.num_kernels);
  return cfg;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = read_json(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  return app_config_from_json(doc);
}

}  // namespace rtknet
