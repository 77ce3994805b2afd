#include "rtknet/weights_io.hpp"

#include <functional>
#include <map>
#include <string>

#include "rtknet/tensor_io.hpp"

namespace rtknet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using TensorVisitor = std::function<void(const std::string&, Tensor&)>;

void visit_linear(const std::string& name, Linear& l, const TensorVisitor& fn) {
  fn(name + ".weight", l.weight);
  fn(name + ".bias", l.bias);
}

// Walks every named tensor of the weights in a fixed order.
void visit_weights(PipelineWeights& w, const TensorVisitor& fn) {
  fn("init.conv_w", w.init.conv_w);
  fn("init.conv_b", w.init.conv_b);
  fn("init.k0", w.init.k0);
  if (w.init.aux) {
    fn("init.aux_conv_w", w.init.aux->conv_w);
    fn("init.aux_conv_b", w.init.aux->conv_b);
    fn("init.aux_kernels", w.init.aux->kernels);
  }
  for (std::size_t s = 0; s < w.stages.size(); ++s) {
    auto& st = w.stages[s];
    const std::string p = "stage" + std::to_string(s) + ".";
    visit_linear(p + "psi1", st.psi1, fn);
    visit_linear(p + "psi2", st.psi2, fn);
    visit_linear(p + "gate_f", st.gate_f, fn);
    visit_linear(p + "gate_k", st.gate_k, fn);
    visit_linear(p + "attn_q", st.attn_q, fn);
    visit_linear(p + "attn_k", st.attn_k, fn);
    visit_linear(p + "attn_v", st.attn_v, fn);
    visit_linear(p + "attn_out", st.attn_out, fn);
    visit_linear(p + "ffn_in", st.ffn_in, fn);
    visit_linear(p + "ffn_out", st.ffn_out, fn);
    fn(p + "norm1.scale", st.norm1.scale);
    fn(p + "norm1.shift", st.norm1.shift);
    fn(p + "norm2.scale", st.norm2.scale);
    fn(p + "norm2.shift", st.norm2.shift);
    for (std::size_t i = 0; i < st.head_mask_ffn.size(); ++i) {
      visit_linear(p + "head_mask." + std::to_string(i), st.head_mask_ffn[i], fn);
    }
    for (std::size_t i = 0; i < st.head_cls_ffn.size(); ++i) {
      visit_linear(p + "head_cls." + std::to_string(i), st.head_cls_ffn[i], fn);
    }
  }
}

std::size_t count_layers(const json& tensors, const std::string& prefix) {
  std::size_t n = 0;
  while (tensors.contains(prefix + std::to_string(n) + ".weight")) ++n;
  return n;
}

}  // namespace

json pipeline_config_to_json(const PipelineConfig& cfg) {
  return {{"num_updates", cfg.num_updates}, {"num_kernels", cfg.num_kernels},
          {"channels", cfg.channels},       {"heads", cfg.heads},
          {"num_classes", cfg.num_classes}, {"thing_class_count", cfg.thing_class_count}};
}

PipelineConfig pipeline_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("pipeline config must be a JSON object");
  PipelineConfig cfg;
  const std::map<std::string, std::size_t*> fields{{"num_updates", &cfg.num_updates},
                                                   {"num_kernels", &cfg.num_kernels},
                                                   {"channels", &cfg.channels},
                                                   {"heads", &cfg.heads},
                                                   {"num_classes", &cfg.num_classes},
                                                   {"thing_class_count", &cfg.thing_class_count}};
  for (const auto& [key, value] : doc.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown pipeline config key '" + key + "'");
    if (!value.is_number_unsigned()) throw ConfigError("pipeline config key '" + key + "' must be a nonnegative integer");
    *it->second = value.get<std::size_t>();
  }
  cfg.validate();
  return cfg;
}

void save_weight_bundle(const fs::path& dir, const WeightBundle& bundle) {
  validate_weights(bundle.weights, bundle.config);
  fs::create_directories(dir);
  write_json(dir / "config.json", pipeline_config_to_json(bundle.config));
  json tensors = json::object();
  PipelineWeights copy = bundle.weights;
  visit_weights(copy, [&](const std::string& name, Tensor& t) {
    const std::string file = name + ".bin";
    write_f32_le(dir / file, t.data());
    tensors[name] = tensor_manifest(t.shape(), file);
  });
  write_json(dir / "manifest.json", {{"tensors", tensors}});
}

WeightBundle load_weight_bundle(const fs::path& dir) {
  WeightBundle bundle;
  bundle.config = pipeline_config_from_json(read_json(dir / "config.json"));
  const json manifest = read_json(dir / "manifest.json");
  if (!manifest.contains("tensors") || !manifest.at("tensors").is_object()) {
    throw FormatError(dir.string() + "/manifest.json lacks a \"tensors\" object");
  }
  const json& tensors = manifest.at("tensors");

  // Build the skeleton from the manifest, then check every declared shape
  // against the config before any payload is read.
  PipelineWeights& w = bundle.weights;
  if (tensors.contains("init.aux_kernels")) w.init.aux = AuxSemanticHead{};
  w.stages.resize(bundle.config.num_updates);
  for (std::size_t s = 0; s < w.stages.size(); ++s) {
    const std::string p = "stage" + std::to_string(s) + ".";
    w.stages[s].head_mask_ffn.resize(count_layers(tensors, p + "head_mask."));
    w.stages[s].head_cls_ffn.resize(count_layers(tensors, p + "head_cls."));
  }
  std::size_t visited = 0;
  visit_weights(w, [&](const std::string& name, Tensor& t) {
    if (!tensors.contains(name)) throw FormatError("weight bundle is missing tensor '" + name + "'");
    const json& entry = tensors.at(name);
    Shape shape;
    try {
      shape = entry.at("shape").get<Shape>();
    } catch (const json::exception& e) {
      throw FormatError("tensor '" + name + "': " + e.what());
    }
    t = Tensor(shape);  // placeholder for validation
    ++visited;
  });
  if (visited != tensors.size()) {
    throw FormatError("weight bundle lists " + std::to_string(tensors.size()) + " tensors, " +
                      std::to_string(visited) + " expected for this config");
  }
  validate_weights(w, bundle.config);
  visit_weights(w, [&](const std::string& name, Tensor& t) { t = load_tensor_entry(tensors.at(name), dir); });
  validate_weights(w, bundle.config);
  return bundle;
}

}  // namespace rtknet
