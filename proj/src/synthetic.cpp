#include "rtknet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "rtknet/errors.hpp"

namespace rtknet {

using nlohmann::json;

namespace {

constexpr float kFeatureBias = 10.0f;  // keeps the init ReLU inactive
constexpr float kKernelShift = 0.05f;  // kernel_shift * bias = 1/2
constexpr float kClassGain = 20.0f;
constexpr float kGateBias = 20.0f;

BinaryMask draw_shape(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  const std::size_t min_h = std::max<std::size_t>(2, h / 10), max_h = std::max(min_h, h / 4);
  const std::size_t min_w = std::max<std::size_t>(2, w / 10), max_w = std::max(min_w, w / 4);
  const std::size_t sh = std::min(h, std::uniform_int_distribution<std::size_t>(min_h, max_h)(rng));
  const std::size_t sw = std::min(w, std::uniform_int_distribution<std::size_t>(min_w, max_w)(rng));
  const std::size_t top = std::uniform_int_distribution<std::size_t>(0, h - sh)(rng);
  const std::size_t left = std::uniform_int_distribution<std::size_t>(0, w - sw)(rng);
  const bool ellipse = std::bernoulli_distribution(0.5)(rng);

  BinaryMask mask(h, w);
  const double cy = static_cast<double>(sh - 1) / 2.0, cx = static_cast<double>(sw - 1) / 2.0;
  const double ry = static_cast<double>(sh) / 2.0, rx = static_cast<double>(sw) / 2.0;
  for (std::size_t r = 0; r < sh; ++r) {
    for (std::size_t c = 0; c < sw; ++c) {
      bool inside = true;
      if (ellipse) {
        const double dy = (static_cast<double>(r) - cy) / ry, dx = (static_cast<double>(c) - cx) / rx;
        inside = dy * dy + dx * dx <= 1.0;
      }
      if (inside) mask.at(top + r, left + c) = 1;
    }
  }
  return mask;
}

// Zero-mean orthogonal rows of squared norm C via Gram-Schmidt.
Tensor orthogonal_embeddings(std::size_t count, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  basis.push_back(std::vector<double>(c, 1.0 / std::sqrt(static_cast<double>(c))));
  Tensor out({count, c});
  for (std::size_t s = 0; s < count; ++s) {
    std::vector<double> v;
    double norm = 0.0;
    while (norm < 1e-6) {
      v.assign(c, 0.0);
      for (auto& x : v) x = dist(rng);
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t k = 0; k < c; ++k) dot += v[k] * b[k];
        for (std::size_t k = 0; k < c; ++k) v[k] -= dot * b[k];
      }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (auto& x : v) x /= norm;
    basis.push_back(v);
    const double scale = std::sqrt(static_cast<double>(c));
    for (std::size_t k = 0; k < c; ++k) out(s, k) = static_cast<float>(v[k] * scale);
  }
  return out;
}

Linear bias_only(std::size_t features, float bias) {
  Linear l = Linear::zeros(features, features);
  for (auto& b : l.bias.data()) b = bias;
  return l;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (height < 1 || width < 1) throw ConfigError("scene size must be at least 1x1");
  if (num_things + num_stuff < 1) throw ConfigError("a scene needs at least one segment");
  if (num_stuff > height) throw ConfigError("more stuff bands than rows");
  if (thing_class_count > num_classes) throw ConfigError("thing_class_count exceeds num_classes");
  if (num_things > 0 && thing_class_count == 0) throw ConfigError("things requested but no thing classes");
  if (num_stuff > num_classes - thing_class_count) throw ConfigError("not enough stuff classes for the bands");
  if (channels < 2) throw ConfigError("need at least two feature channels");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be finite and nonnegative");
}

json synthetic_spec_to_json(const SyntheticSceneSpec& s) {
  return {{"height", s.height},         {"width", s.width},
          {"num_things", s.num_things}, {"num_stuff", s.num_stuff},
          {"channels", s.channels},     {"noise", s.noise},
          {"seed", s.seed},             {"num_classes", s.num_classes},
          {"thing_class_count", s.thing_class_count}, {"max_retries", s.max_retries}};
}

SyntheticSceneSpec synthetic_spec_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("scene spec must be a JSON object");
  SyntheticSceneSpec s;
  const std::map<std::string, std::size_t*> counts{
      {"height", &s.height},         {"width", &s.width},           {"num_things", &s.num_things},
      {"num_stuff", &s.num_stuff},   {"channels", &s.channels},     {"num_classes", &s.num_classes},
      {"thing_class_count", &s.thing_class_count}, {"max_retries", &s.max_retries}};
  for (const auto& [key, value] : doc.items()) {
    if (auto it = counts.find(key); it != counts.end()) {
      if (!value.is_number_unsigned()) throw ConfigError("scene key '" + key + "' must be a count");
      *it->second = value.get<std::size_t>();
    } else if (key == "noise") {
      if (!value.is_number()) throw ConfigError("scene noise must be a number");
      s.noise = value.get<double>();
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) throw ConfigError("scene seed must be a nonnegative integer");
      s.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("unknown scene key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t h = spec.height, w = spec.width;

  std::vector<Segment> things;
  BinaryMask occupied(h, w);
  for (std::size_t t = 0; t < spec.num_things; ++t) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      BinaryMask shape = draw_shape(h, w, rng);
      bool clash = false;
      for (std::size_t p = 0; p < shape.bits.size() && !clash; ++p) clash = shape.bits[p] && occupied.bits[p];
      if (clash) continue;
      for (std::size_t p = 0; p < shape.bits.size(); ++p) occupied.bits[p] |= shape.bits[p];
      const std::size_t cls = std::uniform_int_distribution<std::size_t>(0, spec.thing_class_count - 1)(rng);
      things.push_back({cls, true, std::move(shape)});
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place thing " + std::to_string(t) + " after " +
                            std::to_string(spec.max_retries) + " draws");
    }
  }

  // Distinct stuff classes, one band each, in ascending class order.
  std::vector<std::size_t> stuff_classes(spec.num_classes - spec.thing_class_count);
  for (std::size_t j = 0; j < stuff_classes.size(); ++j) stuff_classes[j] = spec.thing_class_count + j;
  std::shuffle(stuff_classes.begin(), stuff_classes.end(), rng);
  stuff_classes.resize(spec.num_stuff);
  std::sort(stuff_classes.begin(), stuff_classes.end());

  std::vector<Segment> segments = std::move(things);
  for (std::size_t b = 0; b < spec.num_stuff; ++b) {
    const std::size_t r0 = b * h / spec.num_stuff, r1 = (b + 1) * h / spec.num_stuff;
    Segment band{stuff_classes[b], false, BinaryMask(h, w)};
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = 0; c < w; ++c) band.mask.at(r, c) = occupied.at(r, c) ? 0 : 1;
    }
    if (band.mask.area() > 0) segments.push_back(std::move(band));
  }
  if (segments.size() + 1 > spec.channels) {
    throw GenerationError(std::to_string(segments.size()) + " segments need more than " +
                          std::to_string(spec.channels) + " channels");
  }

  SyntheticScene out;
  out.embeddings = orthogonal_embeddings(segments.size(), spec.channels, rng);
  out.features = Tensor({1, spec.channels, h, w});
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& bits = segments[s].mask.bits;
    for (std::size_t k = 0; k < spec.channels; ++k) {
      float* plane = &out.features(0, k, 0, 0);
      const float e = out.embeddings(s, k);
      for (std::size_t p = 0; p < h * w; ++p) {
        if (bits[p]) plane[p] = e;
      }
    }
  }
  if (spec.noise > 0.0) {
    std::normal_distribution<float> dist(0.0f, static_cast<float>(spec.noise));
    for (auto& v : out.features.data()) v += dist(rng);
  }
  out.scene = make_scene(h, w, std::move(segments));
  return out;
}

WeightBundle oracle_weight_bundle(const SyntheticScene& synthetic, const SyntheticSceneSpec& spec,
                                  const PipelineConfig& base) {
  const GroundTruthScene& scene = synthetic.scene;
  const std::size_t c = spec.channels;
  std::vector<std::size_t> thing_segments;
  for (std::size_t s = 0; s < scene.segments.size(); ++s) {
    if (scene.segments[s].is_thing) thing_segments.push_back(s);
  }

  WeightBundle bundle;
  PipelineConfig& cfg = bundle.config;
  cfg.num_updates = base.num_updates;
  cfg.heads = base.heads;
  cfg.channels = c;
  cfg.num_classes = spec.num_classes;
  cfg.thing_class_count = spec.thing_class_count;
  cfg.num_kernels = std::max<std::size_t>(1, thing_segments.size() + cfg.stuff_class_count());
  if (c % cfg.heads != 0) cfg.heads = 1;
  cfg.validate();

  // kernel -> segment row in the embedding table
  std::vector<std::optional<std::size_t>> source(cfg.num_kernels);
  for (std::size_t i = 0; i < thing_segments.size(); ++i) source[i] = thing_segments[i];
  for (std::size_t s = 0; s < scene.segments.size(); ++s) {
    const auto& seg = scene.segments[s];
    if (!seg.is_thing) source[cfg.num_kernels - cfg.stuff_class_count() + seg.class_id - cfg.thing_class_count] = s;
  }

  PipelineWeights& wts = bundle.weights;
  wts.init.conv_w = Linear::identity(c).weight;
  wts.init.conv_b = Tensor({c}, kFeatureBias);
  wts.init.k0 = Tensor({cfg.num_kernels, c});
  for (std::size_t i = 0; i < cfg.num_kernels; ++i) {
    if (!source[i]) continue;
    for (std::size_t k = 0; k < c; ++k) wts.init.k0(i, k) = synthetic.embeddings(*source[i], k);
  }

  Linear cls = Linear::zeros(cfg.num_classes, c);
  for (std::size_t s = 0; s < scene.segments.size(); ++s) {
    const std::size_t label = scene.segments[s].class_id;
    for (std::size_t k = 0; k < c; ++k) {
      cls.weight(label, k) += kClassGain * synthetic.embeddings(s, k) / static_cast<float>(c);
    }
  }
  for (std::size_t st = 0; st < cfg.num_updates; ++st) {
    KernelUpdateWeights stage{
        Linear::zeros(c, c),
        Linear::identity(c),
        bias_only(c, -kGateBias),
        bias_only(c, kGateBias),
        Linear::identity(c),
        Linear::identity(c),
        Linear::zeros(c, c),
        Linear::identity(c),
        Linear::zeros(cfg.ffn_hidden(), c),
        Linear::zeros(c, cfg.ffn_hidden()),
        LayerNormParams::unit(c),
        LayerNormParams::unit(c),
        {Linear::identity(c)},
        {cls},
    };
    for (auto& v : stage.norm2.shift.data()) v = -kKernelShift;
    wts.stages.push_back(std::move(stage));
  }
  validate_weights(wts, cfg);
  return bundle;
}

BenchInputs make_bench_inputs(std::size_t n, std::size_t height, std::size_t width, std::size_t num_classes,
                              std::uint64_t seed) {
  if (n < 1 || height < 1 || width < 1 || num_classes < 1) throw InputError("bench sizes must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  BenchInputs out{Tensor({n, height, width}), Tensor({n, num_classes})};
  for (std::size_t i = 0; i < n; ++i) {
    const float cy = unit(rng) * static_cast<float>(height), cx = unit(rng) * static_cast<float>(width);
    const float ry = (0.05f + 0.2f * unit(rng)) * static_cast<float>(height);
    const float rx = (0.05f + 0.2f * unit(rng)) * static_cast<float>(width);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const float dy = (static_cast<float>(r) - cy) / ry, dx = (static_cast<float>(c) - cx) / rx;
        const float magnitude = 0.5f + 7.5f * unit(rng);
        out.masks(i, r, c) = dy * dy + dx * dx <= 1.0f ? magnitude : -magnitude;
      }
    }
    const std::size_t label = std::uniform_int_distribution<std::size_t>(0, num_classes - 1)(rng);
    const float top = 0.05f + 0.95f * unit(rng);
    const float rest = num_classes > 1 ? (1.0f - top) / static_cast<float>(num_classes - 1) : 0.0f;
    for (std::size_t k = 0; k < num_classes; ++k) out.probs(i, k) = k == label ? top : rest;
  }
  return out;
}

}  // namespace rtknet
