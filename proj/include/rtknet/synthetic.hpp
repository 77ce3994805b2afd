#pragma once

#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "rtknet/kernel_update.hpp"
#include "rtknet/scene.hpp"
#include "rtknet/tensor.hpp"
#include "rtknet/weights_io.hpp"

namespace rtknet {

struct SyntheticSceneSpec {
  std::size_t height = 64;
  std::size_t width = 128;
  std::size_t num_things = 4;
  std::size_t num_stuff = 2;  // horizontal background bands
  std::size_t channels = 32;
  double noise = 0.0;  // std of the additive Gaussian feature noise
  std::uint64_t seed = 0;
  std::size_t num_classes = 19;
  std::size_t thing_class_count = 8;
  std::size_t max_retries = 200;  // placement draws per thing

  void validate() const;
};

nlohmann::json synthetic_spec_to_json(const SyntheticSceneSpec& spec);
SyntheticSceneSpec synthetic_spec_from_json(const nlohmann::json& doc);

struct SyntheticScene {
  GroundTruthScene scene;
  Tensor features;    // [1,C,H,W]
  Tensor embeddings;  // [S,C], one row per scene segment
};

// Rectangles and ellipses as things over stuff bands. Each segment's
// embedding is zero-mean, orthogonal to the others and has squared norm C,
// so at most C - 1 segments fit. Throws GenerationError when the shapes
// cannot be placed or the segments do not fit.
SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec);

// Weights under which the pipeline reproduces the scene's partition: every
// kernel keeps its segment embedding through all updates, mask logits sit
// near +C/2 on the segment and -C/2 elsewhere, and the class head puts
// almost all probability on the segment class. Thing kernels come first,
// stuff class j takes kernel N - N_stuff + j. `base` supplies num_updates
// and heads.
WeightBundle oracle_weight_bundle(const SyntheticScene& synthetic, const SyntheticSceneSpec& spec,
                                  const PipelineConfig& base);

struct BenchInputs {
  Tensor masks;  // [N,H,W] logits
  Tensor probs;  // [N,N_c]
};

// Elliptical blobs with positive logits inside and negative outside; each
// mask's top score is uniform in [0.05, 1).
BenchInputs make_bench_inputs(std::size_t n, std::size_t height, std::size_t width, std::size_t num_classes,
                              std::uint64_t seed);

}  // namespace rtknet
