#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "rtknet/scene.hpp"
#include "rtknet/tensor.hpp"

namespace rtknet {

using Rng = std::mt19937_64;

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  // Closed pixel bounds.
  bool contains(const Pixel& p) const {
    return p.row >= top && p.row < top + height && p.col >= left && p.col < left + width;
  }
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

struct AugConfig {
  double scale_min = 0.5;
  double scale_max = 2.1;
  std::size_t crop_h = 512;
  std::size_t crop_w = 1024;
  std::size_t max_attempts = 10;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json aug_config_to_json(const AugConfig& cfg);
AugConfig aug_config_from_json(const nlohmann::json& doc);

// Scene plus its image, [C,H,W] on the same grid.
struct AugSample {
  GroundTruthScene scene;
  Tensor image;
};

struct CropResult {
  CropWindow window;
  std::size_t attempts = 0;  // windows drawn
  bool accepted = false;     // false when the last draw was kept as fallback
  AugSample sample;
};

std::vector<Pixel> thing_centroids(const GroundTruthScene& scene);

// Pads the bottom/right up to at least h x w: zeros in the image, no
// segment (ignore) in the scene.
AugSample pad_to(const AugSample& in, std::size_t h, std::size_t w);

// Cuts the window out; segments are clipped and empty ones dropped.
AugSample crop(const AugSample& in, const CropWindow& window);

// Draws uniform top-left corners until a window holds a thing centroid or
// max_attempts windows were drawn, in which case the last one is used.
CropResult instance_aware_crop(const AugSample& in, const AugConfig& cfg, Rng& rng);

// One uniform draw, no centroid check.
CropResult random_crop(const AugSample& in, const AugConfig& cfg, Rng& rng);

// Nearest-neighbour for the scene, bilinear (half-pixel centers) for the
// image. Output size is round(size * scale), at least 1.
AugSample rescale(const AugSample& in, double scale);
AugSample flip_horizontal(const AugSample& in);

struct ScaleFlipResult {
  double scale = 1.0;
  bool flipped = false;
  AugSample sample;
};

ScaleFlipResult scale_and_flip(const AugSample& in, const AugConfig& cfg, Rng& rng);

// Scale, flip, then instance-aware crop.
CropResult augment(const AugSample& in, const AugConfig& cfg, Rng& rng);

struct CropStats {
  std::size_t trials = 0;
  double instance_aware_rate = 0.0;  // windows containing a thing centroid
  double random_rate = 0.0;
  double mean_attempts = 0.0;
  std::size_t max_attempts_seen = 0;

  nlohmann::json to_json() const;
};

// Compares centroid containment of instance_aware_crop and random_crop over
// seeded trials on the given scene.
CropStats crop_acceptance_stats(const GroundTruthScene& scene, const AugConfig& cfg, std::size_t trials,
                                std::uint64_t seed);

}  // namespace rtknet
