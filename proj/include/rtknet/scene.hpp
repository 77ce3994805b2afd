#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rtknet/postprocess.hpp"
#include "rtknet/tensor.hpp"

namespace rtknet {

inline constexpr std::int32_t kIgnoreLabel = -1;

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t at(std::size_t row, std::size_t col) const { return bits[row * width + col]; }
  std::uint8_t& at(std::size_t row, std::size_t col) { return bits[row * width + col]; }
  std::size_t area() const;
  TensorD to_tensor() const;  // [H,W] of 0.0 / 1.0

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct Pixel {
  std::size_t row;
  std::size_t col;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

// Mean of the foreground coordinates, rounded half away from zero.
std::optional<Pixel> mask_centroid(const BinaryMask& mask);

struct Segment {
  std::size_t class_id = 0;
  bool is_thing = false;
  BinaryMask mask;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Disjoint labeled segments. semantic_map holds the class per pixel and
// kIgnoreLabel where no segment is present.
struct GroundTruthScene {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Segment> segments;
  std::vector<std::int32_t> semantic_map;

  void derive_semantic_map();
  // Throws InputError on size mismatches or overlapping segments.
  void validate() const;

  friend bool operator==(const GroundTruthScene&, const GroundTruthScene&) = default;
};

GroundTruthScene make_scene(std::size_t height, std::size_t width, std::vector<Segment> segments);

// Panoptic map of the ground truth: things get instance indices 1, 2, ... in
// segment order, stuff gets 0; unlabeled pixels are void.
PanopticLabelMap scene_to_label_map(const GroundTruthScene& scene, const PostprocConfig& cfg);

// <dir>/scene.json {"width","height","segments":[{"class_id","is_thing","mask_file"}]}
// with each mask stored as a raw u8 grid.
void save_scene(const std::filesystem::path& dir, const GroundTruthScene& scene);
GroundTruthScene load_scene(const std::filesystem::path& dir);

}  // namespace rtknet
