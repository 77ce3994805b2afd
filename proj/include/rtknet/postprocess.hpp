#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rtknet/tensor.hpp"

namespace rtknet {

inline constexpr std::uint32_t kVoidId = 0xffffffffu;

struct PostprocConfig {
  double score_threshold = 0.3;    // masks scoring below are dropped
  double overlap_threshold = 0.6;  // masks keeping less of their area are dropped
  std::uint32_t offset = 1000;
  std::uint32_t void_id = kVoidId;
  std::vector<bool> thing_classes;  // one flag per class

  std::size_t num_classes() const { return thing_classes.size(); }
  bool is_thing(std::size_t class_label) const { return thing_classes.at(class_label); }

  // Classes [0, thing_count) are things, the rest stuff.
  static PostprocConfig with_classes(std::size_t num_classes, std::size_t thing_count);

  // Throws ConfigError; num_masks is the N that instance indices must fit.
  void validate(std::size_t num_masks) const;
};

struct DecodedId {
  std::size_t class_label;
  std::size_t instance_index;
  friend bool operator==(const DecodedId&, const DecodedId&) = default;
};

// class_label * offset + instance_index; throws EncodingError when the
// instance index does not fit below offset or the id would hit void.
std::uint32_t encode_panoptic_id(std::size_t class_label, std::size_t instance_index, const PostprocConfig& cfg);
DecodedId decode_panoptic_id(std::uint32_t id, const PostprocConfig& cfg);

struct PanopticLabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t offset = 1000;
  std::uint32_t void_id = kVoidId;
  std::vector<std::uint32_t> ids;  // row-major

  std::uint32_t at(std::size_t row, std::size_t col) const { return ids[row * width + col]; }
  friend bool operator==(const PanopticLabelMap&, const PanopticLabelMap&) = default;
};

// Reference procedure: per-mask scores and labels, score filtering, argmax
// over score-weighted sigmoid masks, then an iterative overlap filter that
// pastes one mask at a time. Materializes the full [N,H,W] intermediates.
// masks: [N,H,W] logits; probs: [N,N_c].
PanopticLabelMap baseline_postprocess(const Tensor& masks, const Tensor& probs, const PostprocConfig& cfg,
                                      bool sort_by_score = false);

// Single-pass mask pasting with the same result contract as
// baseline_postprocess(sort_by_score = false). Pixels are split into
// `threads` contiguous ranges; all reductions are integer counts.
PanopticLabelMap optimized_postprocess(const Tensor& masks, const Tensor& probs, const PostprocConfig& cfg,
                                       std::size_t threads = 1);

// <stem>.json header {"width","height","offset","void_id","file"} plus a
// headerless little-endian u32 grid <stem>.bin.
void save_label_map(const std::filesystem::path& header_path, const PanopticLabelMap& map);
PanopticLabelMap load_label_map(const std::filesystem::path& header_path);

}  // namespace rtknet
