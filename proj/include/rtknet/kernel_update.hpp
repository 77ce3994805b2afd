#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "rtknet/tensor.hpp"

namespace rtknet {

// Affine map y = W x + b applied to the last axis; weight is [out, in].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  // rows: any tensor whose last axis is in_features().
  Tensor apply(const Tensor& rows) const;

  static Linear identity(std::size_t features);
  static Linear zeros(std::size_t out, std::size_t in);
};

// Linear layers with ReLU between consecutive layers (none after the last).
Tensor apply_stack(const std::vector<Linear>& stack, const Tensor& rows);

struct LayerNormParams {
  Tensor scale;
  Tensor shift;

  static LayerNormParams unit(std::size_t features);
};

inline constexpr float kLayerNormEps = 1e-5f;

Tensor layer_norm(const Tensor& rows, const LayerNormParams& params);

struct KernelUpdateWeights {
  Linear psi1;    // group features
  Linear psi2;    // previous kernels
  Linear gate_f;
  Linear gate_k;
  Linear attn_q;
  Linear attn_k;
  Linear attn_v;
  Linear attn_out;
  Linear ffn_in;   // C -> 4C
  Linear ffn_out;  // 4C -> C
  LayerNormParams norm1;
  LayerNormParams norm2;
  std::vector<Linear> head_mask_ffn;  // C -> C
  std::vector<Linear> head_cls_ffn;   // C -> N_c
};

struct PipelineConfig {
  std::size_t num_updates = 4;
  std::size_t num_kernels = 100;
  std::size_t channels = 64;
  std::size_t heads = 8;
  std::size_t num_classes = 19;
  std::size_t thing_class_count = 8;

  std::size_t stuff_class_count() const { return num_classes - thing_class_count; }
  std::size_t ffn_hidden() const { return 4 * channels; }
  // Throws ConfigError when an invariant does not hold.
  void validate() const;
};

struct AuxSemanticHead {
  Tensor conv_w;   // [C, C], BN folded
  Tensor conv_b;   // [C]
  Tensor kernels;  // [N_c, C]
};

struct InitStageWeights {
  Tensor conv_w;  // [C, C], BN folded
  Tensor conv_b;  // [C]
  Tensor k0;      // [N, C]
  std::optional<AuxSemanticHead> aux;
};

struct PipelineWeights {
  InitStageWeights init;
  std::vector<KernelUpdateWeights> stages;
};

// Shape check of every tensor against the config; throws ConfigError.
void validate_weights(const PipelineWeights& weights, const PipelineConfig& cfg);

// Seeded random weights scaled by 1/sqrt(fan_in).
PipelineWeights random_pipeline_weights(const PipelineConfig& cfg, std::uint64_t seed, bool with_aux);

struct InitStageOutput {
  Tensor features;                  // F = ReLU(conv(input)), [B,C,H,W]
  Tensor masks;                     // M0, [B,N,H,W]
  std::optional<Tensor> seg_logits; // [B,N_c,H,W] when the aux head ran
};

InitStageOutput init_stage(const Tensor& features, const InitStageWeights& w, bool with_aux);

enum class GroupMode { baseline, normalized };
enum class Precision { f32, f16sim };

struct OverflowEntry {
  std::size_t batch;
  std::size_t kernel;
  std::size_t channel;
  friend bool operator==(const OverflowEntry&, const OverflowEntry&) = default;
};

struct GroupFeatures {
  Tensor features;  // [B,N,C]
  std::vector<OverflowEntry> overflow;
};

// Pools the feature map under each binarized mask. `normalized` divides by
// the mask area (empty masks give zeros). In f16sim the operands are rounded
// to binary16 and every running partial sum is range-checked against
// binary16; a partial sum that overflows sticks at +-inf and is reported.
GroupFeatures assemble_group_features(const Tensor& mask_logits_prev, const Tensor& features,
                                      GroupMode mode, Precision precision);

Tensor adaptive_update(const Tensor& group_feats, const Tensor& kernels_prev, const KernelUpdateWeights& w);

// Post-norm transformer block over the N kernels: self-attention then a ReLU
// FFN, each with a residual and layer normalization.
Tensor kernel_interaction(const Tensor& kernels, const KernelUpdateWeights& w, std::size_t heads);

struct HeadOutput {
  Tensor masks;         // [B,N,H,W]
  Tensor class_logits;  // [B,N,N_c]
  Tensor class_probs;   // [B,N,N_c], softmax of class_logits
};

HeadOutput predict_heads(const Tensor& kernels, const Tensor& features, const KernelUpdateWeights& w);

struct RunOptions {
  bool with_aux = false;
  GroupMode mode = GroupMode::normalized;
  Precision precision = Precision::f32;
};

struct PipelineOutput {
  Tensor features;
  Tensor initial_masks;
  std::optional<Tensor> seg_logits;
  std::vector<HeadOutput> stages;  // one per kernel update; back() is the inference output
  std::vector<OverflowEntry> overflow;  // accumulated over all stages (f16sim only)
};

PipelineOutput run_pipeline(const Tensor& features, const PipelineWeights& weights, const PipelineConfig& cfg,
                            const RunOptions& options = {});

}  // namespace rtknet
