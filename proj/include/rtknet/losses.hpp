#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "rtknet/hungarian.hpp"
#include "rtknet/kernel_update.hpp"
#include "rtknet/scene.hpp"
#include "rtknet/tensor.hpp"

namespace rtknet {

struct LossWeights {
  double mask = 1.0;
  double dice = 4.0;
  double cls = 2.0;
  double rank = 0.1;
  double seg = 1.0;
  double inst = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double temperature = 0.3;
  double bootstrap_fraction = 0.15;
  std::size_t small_instance_area = 4096;
  double small_instance_weight = 3.0;
  std::size_t samples_per_segment = 8;

  void validate() const;  // all nonnegative, temperature > 0
};

nlohmann::json loss_weights_to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& doc);

// Scalar loss with its gradient with respect to the direct input.
struct LossGrad {
  double value = 0.0;
  TensorD grad;
};

inline constexpr double kDiceEps = 1e-3;

// 1 - (2 sum(m g) + eps) / (sum m + sum g + eps) with m = sigmoid(logits).
LossGrad dice_loss(const TensorD& logits, const TensorD& target);

// Per-pixel mean binary cross-entropy in logit form.
LossGrad mask_bce_loss(const TensorD& logits, const TensorD& target);

// Softmax focal loss, mean over rows: -alpha (1 - p_t)^gamma log p_t.
// logits: [N,K]; targets: one class index < K per row.
LossGrad focal_loss(const TensorD& logits, std::span<const std::size_t> targets, double gamma, double alpha);

// Classification loss over N_c classes plus a no-object class whose logit is
// the constant 0. Matched predictions target their segment's class,
// unmatched ones target no-object. Gradient is w.r.t. the [N,N_c] logits.
LossGrad focal_cls_loss(const TensorD& class_logits, const Assignment& assignment, const GroundTruthScene& gt,
                        const LossWeights& w);

// Per-pixel cross-entropy over the N mask logits, the target being the
// prediction assigned to the segment owning the pixel. Unowned pixels are
// ignored. masks: [N,H,W].
LossGrad rank_loss(const TensorD& masks, const Assignment& assignment, const GroundTruthScene& gt);

struct SegLoss {
  double value = 0.0;
  bool all_ignored = false;
};

// Weighted cross-entropy on [N_c,H,W] logits averaged over the top
// bootstrap_fraction of per-pixel losses. Pixels of thing segments smaller
// than small_instance_area weigh small_instance_weight.
SegLoss bootstrapped_seg_loss(const TensorD& seg_logits, const GroundTruthScene& gt, const LossWeights& w);

// Supervised contrastive loss over sampled embeddings [A,C] with group ids.
// Embeddings are L2-normalized first; the gradient is w.r.t. the raw rows.
// Fewer than two samples gives 0.
LossGrad contrastive_loss(const TensorD& samples, std::span<const std::size_t> groups, double temperature);

struct InstanceLoss {
  double value = 0.0;
  TensorD grad;                // [A,C], w.r.t. sampled feature vectors
  TensorD sampled_features;    // [A,C]
  std::vector<Pixel> pixels;   // sampled locations
  std::vector<std::size_t> groups;
  bool degenerate = false;     // fewer than two samples
};

// Samples up to samples_per_segment pixels from each segment (seeded,
// without replacement) and applies contrastive_loss. features: [C,H,W].
InstanceLoss instance_discrimination_loss(const TensorD& features, const GroundTruthScene& gt, double temperature,
                                          std::uint64_t seed, std::size_t samples_per_segment = 8);

// Stuff segments map to the reserved tail kernels: stuff class j (class id
// thing_class_count + j) takes kernel N - N_stuff + j. Pairs are
// (kernel, segment index).
std::vector<std::pair<std::size_t, std::size_t>> fixed_stuff_assign(const GroundTruthScene& gt,
                                                                    const PipelineConfig& cfg);

struct MatchingCost {
  CostMatrix cost;                    // [N_free, G_th]
  std::vector<std::size_t> segments;  // scene index of each column
};

// cost(i, j) = -w.cls p_i[c_j] + w.mask BCE(M_i, G_j) + w.dice dice(M_i, G_j)
// over the thing-eligible kernel prefix. masks [N,H,W], probs [N,N_c].
MatchingCost matching_cost(const TensorD& masks, const TensorD& probs, const GroundTruthScene& gt,
                           const LossWeights& w, const PipelineConfig& cfg);

// Fixed stuff pairs plus Hungarian thing pairs, sorted by prediction.
Assignment assign_targets(const TensorD& masks, const TensorD& probs, const GroundTruthScene& gt,
                          const LossWeights& w, const PipelineConfig& cfg);

struct StagePrediction {
  TensorD masks;         // [N,H,W]
  TensorD class_logits;  // [N,N_c]
};

struct LossBreakdown {
  double mask = 0.0;  // unweighted, summed over stages
  double dice = 0.0;
  double cls = 0.0;
  double rank = 0.0;
  double seg = 0.0;
  double inst = 0.0;
  double total = 0.0;
  bool seg_all_ignored = false;
  bool inst_degenerate = false;

  nlohmann::json to_json() const;
};

// Weighted sum of every term. The assignment is computed once on the last
// stage and reused for all stages. seg_logits [N_c,H,W] and embeddings
// [C,H,W] are optional; absent terms contribute zero.
LossBreakdown total_loss(std::span<const StagePrediction> stages, const std::optional<TensorD>& seg_logits,
                         const std::optional<TensorD>& embeddings, const GroundTruthScene& gt, const LossWeights& w,
                         const PipelineConfig& cfg, std::uint64_t seed);

}  // namespace rtknet
