#include "rtknet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

#include "rtknet/numerics.hpp"

namespace rtknet {

using nlohmann::json;

namespace {

void expect_same_shape(const TensorD& a, const TensorD& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

double log_sum_exp(std::span<const double> x) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : x) peak = std::max(peak, v);
  double total = 0.0;
  for (double v : x) total += std::exp(v - peak);
  return peak + std::log(total);
}

void expect_scene_grid(const TensorD& t, std::size_t leading_axes, const GroundTruthScene& gt, const char* what) {
  if (t.rank() != leading_axes + 2 || t.dim(leading_axes) != gt.height || t.dim(leading_axes + 1) != gt.width) {
    throw DimensionError(std::string(what) + ": tensor " + shape_string(t.shape()) + " does not cover the " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width) + " scene");
  }
}

// Prediction assigned to each scene segment, or none.
std::vector<std::optional<std::size_t>> owners(const Assignment& assignment, std::size_t segments) {
  std::vector<std::optional<std::size_t>> owner(segments);
  for (const auto& [pred, seg] : assignment.pairs) {
    if (seg >= segments) throw AssignmentError("assignment refers to segment " + std::to_string(seg));
    owner[seg] = pred;
  }
  return owner;
}

TensorD plane(const TensorD& t, std::size_t index) {
  auto s = t.slice(index);
  return TensorD({t.dim(1), t.dim(2)}, std::vector<double>(s.begin(), s.end()));
}

TensorD softmax_rows(const TensorD& logits) {
  TensorD out(logits.shape());
  const std::size_t k = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    auto row = logits.slice(i);
    const double lse = log_sum_exp(row);
    for (std::size_t j = 0; j < k; ++j) out(i, j) = std::exp(row[j] - lse);
  }
  return out;
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {mask, dice, cls, rank, seg, inst, focal_gamma, focal_alpha, bootstrap_fraction,
                   small_instance_weight}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and nonnegative");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (bootstrap_fraction > 1.0) throw ConfigError("bootstrap fraction must not exceed 1");
}

json loss_weights_to_json(const LossWeights& w) {
  return {{"mask", w.mask},
          {"dice", w.dice},
          {"cls", w.cls},
          {"rank", w.rank},
          {"seg", w.seg},
          {"inst", w.inst},
          {"focal_gamma", w.focal_gamma},
          {"focal_alpha", w.focal_alpha},
          {"temperature", w.temperature},
          {"bootstrap_fraction", w.bootstrap_fraction},
          {"small_instance_area", w.small_instance_area},
          {"small_instance_weight", w.small_instance_weight},
          {"samples_per_segment", w.samples_per_segment}};
}

LossWeights loss_weights_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("loss weights must be a JSON object");
  LossWeights w;
  const std::map<std::string, double*> reals{{"mask", &w.mask},
                                             {"dice", &w.dice},
                                             {"cls", &w.cls},
                                             {"rank", &w.rank},
                                             {"seg", &w.seg},
                                             {"inst", &w.inst},
                                             {"focal_gamma", &w.focal_gamma},
                                             {"focal_alpha", &w.focal_alpha},
                                             {"temperature", &w.temperature},
                                             {"bootstrap_fraction", &w.bootstrap_fraction},
                                             {"small_instance_weight", &w.small_instance_weight}};
  const std::map<std::string, std::size_t*> counts{{"small_instance_area", &w.small_instance_area},
                                                   {"samples_per_segment", &w.samples_per_segment}};
  for (const auto& [key, value] : doc.items()) {
    if (auto it = reals.find(key); it != reals.end()) {
      if (!value.is_number()) throw ConfigError("loss key '" + key + "' must be a number");
      *it->second = value.get<double>();
    } else if (auto jt = counts.find(key); jt != counts.end()) {
      if (!value.is_number_unsigned()) throw ConfigError("loss key '" + key + "' must be a nonnegative integer");
      *jt->second = value.get<std::size_t>();
    } else {
      throw ConfigError("unknown loss key '" + key + "'");
    }
  }
  w.validate();
  return w;
}

LossGrad dice_loss(const TensorD& logits, const TensorD& target) {
  expect_same_shape(logits, target, "dice_loss");
  const std::size_t n = logits.size();
  std::vector<double> m(n);
  double inter = 0.0, sum_m = 0.0, sum_g = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = sigmoid(logits[i]);
    inter += m[i] * target[i];
    sum_m += m[i];
    sum_g += target[i];
  }
  const double num = 2.0 * inter + kDiceEps;
  const double den = sum_m + sum_g + kDiceEps;
  LossGrad out{1.0 - num / den, TensorD(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    const double d_m = -(2.0 * target[i] * den - num) / (den * den);
    out.grad[i] = d_m * m[i] * (1.0 - m[i]);
  }
  return out;
}

LossGrad mask_bce_loss(const TensorD& logits, const TensorD& target) {
  expect_same_shape(logits, target, "mask_bce_loss");
  const auto n = static_cast<double>(logits.size());
  LossGrad out{0.0, TensorD(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i], g = target[i];
    out.value += softplus(x) - g * x;
    out.grad[i] = (sigmoid(x) - g) / n;
  }
  out.value /= n;
  return out;
}

LossGrad focal_loss(const TensorD& logits, std::span<const std::size_t> targets, double gamma, double alpha) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("focal_loss expects [N,K] logits with N targets, got " + shape_string(logits.shape()));
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  LossGrad out{0.0, TensorD(logits.shape())};
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t t = targets[i];
    if (t >= k) throw InputError("focal target " + std::to_string(t) + " out of range");
    auto row = logits.slice(i);
    const double lse = log_sum_exp(row);
    const double log_q = row[t] - lse;
    const double q = std::exp(log_q);
    const double rest = 1.0 - q;
    const double modulation = std::pow(rest, gamma);
    out.value += -alpha * modulation * log_q;
    // d/dz_j = alpha [gamma (1-q)^(gamma-1) q log q - (1-q)^gamma] (delta_tj - p_j)
    const double lead = (gamma == 0.0 || rest <= 0.0) ? 0.0 : gamma * std::pow(rest, gamma - 1.0) * q * log_q;
    const double factor = alpha * (lead - modulation);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - lse);
      out.grad(i, j) = factor * ((j == t ? 1.0 : 0.0) - p) / static_cast<double>(rows);
    }
  }
  out.value /= static_cast<double>(rows);
  return out;
}

LossGrad focal_cls_loss(const TensorD& class_logits, const Assignment& assignment, const GroundTruthScene& gt,
                        const LossWeights& w) {
  if (class_logits.rank() != 2) throw DimensionError("class logits must be [N,N_c]");
  const std::size_t n = class_logits.dim(0), nc = class_logits.dim(1);
  TensorD extended({n, nc + 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) extended(i, c) = class_logits(i, c);
  }
  std::vector<std::size_t> targets(n, nc);
  for (const auto& [pred, seg] : assignment.pairs) {
    if (pred >= n || seg >= gt.segments.size()) throw AssignmentError("assignment index out of range");
    if (gt.segments[seg].class_id >= nc) throw InputError("segment class exceeds the class count");
    targets[pred] = gt.segments[seg].class_id;
  }
  LossGrad full = focal_loss(extended, targets, w.focal_gamma, w.focal_alpha);
  LossGrad out{full.value, TensorD(class_logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) out.grad(i, c) = full.grad(i, c);
  }
  return out;
}

LossGrad rank_loss(const TensorD& masks, const Assignment& assignment, const GroundTruthScene& gt) {
  expect_scene_grid(masks, 1, gt, "rank_loss");
  const std::size_t n = masks.dim(0), hw = gt.height * gt.width;
  const auto owner = owners(assignment, gt.segments.size());
  std::vector<std::optional<std::size_t>> target(hw);
  std::size_t supervised = 0;
  for (std::size_t s = 0; s < gt.segments.size(); ++s) {
    if (!owner[s]) continue;
    if (*owner[s] >= n) throw AssignmentError("assigned prediction out of range");
    const auto& bits = gt.segments[s].mask.bits;
    for (std::size_t p = 0; p < hw; ++p) {
      if (bits[p]) {
        target[p] = *owner[s];
        ++supervised;
      }
    }
  }
  LossGrad out{0.0, TensorD(masks.shape())};
  if (supervised == 0) return out;
  std::vector<double> column(n);
  const auto count = static_cast<double>(supervised);
  for (std::size_t p = 0; p < hw; ++p) {
    if (!target[p]) continue;
    for (std::size_t i = 0; i < n; ++i) column[i] = masks[i * hw + p];
    const double lse = log_sum_exp(column);
    out.value += lse - column[*target[p]];
    for (std::size_t i = 0; i < n; ++i) {
      out.grad[i * hw + p] = (std::exp(column[i] - lse) - (i == *target[p] ? 1.0 : 0.0)) / count;
    }
  }
  out.value /= count;
  return out;
}

SegLoss bootstrapped_seg_loss(const TensorD& seg_logits, const GroundTruthScene& gt, const LossWeights& w) {
  expect_scene_grid(seg_logits, 1, gt, "bootstrapped_seg_loss");
  const std::size_t nc = seg_logits.dim(0), hw = gt.height * gt.width;
  if (gt.semantic_map.size() != hw) throw InputError("scene semantic map is missing");

  std::vector<double> weight(hw, 1.0);
  for (const auto& seg : gt.segments) {
    if (!seg.is_thing || seg.mask.area() >= w.small_instance_area) continue;
    for (std::size_t p = 0; p < hw; ++p) {
      if (seg.mask.bits[p]) weight[p] = w.small_instance_weight;
    }
  }
  std::vector<double> losses;
  std::vector<double> column(nc);
  for (std::size_t p = 0; p < hw; ++p) {
    const std::int32_t label = gt.semantic_map[p];
    if (label == kIgnoreLabel) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= nc) throw InputError("semantic label exceeds class count");
    for (std::size_t c = 0; c < nc; ++c) column[c] = seg_logits[c * hw + p];
    losses.push_back(weight[p] * (log_sum_exp(column) - column[static_cast<std::size_t>(label)]));
  }
  if (losses.empty()) return {0.0, true};
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(w.bootstrap_fraction * static_cast<double>(losses.size()))), 1,
      losses.size());
  std::partial_sort(losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(keep), losses.end(),
                    std::greater<>());
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += losses[i];
  return {total / static_cast<double>(keep), false};
}

LossGrad contrastive_loss(const TensorD& samples, std::span<const std::size_t> groups, double temperature) {
  if (samples.rank() != 2 || samples.dim(0) != groups.size()) {
    throw DimensionError("contrastive_loss expects [A,C] samples with A group ids");
  }
  const std::size_t a_count = samples.dim(0), c = samples.dim(1);
  LossGrad out{0.0, TensorD(samples.shape())};
  if (a_count < 2) return out;

  TensorD z(samples.shape());
  std::vector<double> norm(a_count);
  for (std::size_t a = 0; a < a_count; ++a) {
    double sq = 0.0;
    for (std::size_t k = 0; k < c; ++k) sq += samples(a, k) * samples(a, k);
    norm[a] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t k = 0; k < c; ++k) z(a, k) = samples(a, k) / norm[a];
  }
  TensorD sim({a_count, a_count});
  for (std::size_t a = 0; a < a_count; ++a) {
    for (std::size_t b = 0; b < a_count; ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += z(a, k) * z(b, k);
      sim(a, b) = dot;
    }
  }

  TensorD grad_z(samples.shape());
  std::vector<double> scaled(a_count - 1);
  for (std::size_t a = 0; a < a_count; ++a) {
    std::size_t positives = 0;
    for (std::size_t b = 0; b < a_count; ++b) positives += (b != a && groups[b] == groups[a]) ? 1 : 0;
    if (positives == 0) continue;
    std::size_t idx = 0;
    for (std::size_t b = 0; b < a_count; ++b) {
      if (b != a) scaled[idx++] = sim(a, b) / temperature;
    }
    const double lse = log_sum_exp(scaled);
    double pos_sum = 0.0;
    for (std::size_t b = 0; b < a_count; ++b) {
      if (b != a && groups[b] == groups[a]) pos_sum += sim(a, b) / temperature;
    }
    out.value += lse - pos_sum / static_cast<double>(positives);

    for (std::size_t b = 0; b < a_count; ++b) {
      if (b == a) continue;
      const double weight = std::exp(sim(a, b) / temperature - lse);
      const double positive = groups[b] == groups[a] ? 1.0 / static_cast<double>(positives) : 0.0;
      const double g = (weight - positive) / temperature;  // dL / d sim(a, b)
      for (std::size_t k = 0; k < c; ++k) {
        grad_z(a, k) += g * z(b, k);
        grad_z(b, k) += g * z(a, k);
      }
    }
  }
  // Back through x / |x|: (g - z (z . g)) / |x|.
  for (std::size_t a = 0; a < a_count; ++a) {
    double proj = 0.0;
    for (std::size_t k = 0; k < c; ++k) proj += z(a, k) * grad_z(a, k);
    for (std::size_t k = 0; k < c; ++k) out.grad(a, k) = (grad_z(a, k) - z(a, k) * proj) / norm[a];
  }
  return out;
}

InstanceLoss instance_discrimination_loss(const TensorD& features, const GroundTruthScene& gt, double temperature,
                                          std::uint64_t seed, std::size_t samples_per_segment) {
  expect_scene_grid(features, 1, gt, "instance_discrimination_loss");
  const std::size_t c = features.dim(0), hw = gt.height * gt.width;
  std::mt19937_64 rng(seed);
  InstanceLoss out;
  for (std::size_t s = 0; s < gt.segments.size(); ++s) {
    std::vector<std::size_t> pool;
    const auto& bits = gt.segments[s].mask.bits;
    for (std::size_t p = 0; p < hw; ++p) {
      if (bits[p]) pool.push_back(p);
    }
    const std::size_t take = std::min(samples_per_segment, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.pixels.push_back({pool[i] / gt.width, pool[i] % gt.width});
      out.groups.push_back(s);
    }
  }
  const std::size_t a_count = out.pixels.size();
  if (a_count < 2) {
    out.degenerate = true;
    out.grad = TensorD({std::max<std::size_t>(a_count, 1), c});
    out.sampled_features = out.grad;
    return out;
  }
  out.sampled_features = TensorD({a_count, c});
  for (std::size_t a = 0; a < a_count; ++a) {
    const std::size_t p = out.pixels[a].row * gt.width + out.pixels[a].col;
    for (std::size_t k = 0; k < c; ++k) out.sampled_features(a, k) = features[k * hw + p];
  }
  LossGrad lg = contrastive_loss(out.sampled_features, out.groups, temperature);
  out.value = lg.value;
  out.grad = std::move(lg.grad);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> fixed_stuff_assign(const GroundTruthScene& gt,
                                                                    const PipelineConfig& cfg) {
  const std::size_t n_stuff = cfg.stuff_class_count();
  if (n_stuff > cfg.num_kernels) throw AssignmentError("more stuff classes than kernels");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<bool> seen(n_stuff, false);
  for (std::size_t s = 0; s < gt.segments.size(); ++s) {
    const auto& seg = gt.segments[s];
    if (seg.is_thing) continue;
    if (seg.class_id < cfg.thing_class_count || seg.class_id >= cfg.num_classes) {
      throw AssignmentError("stuff segment " + std::to_string(s) + " has non-stuff class " +
                            std::to_string(seg.class_id));
    }
    const std::size_t j = seg.class_id - cfg.thing_class_count;
    if (seen[j]) throw AssignmentError("stuff class " + std::to_string(seg.class_id) + " appears twice");
    seen[j] = true;
    pairs.emplace_back(cfg.num_kernels - n_stuff + j, s);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

MatchingCost matching_cost(const TensorD& masks, const TensorD& probs, const GroundTruthScene& gt,
                           const LossWeights& w, const PipelineConfig& cfg) {
  expect_scene_grid(masks, 1, gt, "matching_cost");
  if (probs.rank() != 2 || probs.dim(0) != masks.dim(0)) {
    throw DimensionError("matching_cost: probs " + shape_string(probs.shape()) + " do not match masks");
  }
  if (masks.dim(0) != cfg.num_kernels) throw DimensionError("matching_cost: mask count differs from num_kernels");
  const std::size_t free_kernels = cfg.num_kernels - cfg.stuff_class_count();
  MatchingCost out;
  for (std::size_t s = 0; s < gt.segments.size(); ++s) {
    if (gt.segments[s].is_thing) out.segments.push_back(s);
  }
  if (out.segments.size() > free_kernels) {
    throw AssignmentError(std::to_string(out.segments.size()) + " thing segments exceed the " +
                          std::to_string(free_kernels) + " thing-eligible kernels");
  }
  out.cost = CostMatrix(free_kernels, out.segments.size());
  for (std::size_t j = 0; j < out.segments.size(); ++j) {
    const Segment& seg = gt.segments[out.segments[j]];
    if (seg.class_id >= probs.dim(1)) throw InputError("segment class exceeds the class count");
    const TensorD target = seg.mask.to_tensor();
    for (std::size_t i = 0; i < free_kernels; ++i) {
      const TensorD logits = plane(masks, i);
      out.cost(i, j) = -w.cls * probs(i, seg.class_id) + w.mask * mask_bce_loss(logits, target).value +
                       w.dice * dice_loss(logits, target).value;
    }
  }
  return out;
}

Assignment assign_targets(const TensorD& masks, const TensorD& probs, const GroundTruthScene& gt,
                          const LossWeights& w, const PipelineConfig& cfg) {
  Assignment out;
  out.pairs = fixed_stuff_assign(gt, cfg);
  const MatchingCost mc = matching_cost(masks, probs, gt, w, cfg);
  if (mc.cost.cols > 0) {
    const Assignment things = hungarian_assign(mc.cost);
    for (const auto& [row, col] : things.pairs) out.pairs.emplace_back(row, mc.segments[col]);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  std::vector<bool> used(cfg.num_kernels, false);
  for (const auto& [pred, seg] : out.pairs) {
    if (used[pred]) throw AssignmentError("kernel " + std::to_string(pred) + " assigned twice");
    used[pred] = true;
  }
  for (std::size_t i = 0; i < cfg.num_kernels; ++i) {
    if (!used[i]) out.unmatched.push_back(i);
  }
  return out;
}

json LossBreakdown::to_json() const {
  return {{"mask", mask}, {"dice", dice}, {"cls", cls}, {"rank", rank}, {"seg", seg}, {"inst", inst},
          {"total", total}, {"seg_all_ignored", seg_all_ignored}, {"inst_degenerate", inst_degenerate}};
}

LossBreakdown total_loss(std::span<const StagePrediction> stages, const std::optional<TensorD>& seg_logits,
                         const std::optional<TensorD>& embeddings, const GroundTruthScene& gt, const LossWeights& w,
                         const PipelineConfig& cfg, std::uint64_t seed) {
  if (stages.empty()) throw InputError("total_loss needs at least one supervised stage");
  w.validate();
  const StagePrediction& last = stages.back();
  const Assignment assignment = assign_targets(last.masks, softmax_rows(last.class_logits), gt, w, cfg);

  LossBreakdown out;
  for (const auto& stage : stages) {
    if (!assignment.pairs.empty()) {
      double mask_sum = 0.0, dice_sum = 0.0;
      for (const auto& [pred, seg] : assignment.pairs) {
        const TensorD logits = plane(stage.masks, pred);
        const TensorD target = gt.segments[seg].mask.to_tensor();
        mask_sum += mask_bce_loss(logits, target).value;
        dice_sum += dice_loss(logits, target).value;
      }
      out.mask += mask_sum / static_cast<double>(assignment.pairs.size());
      out.dice += dice_sum / static_cast<double>(assignment.pairs.size());
    }
    out.cls += focal_cls_loss(stage.class_logits, assignment, gt, w).value;
    out.rank += rank_loss(stage.masks, assignment, gt).value;
  }
  if (seg_logits) {
    const SegLoss s = bootstrapped_seg_loss(*seg_logits, gt, w);
    out.seg = s.value;
    out.seg_all_ignored = s.all_ignored;
  }
  if (embeddings) {
    const InstanceLoss inst = instance_discrimination_loss(*embeddings, gt, w.temperature, seed, w.samples_per_segment);
    out.inst = inst.value;
    out.inst_degenerate = inst.degenerate;
  }
  out.total = w.mask * out.mask + w.dice * out.dice + w.cls * out.cls + w.rank * out.rank + w.seg * out.seg +
              w.inst * out.inst;
  return out;
}

}  // namespace rtknet
