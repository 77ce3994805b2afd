#include "rtknet/kernel_update.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "rtknet/half.hpp"
#include "rtknet/numerics.hpp"

namespace rtknet {

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ConfigError(name + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(shape));
  }
}

void expect_linear(const Linear& l, std::size_t out, std::size_t in, const std::string& name) {
  expect_shape(l.weight, {out, in}, name + ".weight");
  expect_shape(l.bias, {out}, name + ".bias");
}

void expect_finite(const Tensor& t, const std::string& name) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw ConfigError(name + " contains a non-finite value");
  }
}

Linear random_linear(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(in)));
  Linear l{Tensor({out, in}), Tensor({out})};
  for (auto& v : l.weight.data()) v = dist(rng);
  return l;
}

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return random_linear(rows, cols, rng).weight;
}

// 1x1 convolution with per-channel affine followed by ReLU, on [B,C,H,W].
Tensor conv_relu(const Tensor& input, const Tensor& w, const Tensor& b) {
  if (input.rank() != 4) throw DimensionError("expected features [B,C,H,W], got " + shape_string(input.shape()));
  const std::size_t batch = input.dim(0), cin = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (w.rank() != 2 || w.dim(1) != cin || b.size() != w.dim(0)) {
    throw DimensionError("init conv weight " + shape_string(w.shape()) + " does not fit input channels " +
                         std::to_string(cin));
  }
  const std::size_t cout = w.dim(0);
  Tensor out({batch, cout, input.dim(2), input.dim(3)});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t co = 0; co < cout; ++co) {
      float* dst = &out(bi, co, 0, 0);
      for (std::size_t p = 0; p < hw; ++p) dst[p] = b[co];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const float k = w(co, ci);
        const float* src = &input(bi, ci, 0, 0);
        for (std::size_t p = 0; p < hw; ++p) dst[p] += k * src[p];
      }
      for (std::size_t p = 0; p < hw; ++p) dst[p] = std::max(dst[p], 0.0f);
    }
  }
  return out;
}

Tensor replicate_kernels(const Tensor& kernels, std::size_t batch) {
  Shape shape{batch, kernels.dim(0), kernels.dim(1)};
  std::vector<float> data;
  data.reserve(batch * kernels.size());
  for (std::size_t b = 0; b < batch; ++b) data.insert(data.end(), kernels.data().begin(), kernels.data().end());
  return Tensor(std::move(shape), std::move(data));
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

}  // namespace

Tensor Linear::apply(const Tensor& rows) const {
  const std::size_t in = in_features(), out = out_features();
  if (rows.shape().back() != in) {
    throw DimensionError("linear map expects last axis " + std::to_string(in) + ", got " +
                         shape_string(rows.shape()));
  }
  const std::size_t count = rows.size() / in;
  Shape shape = rows.shape();
  shape.back() = out;
  Tensor result(shape);
  auto src = rows.data();
  auto dst = result.data();
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(weight(o, i)) * src[r * in + i];
      dst[r * out + o] = static_cast<float>(acc);
    }
  }
  return result;
}

Linear Linear::identity(std::size_t features) {
  Linear l = zeros(features, features);
  for (std::size_t i = 0; i < features; ++i) l.weight(i, i) = 1.0f;
  return l;
}

Linear Linear::zeros(std::size_t out, std::size_t in) { return Linear{Tensor({out, in}), Tensor({out})}; }

Tensor apply_stack(const std::vector<Linear>& stack, const Tensor& rows) {
  if (stack.empty()) throw ConfigError("linear stack must have at least one layer");
  Tensor x = stack.front().apply(rows);
  for (std::size_t i = 1; i < stack.size(); ++i) x = stack[i].apply(relu(x));
  return x;
}

LayerNormParams LayerNormParams::unit(std::size_t features) {
  return {Tensor::full({features}, 1.0f), Tensor({features})};
}

Tensor layer_norm(const Tensor& rows, const LayerNormParams& params) {
  const std::size_t c = rows.shape().back();
  if (params.scale.size() != c || params.shift.size() != c) {
    throw DimensionError("layer norm parameters do not match " + std::to_string(c) + " features");
  }
  Tensor out(rows.shape());
  const std::size_t count = rows.size() / c;
  for (std::size_t r = 0; r < count; ++r) {
    auto x = rows.data().subspan(r * c, c);
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t i = 0; i < c; ++i) {
      out[r * c + i] = static_cast<float>((x[i] - mean) * inv * params.scale[i] + params.shift[i]);
    }
  }
  return out;
}

void PipelineConfig::validate() const {
  if (num_updates < 1) throw ConfigError("num_updates must be >= 1");
  if (channels < 1 || heads < 1) throw ConfigError("channels and heads must be >= 1");
  if (channels % heads != 0) {
    throw ConfigError("channels (" + std::to_string(channels) + ") not divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (num_classes < 1 || thing_class_count > num_classes) {
    throw ConfigError("thing_class_count must not exceed num_classes");
  }
  if (num_kernels < stuff_class_count() || num_kernels < 1) {
    throw ConfigError("num_kernels (" + std::to_string(num_kernels) + ") must reserve one kernel per stuff class (" +
                      std::to_string(stuff_class_count()) + ")");
  }
}

void validate_weights(const PipelineWeights& weights, const PipelineConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, n = cfg.num_kernels, nc = cfg.num_classes;
  expect_shape(weights.init.conv_w, {c, c}, "init.conv_w");
  expect_shape(weights.init.conv_b, {c}, "init.conv_b");
  expect_shape(weights.init.k0, {n, c}, "init.k0");
  expect_finite(weights.init.conv_w, "init.conv_w");
  expect_finite(weights.init.k0, "init.k0");
  if (weights.init.aux) {
    expect_shape(weights.init.aux->conv_w, {c, c}, "init.aux_conv_w");
    expect_shape(weights.init.aux->conv_b, {c}, "init.aux_conv_b");
    expect_shape(weights.init.aux->kernels, {nc, c}, "init.aux_kernels");
  }
  if (weights.stages.size() != cfg.num_updates) {
    throw ConfigError("weight bundle has " + std::to_string(weights.stages.size()) + " update stages, config wants " +
                      std::to_string(cfg.num_updates));
  }
  for (std::size_t s = 0; s < weights.stages.size(); ++s) {
    const auto& w = weights.stages[s];
    const std::string p = "stage" + std::to_string(s) + ".";
    expect_linear(w.psi1, c, c, p + "psi1");
    expect_linear(w.psi2, c, c, p + "psi2");
    expect_linear(w.gate_f, c, c, p + "gate_f");
    expect_linear(w.gate_k, c, c, p + "gate_k");
    expect_linear(w.attn_q, c, c, p + "attn_q");
    expect_linear(w.attn_k, c, c, p + "attn_k");
    expect_linear(w.attn_v, c, c, p + "attn_v");
    expect_linear(w.attn_out, c, c, p + "attn_out");
    expect_linear(w.ffn_in, cfg.ffn_hidden(), c, p + "ffn_in");
    expect_linear(w.ffn_out, c, cfg.ffn_hidden(), p + "ffn_out");
    expect_shape(w.norm1.scale, {c}, p + "norm1.scale");
    expect_shape(w.norm1.shift, {c}, p + "norm1.shift");
    expect_shape(w.norm2.scale, {c}, p + "norm2.scale");
    expect_shape(w.norm2.shift, {c}, p + "norm2.shift");
    if (w.head_mask_ffn.empty() || w.head_cls_ffn.empty()) throw ConfigError(p + "heads must not be empty");
    for (std::size_t i = 0; i < w.head_mask_ffn.size(); ++i) {
      expect_linear(w.head_mask_ffn[i], c, c, p + "head_mask." + std::to_string(i));
    }
    for (std::size_t i = 0; i + 1 < w.head_cls_ffn.size(); ++i) {
      expect_linear(w.head_cls_ffn[i], c, c, p + "head_cls." + std::to_string(i));
    }
    expect_linear(w.head_cls_ffn.back(), nc, c, p + "head_cls." + std::to_string(w.head_cls_ffn.size() - 1));
    for (const Linear* l : {&w.psi1, &w.psi2, &w.gate_f, &w.gate_k, &w.attn_q, &w.attn_k, &w.attn_v, &w.attn_out,
                            &w.ffn_in, &w.ffn_out}) {
      expect_finite(l->weight, p + "linear weight");
      expect_finite(l->bias, p + "linear bias");
    }
  }
}

PipelineWeights random_pipeline_weights(const PipelineConfig& cfg, std::uint64_t seed, bool with_aux) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t c = cfg.channels;
  PipelineWeights w;
  w.init.conv_w = random_matrix(c, c, rng);
  w.init.conv_b = Tensor({c});
  w.init.k0 = random_matrix(cfg.num_kernels, c, rng);
  if (with_aux) {
    w.init.aux = AuxSemanticHead{random_matrix(c, c, rng), Tensor({c}), random_matrix(cfg.num_classes, c, rng)};
  }
  for (std::size_t s = 0; s < cfg.num_updates; ++s) {
    KernelUpdateWeights st{
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(c, c, rng),
        random_linear(cfg.ffn_hidden(), c, rng),
        random_linear(c, cfg.ffn_hidden(), rng),
        LayerNormParams::unit(c),
        LayerNormParams::unit(c),
        {random_linear(c, c, rng)},
        {random_linear(c, c, rng), random_linear(cfg.num_classes, c, rng)},
    };
    w.stages.push_back(std::move(st));
  }
  return w;
}

InitStageOutput init_stage(const Tensor& features, const InitStageWeights& w, bool with_aux) {
  InitStageOutput out{conv_relu(features, w.conv_w, w.conv_b), Tensor(), std::nullopt};
  const std::size_t batch = features.dim(0);
  out.masks = mask_logits(replicate_kernels(w.k0, batch), out.features);
  if (with_aux) {
    if (!w.aux) throw ConfigError("auxiliary semantic head requested but the weights carry none");
    const Tensor seg_features = conv_relu(features, w.aux->conv_w, w.aux->conv_b);
    out.seg_logits = mask_logits(replicate_kernels(w.aux->kernels, batch), seg_features);
  }
  return out;
}

GroupFeatures assemble_group_features(const Tensor& mask_logits_prev, const Tensor& features, GroupMode mode,
                                      Precision precision) {
  if (mask_logits_prev.rank() != 4 || features.rank() != 4) {
    throw DimensionError("group features expect masks [B,N,H,W] and features [B,C,H,W]");
  }
  const std::size_t batch = features.dim(0), c = features.dim(1);
  const std::size_t n = mask_logits_prev.dim(1);
  if (mask_logits_prev.dim(0) != batch || mask_logits_prev.dim(2) != features.dim(2) ||
      mask_logits_prev.dim(3) != features.dim(3)) {
    throw DimensionError("group features: masks " + shape_string(mask_logits_prev.shape()) +
                         " and features " + shape_string(features.shape()) + " disagree on batch or spatial axes");
  }
  const std::size_t hw = features.dim(2) * features.dim(3);

  GroupFeatures out{Tensor({batch, n, c}), {}};
  std::vector<std::size_t> support;
  support.reserve(hw);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < n; ++k) {
      const float* logits = &mask_logits_prev(b, k, 0, 0);
      support.clear();
      for (std::size_t p = 0; p < hw; ++p) {
        if (logits[p] > 0.0f) support.push_back(p);  // sigmoid(x) > 0.5
      }
      const std::size_t area = support.size();
      if (mode == GroupMode::normalized && area == 0) continue;

      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* f = &features(b, ch, 0, 0);
        float result;
        if (precision == Precision::f32) {
          double acc = 0.0;
          for (auto p : support) acc += f[p];
          if (mode == GroupMode::normalized) acc /= static_cast<double>(area);
          result = static_cast<float>(acc);
        } else {
          const float weight = mode == GroupMode::normalized ? round_to_f16(1.0f / static_cast<float>(area)) : 1.0f;
          float acc = 0.0f;
          bool saturated = false;
          for (auto p : support) {
            acc += weight * round_to_f16(f[p]);
            if (simulate_f16(acc).overflow) {
              saturated = true;
              break;
            }
          }
          if (saturated) {
            result = std::copysign(std::numeric_limits<float>::infinity(), acc);
            out.overflow.push_back({b, k, ch});
          } else {
            result = round_to_f16(acc);
          }
        }
        out.features(b, k, ch) = result;
      }
    }
  }
  return out;
}

Tensor adaptive_update(const Tensor& group_feats, const Tensor& kernels_prev, const KernelUpdateWeights& w) {
  if (group_feats.shape() != kernels_prev.shape()) {
    throw DimensionError("adaptive update: group features " + shape_string(group_feats.shape()) +
                         " vs kernels " + shape_string(kernels_prev.shape()));
  }
  const Tensor a = w.psi1.apply(group_feats);
  const Tensor b = w.psi2.apply(kernels_prev);
  const Tensor joint = hadamard(a, b);
  const Tensor gate_f = stable_sigmoid(w.gate_f.apply(joint));
  const Tensor gate_k = stable_sigmoid(w.gate_k.apply(joint));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gate_f[i] * a[i] + gate_k[i] * b[i];
  return out;
}

Tensor kernel_interaction(const Tensor& kernels, const KernelUpdateWeights& w, std::size_t heads) {
  if (kernels.rank() != 3) throw DimensionError("kernel interaction expects [B,N,C], got " + shape_string(kernels.shape()));
  const std::size_t batch = kernels.dim(0), n = kernels.dim(1), c = kernels.dim(2);
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("channels (" + std::to_string(c) + ") not divisible by heads (" + std::to_string(heads) + ")");
  }
  const std::size_t d = c / heads;
  const Tensor q = w.attn_q.apply(kernels);
  const Tensor k = w.attn_k.apply(kernels);
  const Tensor v = w.attn_v.apply(kernels);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor attended({batch, n, c});
  std::vector<double> weights(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < d; ++e) dot += static_cast<double>(q(b, i, h * d + e)) * k(b, j, h * d + e);
          weights[j] = dot * scale;
          peak = std::max(peak, weights[j]);
        }
        double total = 0.0;
        for (auto& x : weights) total += (x = std::exp(x - peak));
        for (std::size_t e = 0; e < d; ++e) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += weights[j] * v(b, j, h * d + e);
          attended(b, i, h * d + e) = static_cast<float>(acc / total);
        }
      }
    }
  }
  const Tensor mhsa = w.attn_out.apply(attended);
  Tensor residual = kernels;
  for (std::size_t i = 0; i < residual.size(); ++i) residual[i] += mhsa[i];
  const Tensor x1 = layer_norm(residual, w.norm1);

  const Tensor ffn = w.ffn_out.apply(relu(w.ffn_in.apply(x1)));
  Tensor residual2 = x1;
  for (std::size_t i = 0; i < residual2.size(); ++i) residual2[i] += ffn[i];
  return layer_norm(residual2, w.norm2);
}

HeadOutput predict_heads(const Tensor& kernels, const Tensor& features, const KernelUpdateWeights& w) {
  const Tensor mask_kernels = apply_stack(w.head_mask_ffn, kernels);
  Tensor class_logits = apply_stack(w.head_cls_ffn, kernels);
  Tensor probs = stable_softmax(class_logits, 2);
  return {mask_logits(mask_kernels, features), std::move(class_logits), std::move(probs)};
}

PipelineOutput run_pipeline(const Tensor& features, const PipelineWeights& weights, const PipelineConfig& cfg,
                            const RunOptions& options) {
  if (weights.stages.size() != cfg.num_updates) {
    throw ConfigError("expected " + std::to_string(cfg.num_updates) + " update stages, got " +
                      std::to_string(weights.stages.size()));
  }
  InitStageOutput init = init_stage(features, weights.init, options.with_aux);
  PipelineOutput out{std::move(init.features), init.masks, std::move(init.seg_logits), {}, {}};

  Tensor kernels = replicate_kernels(weights.init.k0, features.dim(0));
  out.stages.reserve(weights.stages.size());
  const Tensor* masks = &out.initial_masks;
  for (const auto& stage : weights.stages) {
    GroupFeatures group = assemble_group_features(*masks, out.features, options.mode, options.precision);
    out.overflow.insert(out.overflow.end(), group.overflow.begin(), group.overflow.end());
    const Tensor updated = adaptive_update(group.features, kernels, stage);
    kernels = kernel_interaction(updated, stage, cfg.heads);
    out.stages.push_back(predict_heads(kernels, out.features, stage));
    masks = &out.stages.back().masks;
  }
  return out;
}

}  // namespace rtknet
