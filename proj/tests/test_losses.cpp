#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rtknet/gradcheck.hpp"
#include "rtknet/losses.hpp"

using namespace rtknet;

namespace {

TensorD random_d(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  TensorD t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

BinaryMask rect(std::size_t h, std::size_t w, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  BinaryMask m(h, w);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) m.at(r, c) = 1;
  return m;
}

// 8x8: thing class 0 top-left, thing class 1 top-right, stuff class 2 on
// the bottom half.
GroundTruthScene small_scene() {
  return make_scene(8, 8, {{0, true, rect(8, 8, 0, 3, 0, 3)},
                           {1, true, rect(8, 8, 0, 3, 5, 8)},
                           {2, false, rect(8, 8, 4, 8, 0, 8)}});
}

PipelineConfig small_cfg() {
  PipelineConfig cfg;
  cfg.num_kernels = 5;
  cfg.channels = 4;
  cfg.heads = 1;
  cfg.num_classes = 3;
  cfg.thing_class_count = 2;
  return cfg;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(GradCheck, ExactOnPolynomials) {
  const LossFn square = [](const TensorD& x) {
    LossGrad g{0.0, TensorD(x.shape())};
    for (std::size_t i = 0; i < x.size(); ++i) {
      g.value += x[i] * x[i];
      g.grad[i] = 2 * x[i];
    }
    return g;
  };
  EXPECT_LE(finite_diff_check(square, TensorD({2}, std::vector<double>{1, 2})).max_rel_error, 1e-8);
  const LossFn sum = [](const TensorD& x) {
    LossGrad g{0.0, TensorD(x.shape(), 1.0)};
    for (double v : x.data()) g.value += v;
    return g;
  };
  EXPECT_LE(finite_diff_check(sum, TensorD({3}, std::vector<double>{1, -2, 5})).max_rel_error, 1e-10);
  // A wrong gradient is caught.
  const LossFn wrong = [&](const TensorD& x) {
    LossGrad g = square(x);
    g.grad[0] += 0.1;
    return g;
  };
  EXPECT_GT(finite_diff_check(wrong, TensorD({2}, std::vector<double>{1, 2})).max_rel_error, 1e-3);
}

TEST(Dice, Examples) {
  const TensorD target({4, 4}, std::vector<double>{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1});
  TensorD logits(target.shape());
  for (std::size_t i = 0; i < 16; ++i) logits[i] = target[i] > 0 ? 20.0 : -20.0;
  EXPECT_LE(dice_loss(logits, target).value, 1e-3);
  const TensorD low(target.shape(), -20.0);
  EXPECT_GE(dice_loss(low, target).value, 1.0 - 2 * kDiceEps);
  EXPECT_THROW(dice_loss(TensorD({2, 2}), target), DimensionError);
}

TEST(Dice, MatchesFormulaAndGradient) {
  std::mt19937_64 rng(1);
  const TensorD x = random_d({4, 4}, rng, 2.0);
  TensorD g({4, 4});
  for (std::size_t i = 0; i < 16; ++i) g[i] = (i * 7) % 3 == 0;
  double inter = 0, sm = 0, sg = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    inter += sig(x[i]) * g[i];
    sm += sig(x[i]);
    sg += g[i];
  }
  EXPECT_NEAR(dice_loss(x, g).value, 1 - (2 * inter + 1e-3) / (sm + sg + 1e-3), 1e-12);
  const LossFn fn = [&](const TensorD& t) { return dice_loss(t, g); };
  EXPECT_LE(finite_diff_check(fn, x).max_rel_error, 1e-4);
}

TEST(Bce, Examples) {
  EXPECT_NEAR(mask_bce_loss(TensorD({3, 3}), TensorD({3, 3}, 1.0)).value, std::log(2.0), 1e-12);
  EXPECT_LE(mask_bce_loss(TensorD({2, 2}, 20.0), TensorD({2, 2}, 1.0)).value, 1e-8);
  // Large logits stay finite.
  EXPECT_NEAR(mask_bce_loss(TensorD({1}, -800.0), TensorD({1}, 1.0)).value, 800.0, 1e-9);
  std::mt19937_64 rng(2);
  const TensorD x = random_d({4, 4}, rng, 2.0);
  TensorD g({4, 4});
  for (std::size_t i = 0; i < 16; ++i) g[i] = i % 2;
  const LossFn fn = [&](const TensorD& t) { return mask_bce_loss(t, g); };
  EXPECT_LE(finite_diff_check(fn, x).max_rel_error, 1e-4);
}

TEST(Focal, Examples) {
  // Uniform over 4 classes with gamma 0, alpha 1 is plain cross-entropy.
  const std::vector<std::size_t> t{2};
  EXPECT_NEAR(focal_loss(TensorD({1, 4}), t, 0.0, 1.0).value, std::log(4.0), 1e-12);
  // Confident correct prediction: the modulating factor drives the term to 0.
  EXPECT_LE(focal_loss(TensorD({1, 4}, std::vector<double>{0, 0, 30, 0}), t, 2.0, 0.25).value, 1e-20);
  // Scalar evaluation of -alpha (1-p)^gamma log p.
  const TensorD z({1, 3}, std::vector<double>{0.3, -1.2, 0.8});
  const double p = std::exp(0.3) / (std::exp(0.3) + std::exp(-1.2) + std::exp(0.8));
  EXPECT_NEAR(focal_loss(z, std::vector<std::size_t>{0}, 2.0, 0.25).value, -0.25 * std::pow(1 - p, 2) * std::log(p), 1e-12);
  EXPECT_THROW(focal_loss(z, std::vector<std::size_t>{3}, 2.0, 0.25), InputError);
}

TEST(Focal, GradientForEveryGamma) {
  std::mt19937_64 rng(3);
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 3.0}) {
    const TensorD x = random_d({3, 4}, rng, 1.5);
    const std::vector<std::size_t> t{0, 3, 1};
    const LossFn fn = [&](const TensorD& v) { return focal_loss(v, t, gamma, 0.25); };
    EXPECT_LE(finite_diff_check(fn, x).max_rel_error, 1e-4) << gamma;
  }
}

TEST(FocalCls, UnmatchedTargetNoObject) {
  const GroundTruthScene gt = small_scene();
  Assignment a;
  a.pairs = {{0, 0}};
  a.unmatched = {1};
  const TensorD logits({2, 3}, std::vector<double>{0.5, -0.2, 0.1, 0.3, 0.0, -0.4});
  const LossWeights w;
  const LossGrad got = focal_cls_loss(logits, a, gt, w);
  // Row 0 targets class 0, row 1 the appended no-object logit 0.
  const TensorD ext({2, 4}, std::vector<double>{0.5, -0.2, 0.1, 0.0, 0.3, 0.0, -0.4, 0.0});
  const LossGrad ref = focal_loss(ext, std::vector<std::size_t>{0, 3}, w.focal_gamma, w.focal_alpha);
  EXPECT_NEAR(got.value, ref.value, 1e-15);
  const LossFn fn = [&](const TensorD& v) { return focal_cls_loss(v, a, gt, w); };
  EXPECT_LE(finite_diff_check(fn, logits).max_rel_error, 1e-4);
}

TEST(Rank, Examples) {
  const GroundTruthScene gt = small_scene();
  Assignment a;
  a.pairs = {{2, 0}, {0, 1}, {1, 2}};
  TensorD m({3, 8, 8}, -20.0);
  for (const auto& [pred, seg] : a.pairs)
    for (std::size_t p = 0; p < 64; ++p)
      if (gt.segments[seg].mask.bits[p]) m[pred * 64 + p] = 20.0;
  EXPECT_LE(rank_loss(m, a, gt).value, 1e-8);
  EXPECT_NEAR(rank_loss(TensorD({3, 8, 8}, 0.7), a, gt).value, std::log(3.0), 1e-12);
  std::mt19937_64 rng(4);
  const TensorD x = random_d({3, 8, 8}, rng, 1.5);
  const LossFn fn = [&](const TensorD& v) { return rank_loss(v, a, gt); };
  EXPECT_LE(finite_diff_check(fn, x).max_rel_error, 1e-4);
}

TEST(BootstrappedSeg, Examples) {
  // Stuff only, so no small-instance weighting.
  const GroundTruthScene gt = make_scene(8, 8, {{2, false, rect(8, 8, 0, 8, 0, 8)}});
  LossWeights w;
  for (double f : {0.05, 0.15, 1.0}) {
    w.bootstrap_fraction = f;
    EXPECT_NEAR(bootstrapped_seg_loss(TensorD({4, 8, 8}, 0.3), gt, w).value, std::log(4.0), 1e-12);
  }
  TensorD perfect({4, 8, 8}, -10.0);
  for (std::size_t p = 0; p < 64; ++p) perfect[2 * 64 + p] = 10.0;
  EXPECT_LE(bootstrapped_seg_loss(perfect, gt, w).value, 1e-8);
  const GroundTruthScene empty = make_scene(8, 8, {});
  const SegLoss none = bootstrapped_seg_loss(TensorD({4, 8, 8}), empty, w);
  EXPECT_TRUE(none.all_ignored);
  EXPECT_EQ(none.value, 0.0);
}

TEST(BootstrappedSeg, MatchesSortAndAverageOracle) {
  const GroundTruthScene gt = small_scene();  // 50 labeled pixels, two small things
  std::mt19937_64 rng(5);
  const TensorD x = random_d({3, 8, 8}, rng, 2.0);
  LossWeights w;
  std::vector<double> losses;
  for (std::size_t p = 0; p < 64; ++p) {
    const int label = gt.semantic_map[p];
    if (label < 0) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(x[c * 64 + p]);
    const bool small_thing = label < 2;  // both things are 9 px
    losses.push_back((small_thing ? 3.0 : 1.0) * (std::log(z) - x[std::size_t(label) * 64 + p]));
  }
  std::sort(losses.rbegin(), losses.rend());
  const std::size_t k = std::size_t(std::ceil(0.15 * double(losses.size())));
  EXPECT_EQ(k, 8u);
  double mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean += losses[i] / double(k);
  EXPECT_NEAR(bootstrapped_seg_loss(x, gt, w).value, mean, 1e-6);
}

TEST(Contrastive, IdenticalFeatures) {
  const GroundTruthScene gt = small_scene();
  InstanceLoss inst = instance_discrimination_loss(TensorD({4, 8, 8}, 1.0), gt, 0.3, 7);
  const double a = double(inst.pixels.size());
  EXPECT_EQ(inst.pixels.size(), 24u);  // 8 per segment
  EXPECT_NEAR(inst.value, a * std::log(a - 1), 1e-9);
}

TEST(Contrastive, OrthogonalSegmentsScalarFormula) {
  const GroundTruthScene gt = make_scene(2, 2, {{0, true, rect(2, 2, 0, 1, 0, 2)}, {1, true, rect(2, 2, 1, 2, 0, 2)}});
  TensorD f({2, 2, 2});
  f(0, 0, 0) = f(0, 0, 1) = 3.0;  // segment 0 along e0
  f(1, 1, 0) = f(1, 1, 1) = 0.5;  // segment 1 along e1
  const InstanceLoss inst = instance_discrimination_loss(f, gt, 0.3, 1, 2);
  ASSERT_EQ(inst.pixels.size(), 4u);
  // each anchor: one positive at similarity 1, two negatives at 0
  const double term = std::log(std::exp(1 / 0.3) + 2.0) - 1 / 0.3;
  EXPECT_NEAR(inst.value, 4 * term, 1e-12);
}

TEST(Contrastive, ScaleInvarianceDegenerateAndGradient) {
  const GroundTruthScene gt = small_scene();
  std::mt19937_64 rng(6);
  const TensorD f = random_d({8, 8, 8}, rng);
  TensorD f5 = f;
  for (auto& v : f5.data()) v *= 5.0;
  EXPECT_NEAR(instance_discrimination_loss(f, gt, 0.3, 3).value, instance_discrimination_loss(f5, gt, 0.3, 3).value,
              1e-6);
  const GroundTruthScene one = make_scene(2, 2, {{0, true, rect(2, 2, 0, 1, 0, 1)}});
  EXPECT_TRUE(instance_discrimination_loss(TensorD({3, 2, 2}, 1.0), one, 0.3, 1).degenerate);

  const InstanceLoss inst = instance_discrimination_loss(f, gt, 0.3, 3);
  std::vector<std::size_t> groups = inst.groups;
  const LossFn fn = [&](const TensorD& s) { return contrastive_loss(s, groups, 0.3); };
  EXPECT_LE(finite_diff_check(fn, inst.sampled_features).max_rel_error, 1e-3);
  // Seeded sampling is reproducible and depends on the seed.
  EXPECT_EQ(instance_discrimination_loss(f, gt, 0.3, 3).pixels, inst.pixels);
  EXPECT_NE(instance_discrimination_loss(f, gt, 0.3, 4).pixels, inst.pixels);
}

TEST(Matching, FixedStuffReservation) {
  PipelineConfig cfg;
  cfg.num_kernels = 10;
  cfg.num_classes = 5;
  cfg.thing_class_count = 2;  // stuff classes 2, 3, 4 -> kernels 7, 8, 9
  std::vector<Segment> segs{{4, false, rect(4, 4, 0, 1, 0, 4)}, {2, false, rect(4, 4, 1, 2, 0, 4)},
                            {3, false, rect(4, 4, 2, 3, 0, 4)}, {0, true, rect(4, 4, 3, 4, 0, 4)}};
  const auto pairs = fixed_stuff_assign(make_scene(4, 4, segs), cfg);
  const std::vector<std::pair<std::size_t, std::size_t>> expect{{7, 1}, {8, 2}, {9, 0}};
  EXPECT_EQ(pairs, expect);
  EXPECT_TRUE(fixed_stuff_assign(make_scene(4, 4, {segs[3]}), cfg).empty());
}

TEST(Matching, CostMatrixProperties) {
  const GroundTruthScene gt = small_scene();
  const PipelineConfig cfg = small_cfg();  // kernels 0..3 thing-eligible, 4 stuff
  const LossWeights w;
  std::mt19937_64 rng(7);
  TensorD masks = random_d({5, 8, 8}, rng, 2.0);
  TensorD probs({5, 3}, 1.0 / 3.0);
  // Kernel 2 reproduces segment 1 exactly and is certain of its class.
  for (std::size_t p = 0; p < 64; ++p) masks[2 * 64 + p] = gt.segments[1].mask.bits[p] ? 30.0 : -30.0;
  probs(2, 0) = 0.0;
  probs(2, 1) = 1.0;
  probs(2, 2) = 0.0;
  const MatchingCost mc = matching_cost(masks, probs, gt, w, cfg);
  ASSERT_EQ(mc.cost.rows, 4u);
  ASSERT_EQ(mc.cost.cols, 2u);
  for (std::size_t i = 0; i < 4; ++i) {
    if (i != 2) {
      EXPECT_LT(mc.cost(2, 1), mc.cost(i, 1));
    }
    for (std::size_t j = 0; j < 2; ++j) {
      TensorD m({8, 8}), g = gt.segments[mc.segments[j]].mask.to_tensor();
      for (std::size_t p = 0; p < 64; ++p) m[p] = masks[i * 64 + p];
      const double expect = -w.cls * probs(i, gt.segments[mc.segments[j]].class_id) + w.mask * mask_bce_loss(m, g).value +
                            w.dice * dice_loss(m, g).value;
      EXPECT_NEAR(mc.cost(i, j), expect, 1e-6);
    }
  }
  // identical predictions give identical rows
  TensorD same({5, 8, 8}, 0.4);
  const MatchingCost flat = matching_cost(same, TensorD({5, 3}, 1.0 / 3.0), gt, w, cfg);
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(flat.cost(i, j), flat.cost(0, j));
  PipelineConfig tight = cfg;
  tight.num_kernels = 2;  // one thing-eligible kernel for two things
  EXPECT_THROW(matching_cost(TensorD({2, 8, 8}), TensorD({2, 3}), gt, w, tight), AssignmentError);
}

TEST(Matching, AssignTargetsIsInjectiveOnRandomScenes) {
  std::mt19937_64 rng(8);
  PipelineConfig cfg = small_cfg();
  cfg.num_kernels = 8;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Segment> segs;
    const std::size_t things = std::uniform_int_distribution<std::size_t>(0, 4)(rng);
    for (std::size_t t = 0; t < things; ++t) segs.push_back({t % 2, true, rect(8, 8, t, t + 1, 0, 8)});
    if (trial % 2) segs.push_back({2, false, rect(8, 8, 6, 8, 0, 8)});
    if (segs.empty()) continue;
    const GroundTruthScene gt = make_scene(8, 8, segs);
    const TensorD masks = random_d({8, 8, 8}, rng, 2.0);
    TensorD probs({8, 3}, 1.0 / 3.0);
    const Assignment a = assign_targets(masks, probs, gt, LossWeights{}, cfg);
    EXPECT_EQ(a.pairs.size(), segs.size());
    std::vector<bool> kernel(8), seg(segs.size());
    for (const auto& [k, s] : a.pairs) {
      EXPECT_FALSE(kernel[k]);
      EXPECT_FALSE(seg[s]);
      kernel[k] = seg[s] = true;
      if (gt.segments[s].is_thing) {
        EXPECT_LT(k, 7u);
      } else {
        EXPECT_EQ(k, 7u);
      }
    }
    EXPECT_EQ(a.pairs.size() + a.unmatched.size(), 8u);
  }
}

TEST(TotalLoss, LinearityZeroAndPermutationInvariance) {
  const GroundTruthScene gt = small_scene();
  const PipelineConfig cfg = small_cfg();
  std::mt19937_64 rng(9);
  std::vector<StagePrediction> stages;
  for (int s = 0; s < 2; ++s) stages.push_back({random_d({5, 8, 8}, rng, 2.0), random_d({5, 3}, rng)});
  const TensorD seg = random_d({3, 8, 8}, rng), emb = random_d({4, 8, 8}, rng);
  LossWeights w;
  const LossBreakdown base = total_loss(stages, seg, emb, gt, w, cfg, 11);
  EXPECT_GT(base.total, 0.0);
  const double sum = w.mask * base.mask + w.dice * base.dice + w.cls * base.cls + w.rank * base.rank +
                     w.seg * base.seg + w.inst * base.inst;
  EXPECT_NEAR(base.total, sum, 1e-12);
  LossWeights doubled = w;
  doubled.dice *= 2;
  EXPECT_NEAR(total_loss(stages, seg, emb, gt, doubled, cfg, 11).total - base.total, w.dice * base.dice, 1e-9);

  LossWeights zero{0, 0, 0, 0, 0, 0};
  EXPECT_EQ(total_loss(stages, seg, emb, gt, zero, cfg, 11).total, 0.0);

  // Reordering ground-truth segments changes no assignment-based term.
  GroundTruthScene swapped = make_scene(8, 8, {gt.segments[2], gt.segments[1], gt.segments[0]});
  const LossBreakdown perm = total_loss(stages, seg, std::nullopt, swapped, w, cfg, 11);
  const LossBreakdown orig = total_loss(stages, seg, std::nullopt, gt, w, cfg, 11);
  EXPECT_NEAR(perm.mask, orig.mask, 1e-12);
  EXPECT_NEAR(perm.dice, orig.dice, 1e-12);
  EXPECT_NEAR(perm.cls, orig.cls, 1e-12);
  EXPECT_NEAR(perm.rank, orig.rank, 1e-12);
  EXPECT_NEAR(perm.seg, orig.seg, 1e-12);
  EXPECT_EQ(orig.inst, 0.0);
  EXPECT_TRUE(orig.to_json().contains("total"));
}

TEST(LossWeights, DefaultsAndJson) {
  const LossWeights w;
  EXPECT_EQ(w.mask, 1.0);
  EXPECT_EQ(w.dice, 4.0);
  EXPECT_EQ(w.cls, 2.0);
  EXPECT_EQ(w.rank, 0.1);
  EXPECT_EQ(w.seg, 1.0);
  EXPECT_EQ(w.inst, 1.0);
  const LossWeights back = loss_weights_from_json(loss_weights_to_json(w));
  EXPECT_EQ(back.temperature, w.temperature);
  EXPECT_THROW(loss_weights_from_json({{"dice", -1.0}}), ConfigError);
  EXPECT_THROW(loss_weights_from_json({{"nope", 1.0}}), ConfigError);
}

TEST(GradientSuites, AllPass) {
  for (const auto& r : run_gradient_suites(20, 99)) EXPECT_TRUE(r.passed()) << r.loss << " " << r.worst_rel_error;
}
