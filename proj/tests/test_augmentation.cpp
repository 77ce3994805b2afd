#include <gtest/gtest.h>

#include <random>

#include "rtknet/augmentation.hpp"

using namespace rtknet;

namespace {

BinaryMask rect(std::size_t h, std::size_t w, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  BinaryMask m(h, w);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) m.at(r, c) = 1;
  return m;
}

AugSample sample_of(const GroundTruthScene& scene, std::size_t channels = 2) {
  Tensor img({channels, scene.height, scene.width});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i % 17) * 0.25f;
  return {scene, img};
}

// Stuff floor plus one small thing.
GroundTruthScene floor_scene(std::size_t h, std::size_t w, std::size_t t0, std::size_t t1) {
  return make_scene(h, w, {{2, false, rect(h, w, h / 2, h, 0, w)}, {0, true, rect(h, w, t0, t1, t0, t1)}});
}

std::size_t total_area(const GroundTruthScene& s) {
  std::size_t a = 0;
  for (const auto& seg : s.segments) a += seg.mask.area();
  return a;
}

}  // namespace

TEST(Centroids, Examples) {
  EXPECT_EQ(mask_centroid(rect(8, 8, 2, 4, 2, 4)), (Pixel{3, 3}));  // mean 2.5 rounds up
  EXPECT_EQ(mask_centroid(rect(8, 8, 1, 4, 0, 5)), (Pixel{2, 2}));
  EXPECT_FALSE(mask_centroid(BinaryMask(4, 4)).has_value());
  const auto c = thing_centroids(floor_scene(8, 8, 0, 3));
  ASSERT_EQ(c.size(), 1u);  // stuff has no centroid
  EXPECT_EQ(c[0], (Pixel{1, 1}));
}

TEST(InstanceAwareCrop, AcceptanceMatchesExhaustiveContainment) {
  const GroundTruthScene scene = make_scene(8, 8, {{0, true, rect(8, 8, 0, 2, 0, 2)}, {1, true, rect(8, 8, 6, 8, 5, 8)}});
  const auto centroids = thing_centroids(scene);
  AugConfig cfg;
  cfg.crop_h = 3;
  cfg.crop_w = 3;
  const AugSample s = sample_of(scene);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const CropResult r = instance_aware_crop(s, cfg, rng);
    bool holds = false;
    for (std::size_t row = r.window.top; row < r.window.top + 3; ++row)
      for (std::size_t col = r.window.left; col < r.window.left + 3; ++col)
        for (const auto& p : centroids) holds |= p.row == row && p.col == col;
    EXPECT_EQ(r.accepted, holds);
    EXPECT_LE(r.window.top + 3, 8u);
    EXPECT_LE(r.window.left + 3, 8u);
    EXPECT_LE(r.attempts, cfg.max_attempts);
    if (!r.accepted) {
      EXPECT_EQ(r.attempts, cfg.max_attempts);
    }
  }
}

TEST(InstanceAwareCrop, AllStuffUsesEveryAttempt) {
  const GroundTruthScene scene = make_scene(16, 16, {{2, false, rect(16, 16, 0, 16, 0, 16)}});
  AugConfig cfg;
  cfg.crop_h = 4;
  cfg.crop_w = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const CropResult r = instance_aware_crop(sample_of(scene), cfg, rng);
    EXPECT_EQ(r.attempts, 10u);
    EXPECT_FALSE(r.accepted);
  }
}

TEST(InstanceAwareCrop, Deterministic) {
  const AugSample s = sample_of(floor_scene(32, 32, 3, 7));
  AugConfig cfg;
  cfg.crop_h = 8;
  cfg.crop_w = 8;
  Rng a(5), b(5);
  const CropResult x = augment(s, cfg, a), y = augment(s, cfg, b);
  EXPECT_EQ(x.window, y.window);
  EXPECT_EQ(x.sample.scene, y.sample.scene);
  EXPECT_EQ(x.sample.image, y.sample.image);
}

TEST(Crop, SubGridEquality) {
  const AugSample s = sample_of(floor_scene(10, 12, 1, 5));
  const CropWindow win{3, 4, 5, 6};
  const AugSample c = crop(s, win);
  ASSERT_EQ(c.scene.height, 5u);
  ASSERT_EQ(c.scene.width, 6u);
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t col = 0; col < 6; ++col) {
        EXPECT_EQ(c.image(ch, r, col), s.image(ch, r + 3, col + 4));
        EXPECT_EQ(c.scene.semantic_map[r * 6 + col], s.scene.semantic_map[(r + 3) * 12 + col + 4]);
      }
  // Window fully off the thing drops it.
  const AugSample d = crop(s, CropWindow{6, 6, 4, 6});
  ASSERT_EQ(d.scene.segments.size(), 1u);
  EXPECT_FALSE(d.scene.segments[0].is_thing);
  EXPECT_THROW(crop(s, CropWindow{8, 0, 4, 4}), InputError);
}

TEST(Crop, PadsSmallInputs) {
  const AugSample s = sample_of(floor_scene(4, 4, 0, 1));
  const AugSample p = pad_to(s, 6, 7);
  ASSERT_EQ(p.scene.height, 6u);
  ASSERT_EQ(p.scene.width, 7u);
  EXPECT_EQ(p.image(0, 5, 6), 0.0f);
  EXPECT_EQ(p.image(1, 3, 3), s.image(1, 3, 3));
  EXPECT_EQ(p.scene.semantic_map[5 * 7 + 6], kIgnoreLabel);
  EXPECT_EQ(total_area(p.scene), total_area(s.scene));
  AugConfig cfg;
  cfg.crop_h = 6;
  cfg.crop_w = 7;
  Rng rng(1);
  const CropResult r = instance_aware_crop(s, cfg, rng);
  EXPECT_EQ(r.window, (CropWindow{0, 0, 6, 7}));
  EXPECT_TRUE(r.accepted);
}

TEST(Rescale, IdentityDoublingAndRounding) {
  const AugSample s = sample_of(floor_scene(8, 10, 1, 4));
  const AugSample same = rescale(s, 1.0);
  EXPECT_EQ(same.scene, s.scene);
  EXPECT_EQ(same.image, s.image);
  const AugSample big = rescale(s, 2.0);
  EXPECT_EQ(big.scene.height, 16u);
  EXPECT_EQ(big.scene.width, 20u);
  for (std::size_t i = 0; i < s.scene.segments.size(); ++i)
    EXPECT_EQ(big.scene.segments[i].mask.area(), 4 * s.scene.segments[i].mask.area());
  const AugSample small = rescale(s, 0.55);  // 4.4 -> 4, 5.5 -> 6
  EXPECT_EQ(small.scene.height, 4u);
  EXPECT_EQ(small.scene.width, 6u);
  // A constant image stays constant under bilinear resampling.
  AugSample flat = s;
  for (auto& v : flat.image.data()) v = 2.5f;
  const AugSample stretched = rescale(flat, 1.7);
  for (auto v : stretched.image.data()) EXPECT_FLOAT_EQ(v, 2.5f);
  EXPECT_THROW(rescale(s, 0.0), InputError);
}

TEST(Flip, InvolutionAndArea) {
  const AugSample s = sample_of(floor_scene(6, 9, 0, 3));
  const AugSample f = flip_horizontal(s);
  EXPECT_EQ(f.image(1, 2, 0), s.image(1, 2, 8));
  EXPECT_EQ(f.scene.segments[1].mask.at(0, 8), 1);
  EXPECT_EQ(total_area(f.scene), total_area(s.scene));
  const AugSample back = flip_horizontal(f);
  EXPECT_EQ(back.scene, s.scene);
  EXPECT_EQ(back.image, s.image);
}

TEST(ScaleAndFlip, ScaleInRangeAndDeterministic) {
  const AugSample s = sample_of(floor_scene(16, 16, 2, 6));
  AugConfig cfg;
  cfg.crop_h = 8;
  cfg.crop_w = 8;
  Rng rng(3);
  bool flipped = false, unflipped = false;
  for (int i = 0; i < 40; ++i) {
    const ScaleFlipResult r = scale_and_flip(s, cfg, rng);
    EXPECT_GE(r.scale, 0.5);
    EXPECT_LE(r.scale, 2.1);
    (r.flipped ? flipped : unflipped) = true;
  }
  EXPECT_TRUE(flipped && unflipped);
}

TEST(AugConfig, ValidationAndJson) {
  AugConfig cfg;
  cfg.scale_min = 3.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = AugConfig{};
  cfg.max_attempts = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = AugConfig{};
  cfg.crop_w = 64;
  const AugConfig back = aug_config_from_json(aug_config_to_json(cfg));
  EXPECT_EQ(back.crop_w, 64u);
  EXPECT_THROW(aug_config_from_json({{"bogus", 1}}), ConfigError);
}

TEST(CropStats, InstanceAwareBeatsRandom) {
  const GroundTruthScene scene = floor_scene(64, 128, 8, 16);
  AugConfig cfg;
  cfg.crop_h = 32;
  cfg.crop_w = 32;
  const CropStats st = crop_acceptance_stats(scene, cfg, 2000, 4);
  EXPECT_GT(st.instance_aware_rate, st.random_rate);
  EXPECT_LE(st.max_attempts_seen, 10u);
  EXPECT_GE(st.mean_attempts, 1.0);
}
