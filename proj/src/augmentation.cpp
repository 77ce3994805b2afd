#include "rtknet/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "rtknet/errors.hpp"

namespace rtknet {

using nlohmann::json;

namespace {

void expect_image(const AugSample& in) {
  if (in.image.rank() != 3 || in.image.dim(1) != in.scene.height || in.image.dim(2) != in.scene.width) {
    throw DimensionError("image " + shape_string(in.image.shape()) + " does not match the " +
                         std::to_string(in.scene.height) + "x" + std::to_string(in.scene.width) + " scene");
  }
}

CropWindow draw_window(std::size_t h, std::size_t w, const AugConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<std::size_t> top(0, h - cfg.crop_h);
  std::uniform_int_distribution<std::size_t> left(0, w - cfg.crop_w);
  CropWindow win;
  win.top = top(rng);
  win.left = left(rng);
  win.height = cfg.crop_h;
  win.width = cfg.crop_w;
  return win;
}

bool holds_any(const CropWindow& win, const std::vector<Pixel>& centroids) {
  return std::any_of(centroids.begin(), centroids.end(), [&](const Pixel& p) { return win.contains(p); });
}

std::size_t scaled_size(std::size_t size, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(size) * scale)));
}

// Source index for destination d when resampling `in` samples to `out`.
std::size_t nearest_source(std::size_t d, std::size_t in, std::size_t out) {
  const auto src = static_cast<std::size_t>(std::floor((static_cast<double>(d) + 0.5) * static_cast<double>(in) /
                                                       static_cast<double>(out)));
  return std::min(src, in - 1);
}

struct LerpTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

LerpTap bilinear_tap(std::size_t d, std::size_t in, std::size_t out) {
  double src = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

void AugConfig::validate() const {
  if (!(scale_min > 0.0) || !(scale_min <= scale_max)) throw ConfigError("need 0 < scale_min <= scale_max");
  if (crop_h < 1 || crop_w < 1) throw ConfigError("crop size must be at least 1x1");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must lie in [0, 1]");
}

json aug_config_to_json(const AugConfig& cfg) {
  return {{"scale_min", cfg.scale_min}, {"scale_max", cfg.scale_max},       {"crop_h", cfg.crop_h},
          {"crop_w", cfg.crop_w},       {"max_attempts", cfg.max_attempts}, {"flip_prob", cfg.flip_prob},
          {"seed", cfg.seed}};
}

AugConfig aug_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("augmentation config must be a JSON object");
  AugConfig cfg;
  const std::map<std::string, double*> reals{
      {"scale_min", &cfg.scale_min}, {"scale_max", &cfg.scale_max}, {"flip_prob", &cfg.flip_prob}};
  const std::map<std::string, std::size_t*> counts{
      {"crop_h", &cfg.crop_h}, {"crop_w", &cfg.crop_w}, {"max_attempts", &cfg.max_attempts}};
  for (const auto& [key, value] : doc.items()) {
    if (auto it = reals.find(key); it != reals.end()) {
      if (!value.is_number()) throw ConfigError("augmentation key '" + key + "' must be a number");
      *it->second = value.get<double>();
    } else if (auto jt = counts.find(key); jt != counts.end()) {
      if (!value.is_number_unsigned()) throw ConfigError("augmentation key '" + key + "' must be a count");
      *jt->second = value.get<std::size_t>();
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) throw ConfigError("augmentation seed must be a nonnegative integer");
      cfg.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("unknown augmentation key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<Pixel> thing_centroids(const GroundTruthScene& scene) {
  std::vector<Pixel> out;
  for (const auto& seg : scene.segments) {
    if (!seg.is_thing) continue;
    if (auto c = mask_centroid(seg.mask)) out.push_back(*c);
  }
  return out;
}

AugSample pad_to(const AugSample& in, std::size_t h, std::size_t w) {
  expect_image(in);
  const std::size_t src_h = in.scene.height, src_w = in.scene.width;
  if (h <= src_h && w <= src_w) return in;
  const std::size_t out_h = std::max(h, src_h), out_w = std::max(w, src_w), ch = in.image.dim(0);

  AugSample out;
  out.image = Tensor({ch, out_h, out_w});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < src_h; ++r) {
      for (std::size_t col = 0; col < src_w; ++col) out.image(c, r, col) = in.image(c, r, col);
    }
  }
  std::vector<Segment> segments;
  for (const auto& seg : in.scene.segments) {
    Segment s{seg.class_id, seg.is_thing, BinaryMask(out_h, out_w)};
    for (std::size_t r = 0; r < src_h; ++r) {
      for (std::size_t col = 0; col < src_w; ++col) s.mask.at(r, col) = seg.mask.at(r, col);
    }
    segments.push_back(std::move(s));
  }
  out.scene = make_scene(out_h, out_w, std::move(segments));
  return out;
}

AugSample crop(const AugSample& in, const CropWindow& win) {
  expect_image(in);
  if (win.height < 1 || win.width < 1 || win.top + win.height > in.scene.height ||
      win.left + win.width > in.scene.width) {
    throw InputError("crop window leaves the image");
  }
  const std::size_t ch = in.image.dim(0);
  AugSample out;
  out.image = Tensor({ch, win.height, win.width});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t r = 0; r < win.height; ++r) {
      for (std::size_t col = 0; col < win.width; ++col) out.image(c, r, col) = in.image(c, win.top + r, win.left + col);
    }
  }
  std::vector<Segment> segments;
  for (const auto& seg : in.scene.segments) {
    Segment s{seg.class_id, seg.is_thing, BinaryMask(win.height, win.width)};
    for (std::size_t r = 0; r < win.height; ++r) {
      for (std::size_t col = 0; col < win.width; ++col) s.mask.at(r, col) = seg.mask.at(win.top + r, win.left + col);
    }
    if (s.mask.area() > 0) segments.push_back(std::move(s));
  }
  out.scene = make_scene(win.height, win.width, std::move(segments));
  return out;
}

CropResult instance_aware_crop(const AugSample& in, const AugConfig& cfg, Rng& rng) {
  cfg.validate();
  const AugSample padded = pad_to(in, cfg.crop_h, cfg.crop_w);
  const std::vector<Pixel> centroids = thing_centroids(padded.scene);
  CropResult out;
  for (out.attempts = 1;; ++out.attempts) {
    out.window = draw_window(padded.scene.height, padded.scene.width, cfg, rng);
    out.accepted = holds_any(out.window, centroids);
    if (out.accepted || out.attempts == cfg.max_attempts) break;
  }
  out.sample = crop(padded, out.window);
  return out;
}

CropResult random_crop(const AugSample& in, const AugConfig& cfg, Rng& rng) {
  cfg.validate();
  const AugSample padded = pad_to(in, cfg.crop_h, cfg.crop_w);
  CropResult out;
  out.attempts = 1;
  out.window = draw_window(padded.scene.height, padded.scene.width, cfg, rng);
  out.accepted = holds_any(out.window, thing_centroids(padded.scene));
  out.sample = crop(padded, out.window);
  return out;
}

AugSample rescale(const AugSample& in, double scale) {
  expect_image(in);
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InputError("scale must be positive and finite");
  const std::size_t src_h = in.scene.height, src_w = in.scene.width, ch = in.image.dim(0);
  const std::size_t h = scaled_size(src_h, scale), w = scaled_size(src_w, scale);

  std::vector<std::size_t> rows(h), cols(w);
  for (std::size_t r = 0; r < h; ++r) rows[r] = nearest_source(r, src_h, h);
  for (std::size_t c = 0; c < w; ++c) cols[c] = nearest_source(c, src_w, w);
  std::vector<Segment> segments;
  for (const auto& seg : in.scene.segments) {
    Segment s{seg.class_id, seg.is_thing, BinaryMask(h, w)};
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) s.mask.at(r, c) = seg.mask.at(rows[r], cols[c]);
    }
    if (s.mask.area() > 0) segments.push_back(std::move(s));
  }

  std::vector<LerpTap> row_taps(h), col_taps(w);
  for (std::size_t r = 0; r < h; ++r) row_taps[r] = bilinear_tap(r, src_h, h);
  for (std::size_t c = 0; c < w; ++c) col_taps[c] = bilinear_tap(c, src_w, w);
  AugSample out;
  out.image = Tensor({ch, h, w});
  for (std::size_t k = 0; k < ch; ++k) {
    for (std::size_t r = 0; r < h; ++r) {
      const LerpTap& ty = row_taps[r];
      for (std::size_t c = 0; c < w; ++c) {
        const LerpTap& tx = col_taps[c];
        const double top = (1.0 - tx.frac) * in.image(k, ty.lo, tx.lo) + tx.frac * in.image(k, ty.lo, tx.hi);
        const double bottom = (1.0 - tx.frac) * in.image(k, ty.hi, tx.lo) + tx.frac * in.image(k, ty.hi, tx.hi);
        out.image(k, r, c) = static_cast<float>((1.0 - ty.frac) * top + ty.frac * bottom);
      }
    }
  }
  out.scene = make_scene(h, w, std::move(segments));
  return out;
}

AugSample flip_horizontal(const AugSample& in) {
  expect_image(in);
  const std::size_t h = in.scene.height, w = in.scene.width, ch = in.image.dim(0);
  AugSample out;
  out.image = Tensor(in.image.shape());
  for (std::size_t k = 0; k < ch; ++k) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) out.image(k, r, c) = in.image(k, r, w - 1 - c);
    }
  }
  std::vector<Segment> segments;
  for (const auto& seg : in.scene.segments) {
    Segment s{seg.class_id, seg.is_thing, BinaryMask(h, w)};
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) s.mask.at(r, c) = seg.mask.at(r, w - 1 - c);
    }
    segments.push_back(std::move(s));
  }
  out.scene = make_scene(h, w, std::move(segments));
  return out;
}

ScaleFlipResult scale_and_flip(const AugSample& in, const AugConfig& cfg, Rng& rng) {
  cfg.validate();
  ScaleFlipResult out;
  out.scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  out.flipped = std::bernoulli_distribution(cfg.flip_prob)(rng);
  out.sample = rescale(in, out.scale);
  if (out.flipped) out.sample = flip_horizontal(out.sample);
  return out;
}

CropResult augment(const AugSample& in, const AugConfig& cfg, Rng& rng) {
  return instance_aware_crop(scale_and_flip(in, cfg, rng).sample, cfg, rng);
}

json CropStats::to_json() const {
  return {{"trials", trials},
          {"instance_aware_rate", instance_aware_rate},
          {"random_rate", random_rate},
          {"mean_attempts", mean_attempts},
          {"max_attempts_seen", max_attempts_seen}};
}

CropStats crop_acceptance_stats(const GroundTruthScene& scene, const AugConfig& cfg, std::size_t trials,
                                std::uint64_t seed) {
  cfg.validate();
  if (trials == 0) throw InputError("need at least one trial");
  // Only the window matters here, so a single-channel blank image is enough.
  const AugSample sample{scene, Tensor({1, scene.height, scene.width})};
  Rng aware_rng(seed), plain_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::size_t aware_hits = 0, plain_hits = 0, attempts = 0;
  CropStats stats;
  stats.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const CropResult a = instance_aware_crop(sample, cfg, aware_rng);
    aware_hits += a.accepted ? 1 : 0;
    attempts += a.attempts;
    stats.max_attempts_seen = std::max(stats.max_attempts_seen, a.attempts);
    plain_hits += random_crop(sample, cfg, plain_rng).accepted ? 1 : 0;
  }
  const auto n = static_cast<double>(trials);
  stats.instance_aware_rate = static_cast<double>(aware_hits) / n;
  stats.random_rate = static_cast<double>(plain_hits) / n;
  stats.mean_attempts = static_cast<double>(attempts) / n;
  return stats;
}

}  // namespace rtknet
