#include "rtknet/postprocess.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <thread>

#include "rtknet/numerics.hpp"
#include "rtknet/tensor_io.hpp"

namespace rtknet {

namespace {

struct MaskScores {
  std::vector<float> score;
  std::vector<std::size_t> label;
  std::vector<bool> kept;
};

void check_inputs(const Tensor& masks, const Tensor& probs, const PostprocConfig& cfg) {
  if (masks.rank() != 3 || probs.rank() != 2 || probs.dim(0) != masks.dim(0)) {
    throw DimensionError("post-processing expects masks [N,H,W] and probs [N,N_c], got " +
                         shape_string(masks.shape()) + " and " + shape_string(probs.shape()));
  }
  if (probs.dim(1) != cfg.num_classes()) {
    throw ConfigError("class table has " + std::to_string(cfg.num_classes()) + " entries, predictions have " +
                      std::to_string(probs.dim(1)) + " classes");
  }
  cfg.validate(masks.dim(0));
}

// Max and argmax over classes (lowest class wins ties), then score filter.
MaskScores class_scores(const Tensor& probs, const PostprocConfig& cfg) {
  const std::size_t n = probs.dim(0), nc = probs.dim(1);
  MaskScores s{std::vector<float>(n), std::vector<std::size_t>(n), std::vector<bool>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < nc; ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    s.score[i] = probs(i, best);
    s.label[i] = best;
    s.kept[i] = !(static_cast<double>(s.score[i]) < cfg.score_threshold);
  }
  return s;
}

bool passes_overlap(std::size_t mask_area, std::size_t original_area, double threshold) {
  if (original_area == 0) return false;
  return !(static_cast<double>(mask_area) / static_cast<double>(original_area) < threshold);
}

std::uint32_t mask_id(std::size_t n, const MaskScores& s, const PostprocConfig& cfg) {
  const std::size_t instance = cfg.is_thing(s.label[n]) ? n + 1 : 0;
  return encode_panoptic_id(s.label[n], instance, cfg);
}

PanopticLabelMap empty_map(const Tensor& masks, const PostprocConfig& cfg) {
  const std::size_t h = masks.dim(1), w = masks.dim(2);
  return PanopticLabelMap{w, h, cfg.offset, cfg.void_id, std::vector<std::uint32_t>(h * w, cfg.void_id)};
}

constexpr std::int32_t kNoMask = -1;
constexpr std::size_t kTile = 2048;
// Below this logit sigmoid(x) is far from 0.5 in float, so the >= 0.5 test
// can be decided without evaluating exp.
constexpr float kSureNegative = -1.0f / 64.0f;

struct WorkerCounts {
  std::vector<std::size_t> mask_area;
  std::vector<std::size_t> original_area;
};

// Fills mask_ids[begin, end) with the winning kept mask per pixel and counts
// per-mask areas. `order` lists kept masks by descending score, which lets
// most candidates be rejected by the bound s * sigmoid(x) <= s (or s / 2
// for x < 0) before any exp is evaluated.
void paste_range(const Tensor& masks, const MaskScores& s, const std::vector<std::size_t>& order,
                 std::size_t begin, std::size_t end, std::vector<std::int32_t>& mask_ids, WorkerCounts& counts) {
  const std::size_t hw = masks.dim(1) * masks.dim(2);
  const float* base = masks.data().data();
  std::vector<float> best_value(kTile);
  for (std::size_t tile = begin; tile < end; tile += kTile) {
    const std::size_t len = std::min(kTile, end - tile);
    std::fill_n(best_value.begin(), len, -1.0f);
    std::int32_t* best_id = mask_ids.data() + tile;
    std::fill_n(best_id, len, kNoMask);
    for (std::size_t n : order) {
      const float score = s.score[n];
      const float half_score = score * 0.5f;
      const float* logits = base + n * hw + tile;
      std::size_t original = 0;
      const auto id = static_cast<std::int32_t>(n);
      for (std::size_t p = 0; p < len; ++p) {
        const float x = logits[p];
        float bound;
        if (x >= 0.0f) {
          ++original;
          bound = score;
        } else {
          bound = half_score;
          if (x > kSureNegative && sigmoid(x) >= 0.5f) ++original;
        }
        const float current = best_value[p];
        if (bound < current || (bound == current && id > best_id[p])) continue;
        const float value = score * sigmoid(x);
        if (value > current || (value == current && id < best_id[p])) {
          best_value[p] = value;
          best_id[p] = id;
        }
      }
      counts.original_area[n] += original;
    }
    for (std::size_t p = 0; p < len; ++p) {
      if (best_id[p] != kNoMask) ++counts.mask_area[static_cast<std::size_t>(best_id[p])];
    }
  }
}

}  // namespace

PostprocConfig PostprocConfig::with_classes(std::size_t num_classes, std::size_t thing_count) {
  PostprocConfig cfg;
  cfg.thing_classes.assign(num_classes, false);
  for (std::size_t c = 0; c < std::min(thing_count, num_classes); ++c) cfg.thing_classes[c] = true;
  return cfg;
}

void PostprocConfig::validate(std::size_t num_masks) const {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) throw ConfigError("score threshold must lie in [0, 1]");
  if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0)) throw ConfigError("overlap threshold must lie in (0, 1]");
  if (offset <= num_masks) {
    throw ConfigError("offset " + std::to_string(offset) + " must exceed the mask count " + std::to_string(num_masks));
  }
  if (thing_classes.empty()) throw ConfigError("class table is empty");
  const std::uint64_t largest = static_cast<std::uint64_t>(thing_classes.size() - 1) * offset + num_masks;
  if (largest >= void_id) throw ConfigError("panoptic ids would collide with the void id");
}

std::uint32_t encode_panoptic_id(std::size_t class_label, std::size_t instance_index, const PostprocConfig& cfg) {
  if (instance_index >= cfg.offset) {
    throw EncodingError("instance index " + std::to_string(instance_index) + " does not fit below offset " +
                        std::to_string(cfg.offset));
  }
  const std::uint64_t id = static_cast<std::uint64_t>(class_label) * cfg.offset + instance_index;
  if (id >= cfg.void_id) throw EncodingError("panoptic id " + std::to_string(id) + " collides with void");
  return static_cast<std::uint32_t>(id);
}

DecodedId decode_panoptic_id(std::uint32_t id, const PostprocConfig& cfg) {
  if (id == cfg.void_id) throw EncodingError("cannot decode the void id");
  return {id / cfg.offset, id % cfg.offset};
}

PanopticLabelMap baseline_postprocess(const Tensor& masks, const Tensor& probs, const PostprocConfig& cfg,
                                      bool sort_by_score) {
  check_inputs(masks, probs, cfg);
  const std::size_t n = masks.dim(0), hw = masks.dim(1) * masks.dim(2);
  const MaskScores s = class_scores(probs, cfg);

  // Score-weighted sigmoid masks; filtered masks never enter the argmax.
  const Tensor sig = stable_sigmoid(masks);
  Tensor weighted(masks.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < hw; ++p) weighted[i * hw + p] = s.score[i] * sig[i * hw + p];
  }
  std::vector<std::int32_t> mask_ids(hw, kNoMask);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!s.kept[i]) continue;
      if (mask_ids[p] == kNoMask || weighted[i * hw + p] > weighted[static_cast<std::size_t>(mask_ids[p]) * hw + p]) {
        mask_ids[p] = static_cast<std::int32_t>(i);
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (sort_by_score) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.score[a] > s.score[b]; });
  }

  PanopticLabelMap out = empty_map(masks, cfg);
  for (std::size_t i : order) {
    if (!s.kept[i]) continue;
    std::size_t mask_area = 0, original_area = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      if (mask_ids[p] == static_cast<std::int32_t>(i)) ++mask_area;
    }
    for (std::size_t p = 0; p < hw; ++p) {
      if (sig[i * hw + p] >= 0.5f) ++original_area;
    }
    if (!passes_overlap(mask_area, original_area, cfg.overlap_threshold)) continue;
    const std::uint32_t id = mask_id(i, s, cfg);
    for (std::size_t p = 0; p < hw; ++p) {
      if (mask_ids[p] == static_cast<std::int32_t>(i)) out.ids[p] = id;
    }
  }
  return out;
}

PanopticLabelMap optimized_postprocess(const Tensor& masks, const Tensor& probs, const PostprocConfig& cfg,
                                       std::size_t threads) {
  check_inputs(masks, probs, cfg);
  const std::size_t n = masks.dim(0), hw = masks.dim(1) * masks.dim(2);
  const MaskScores s = class_scores(probs, cfg);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (s.kept[i]) order.push_back(i);
  }
  PanopticLabelMap out = empty_map(masks, cfg);
  if (order.empty()) return out;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.score[a] > s.score[b]; });

  // Mask ids plus the per-mask areas of the one-hot expansion (mask_area)
  // and of sigmoid >= 0.5 (original_area), reduced over workers.
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, hw / kTile));
  std::vector<std::int32_t> mask_ids(hw);
  std::vector<WorkerCounts> counts(threads, WorkerCounts{std::vector<std::size_t>(n), std::vector<std::size_t>(n)});
  const std::size_t per_worker = (hw + threads - 1) / threads;
  auto run = [&](std::size_t t) {
    const std::size_t begin = std::min(hw, t * per_worker);
    const std::size_t end = std::min(hw, begin + per_worker);
    paste_range(masks, s, order, begin, end, mask_ids, counts[t]);
  };
  if (threads == 1) {
    run(0);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) workers.emplace_back(run, t);
  }
  std::vector<std::size_t> mask_area(n), original_area(n);
  for (const auto& c : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      mask_area[i] += c.mask_area[i];
      original_area[i] += c.original_area[i];
    }
  }

  // Label vector: class * offset + instance (zero for stuff), void when the
  // overlap filter rejects the mask. Each pixel's one-hot row has a single
  // nonzero entry, so sum_i onehot(i) * label(i) is a lookup.
  std::vector<std::uint32_t> labels(n, cfg.void_id);
  for (std::size_t i : order) {
    if (passes_overlap(mask_area[i], original_area[i], cfg.overlap_threshold)) labels[i] = mask_id(i, s, cfg);
  }
  for (std::size_t p = 0; p < hw; ++p) {
    if (mask_ids[p] != kNoMask) out.ids[p] = labels[static_cast<std::size_t>(mask_ids[p])];
  }
  return out;
}

void save_label_map(const std::filesystem::path& header_path, const PanopticLabelMap& map) {
  const std::string bin_name = header_path.stem().string() + ".bin";
  write_u32_le(header_path.parent_path() / bin_name, map.ids);
  write_json(header_path, {{"width", map.width},
                           {"height", map.height},
                           {"offset", map.offset},
                           {"void_id", map.void_id},
                           {"file", bin_name}});
}

PanopticLabelMap load_label_map(const std::filesystem::path& header_path) {
  const auto doc = read_json(header_path);
  PanopticLabelMap map;
  try {
    map.width = doc.at("width").get<std::size_t>();
    map.height = doc.at("height").get<std::size_t>();
    map.offset = doc.at("offset").get<std::uint32_t>();
    map.void_id = doc.at("void_id").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  if (map.offset == 0) throw FormatError(header_path.string() + ": offset must be positive");
  const std::string file = doc.contains("file") ? doc.at("file").get<std::string>() : header_path.stem().string() + ".bin";
  map.ids = read_u32_le(header_path.parent_path() / file, map.width * map.height);
  return map;
}

}  // namespace rtknet
