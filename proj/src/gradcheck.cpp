#include "rtknet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

namespace rtknet {

GradCheckResult finite_diff_check(const LossFn& fn, const TensorD& input, double h) {
  const LossGrad base = fn(input);
  if (base.grad.shape() != input.shape()) {
    throw DimensionError("gradient shape " + shape_string(base.grad.shape()) + " differs from input " +
                         shape_string(input.shape()));
  }
  TensorD probe = input;
  std::vector<double> numeric(input.size());
  double scale = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double x = input[i];
    probe[i] = x + h;
    const double up = fn(probe).value;
    probe[i] = x - h;
    const double down = fn(probe).value;
    probe[i] = x;
    numeric[i] = (up - down) / (2.0 * h);
    scale = std::max({scale, std::abs(numeric[i]), std::abs(base.grad[i])});
  }
  GradCheckResult r;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double err = std::abs(numeric[i] - base.grad[i]);
    if (err > r.max_abs_error) {
      r.max_abs_error = err;
      r.worst_index = i;
    }
  }
  r.max_rel_error = scale > 0.0 ? r.max_abs_error / scale : 0.0;
  return r;
}

}  // namespace rtknet

namespace rtknet {

namespace {

using Rng64 = std::mt19937_64;

TensorD random_tensor(const Shape& shape, double stddev, Rng64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  TensorD t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::size_t pick(std::size_t lo, std::size_t hi, Rng64& rng) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

TensorD random_binary(const Shape& shape, Rng64& rng) {
  TensorD t(shape);
  std::bernoulli_distribution coin(0.4);
  for (auto& v : t.data()) v = coin(rng) ? 1.0 : 0.0;
  return t;
}

// Every pixel goes to one of `segments` segments or stays unlabeled.
GroundTruthScene random_partition(std::size_t h, std::size_t w, std::size_t segments, Rng64& rng) {
  std::vector<Segment> segs(segments);
  for (std::size_t s = 0; s < segments; ++s) segs[s] = {s, true, BinaryMask(h, w)};
  for (std::size_t p = 0; p < h * w; ++p) {
    const std::size_t s = pick(0, segments, rng);
    if (s < segments) segs[s].mask.bits[p] = 1;
  }
  std::erase_if(segs, [](const Segment& s) { return s.mask.area() == 0; });
  if (segs.empty()) {
    segs.push_back({0, true, BinaryMask(h, w)});
    segs[0].mask.bits[0] = 1;
  }
  return make_scene(h, w, std::move(segs));
}

template <typename MakeCase>
GradSuiteResult run_suite(const std::string& name, double tolerance, std::size_t instances, Rng64& rng,
                          MakeCase make_case) {
  GradSuiteResult r{name, instances, 0.0, tolerance};
  for (std::size_t i = 0; i < instances; ++i) {
    auto [fn, input] = make_case(rng);
    r.worst_rel_error = std::max(r.worst_rel_error, finite_diff_check(fn, input).max_rel_error);
  }
  return r;
}

}  // namespace

std::vector<GradSuiteResult> run_gradient_suites(std::size_t instances, std::uint64_t seed) {
  Rng64 rng(seed);
  std::vector<GradSuiteResult> out;

  out.push_back(run_suite("dice", kGradTolerance, instances, rng, [](Rng64& g) {
    const Shape shape{pick(2, 6, g), pick(2, 6, g)};
    TensorD target = random_binary(shape, g);
    LossFn fn = [target](const TensorD& x) { return dice_loss(x, target); };
    return std::pair{fn, random_tensor(shape, 1.5, g)};
  }));

  out.push_back(run_suite("bce", kGradTolerance, instances, rng, [](Rng64& g) {
    const Shape shape{pick(2, 6, g), pick(2, 6, g)};
    TensorD target = random_binary(shape, g);
    LossFn fn = [target](const TensorD& x) { return mask_bce_loss(x, target); };
    return std::pair{fn, random_tensor(shape, 1.5, g)};
  }));

  out.push_back(run_suite("focal", kGradTolerance, instances, rng, [](Rng64& g) {
    const std::size_t n = pick(1, 6, g), k = pick(2, 6, g);
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = pick(0, k - 1, g);
    const double gammas[] = {0.0, 1.0, 2.0, 3.0};
    const double gamma = gammas[pick(0, 3, g)];
    LossFn fn = [targets, gamma](const TensorD& x) { return focal_loss(x, targets, gamma, 0.25); };
    return std::pair{fn, random_tensor({n, k}, 1.5, g)};
  }));

  out.push_back(run_suite("rank", kGradTolerance, instances, rng, [](Rng64& g) {
    const std::size_t h = pick(2, 5, g), w = pick(2, 5, g), n = pick(2, 6, g);
    GroundTruthScene scene = random_partition(h, w, pick(1, std::min<std::size_t>(n, 4), g), g);
    std::vector<std::size_t> preds(n);
    std::iota(preds.begin(), preds.end(), 0);
    std::shuffle(preds.begin(), preds.end(), g);
    Assignment assignment;
    for (std::size_t s = 0; s < scene.segments.size(); ++s) assignment.pairs.emplace_back(preds[s], s);
    LossFn fn = [scene, assignment](const TensorD& x) { return rank_loss(x, assignment, scene); };
    return std::pair{fn, random_tensor({n, h, w}, 1.5, g)};
  }));

  out.push_back(run_suite("instance", kInstanceGradTolerance, instances, rng, [](Rng64& g) {
    const std::size_t h = pick(3, 6, g), w = pick(3, 6, g), c = pick(3, 8, g);
    GroundTruthScene scene = random_partition(h, w, pick(2, 4, g), g);
    const std::uint64_t sample_seed = g();
    // Sampling only depends on the scene and seed, so the gradient can be
    // scattered back onto the full feature map.
    LossFn fn = [scene, sample_seed, c](const TensorD& x) {
      InstanceLoss inst = instance_discrimination_loss(x, scene, 0.3, sample_seed, 4);
      LossGrad lg{inst.value, TensorD(x.shape())};
      if (inst.degenerate) return lg;
      const std::size_t hw = scene.height * scene.width;
      for (std::size_t a = 0; a < inst.pixels.size(); ++a) {
        const std::size_t p = inst.pixels[a].row * scene.width + inst.pixels[a].col;
        for (std::size_t k = 0; k < c; ++k) lg.grad[k * hw + p] += inst.grad(a, k);
      }
      return lg;
    };
    return std::pair{fn, random_tensor({c, h, w}, 1.0, g)};
  }));
  return out;
}

}  // namespace rtknet
