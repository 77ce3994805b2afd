#include "rtknet/numerics.hpp"

#include <algorithm>
#include <limits>

namespace rtknet {

Tensor mask_logits(const Tensor& kernels, const Tensor& features) {
  if (kernels.rank() != 3 || features.rank() != 4) {
    throw DimensionError("mask_logits expects kernels [B,N,C] and features [B,C,H,W], got " +
                         shape_string(kernels.shape()) + " and " + shape_string(features.shape()));
  }
  const std::size_t batch = kernels.dim(0), n = kernels.dim(1), c = kernels.dim(2);
  if (features.dim(0) != batch) {
    throw DimensionError("mask_logits batch axis mismatch: kernels axis 0 = " + std::to_string(batch) +
                         ", features axis 0 = " + std::to_string(features.dim(0)));
  }
  if (features.dim(1) != c) {
    throw DimensionError("mask_logits channel axis mismatch: kernels axis 2 = " + std::to_string(c) +
                         ", features axis 1 = " + std::to_string(features.dim(1)));
  }
  const std::size_t hw = features.dim(2) * features.dim(3);
  Tensor out({batch, n, features.dim(2), features.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < n; ++k) {
      float* dst = &out(b, k, 0, 0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float w = kernels(b, k, ch);
        const float* src = &features(b, ch, 0, 0);
        for (std::size_t p = 0; p < hw; ++p) dst[p] += w * src[p];
      }
    }
  }
  return out;
}

Tensor stable_sigmoid(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = sigmoid(v);
  return out;
}

Tensor stable_softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);

  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      float peak = -std::numeric_limits<float>::infinity();
      for (std::size_t k = 0; k < len; ++k) peak = std::max(peak, src[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) total += std::exp(static_cast<double>(src[base + k * inner]) - peak);
      for (std::size_t k = 0; k < len; ++k) {
        dst[base + k * inner] =
            static_cast<float>(std::exp(static_cast<double>(src[base + k * inner]) - peak) / total);
      }
    }
  }
  return out;
}

Tensor binarize(const Tensor& logits) {
  Tensor out(logits.shape());
  auto src = logits.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? 1.0f : 0.0f;
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = std::max(v, 0.0f);
  return out;
}

}  // namespace rtknet
