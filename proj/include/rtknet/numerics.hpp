#pragma once

#include <cmath>
#include <cstddef>

#include "rtknet/tensor.hpp"

namespace rtknet {

// Logistic function without overflow for any finite input. Every code path
// that thresholds or compares sigmoid values (notably both post-processing
// routes) must use these exact functions so results stay bit-identical.
inline float sigmoid(float x) noexcept {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Per-(b, n) dot product of kernels [B,N,C] with every pixel of features
// [B,C,H,W]; a 1x1 convolution producing [B,N,H,W].
Tensor mask_logits(const Tensor& kernels, const Tensor& features);

Tensor stable_sigmoid(const Tensor& x);

// Softmax along `axis`, shifted by the axis maximum.
Tensor stable_softmax(const Tensor& x, std::size_t axis);

// 1 where sigmoid(logit) > 0.5, i.e. logit > 0; 0 otherwise.
Tensor binarize(const Tensor& logits);

Tensor relu(const Tensor& x);

}  // namespace rtknet
