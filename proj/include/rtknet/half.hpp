#pragma once

#include <cstdint>

namespace rtknet {

// IEEE-754 binary16 bit pattern.
struct HalfValue {
  std::uint16_t bits = 0;

  float to_float() const noexcept;
  bool is_inf() const noexcept { return (bits & 0x7fffu) == 0x7c00u; }
  bool is_nan() const noexcept { return (bits & 0x7c00u) == 0x7c00u && (bits & 0x03ffu) != 0; }

  friend bool operator==(HalfValue, HalfValue) = default;
};

inline constexpr float kHalfMax = 65504.0f;

struct HalfConversion {
  HalfValue value;
  bool overflow = false;   // finite input rounded to +-inf
  bool underflow = false;  // nonzero input rounded to +-0
};

// Round-to-nearest-even conversion from binary32. NaN stays NaN.
HalfConversion simulate_f16(float x) noexcept;

// Value of x after a round trip through binary16.
inline float round_to_f16(float x) noexcept { return simulate_f16(x).value.to_float(); }

}  // namespace rtknet
