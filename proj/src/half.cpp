#include "rtknet/half.hpp"

#include <bit>

namespace rtknet {

float HalfValue::to_float() const noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  std::uint32_t mant = bits & 0x03ffu;
  std::uint32_t out;
  if (exp == 0x1f) {
    out = sign | 0x7f800000u | (mant << 13);
  } else if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      // Subnormal half: renormalize into a binary32 normal.
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x0400u) == 0);
      out = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x03ffu) << 13);
    }
  } else {
    out = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

HalfConversion simulate_f16(float x) noexcept {
  const std::uint32_t f = std::bit_cast<std::uint32_t>(x);
  const auto sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
  const std::uint32_t exp = (f >> 23) & 0xffu;
  const std::uint32_t mant = f & 0x7fffffu;

  HalfConversion r;
  if (exp == 0xff) {
    r.value.bits = mant ? static_cast<std::uint16_t>(sign | 0x7e00u | (mant >> 13))
                        : static_cast<std::uint16_t>(sign | 0x7c00u);
    return r;
  }
  if (exp == 0 && mant == 0) {
    r.value.bits = sign;
    return r;
  }

  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) {
    r.value.bits = static_cast<std::uint16_t>(sign | 0x7c00u);
    r.overflow = true;
    return r;
  }
  if (e <= 0) {
    if (e < -10) {
      r.value.bits = sign;
      r.underflow = true;
      return r;
    }
    const std::uint32_t m = mant | 0x800000u;
    const int shift = 14 - e;
    std::uint32_t h = m >> shift;
    const std::uint32_t rem = m & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (h & 1u))) ++h;
    r.value.bits = static_cast<std::uint16_t>(sign | h);
    r.underflow = (h == 0);
    return r;
  }

  std::uint32_t h = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // carry may reach the exponent
  r.value.bits = static_cast<std::uint16_t>(sign | h);
  r.overflow = (h >= 0x7c00u);
  return r;
}

}  // namespace rtknet
