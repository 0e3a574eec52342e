#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace smlp {

enum class Activation : std::uint8_t { tanh = 0, logistic = 1, linear = 2 };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

namespace kernel {

// exp(y) - 1 for y in [-40, 0], branch-free so loops over it vectorize.
// Cody-Waite reduction y = n ln2 + r, degree-12 Taylor on |r| <= ln2/2, and
// e^y - 1 = 2^n (e^r - 1) + (2^n - 1), which keeps full relative accuracy as
// y -> 0 (then n = 0 exactly).
inline double expm1_nonpositive(double y) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
  const double t = y * kLog2e + kShifter;
  const double n = t - kShifter;
  const double r = (y - n * kLn2Hi) - n * kLn2Lo;
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  const double em1_r = r + r * r * p;
  // The low mantissa bits of t hold n; rebuild 2^n from them directly.
  const std::uint64_t ni = std::bit_cast<std::uint64_t>(t) - std::bit_cast<std::uint64_t>(kShifter);
  const double scale = std::bit_cast<double>((ni + 1023) << 52);
  return em1_r * scale + (scale - 1.0);
}

inline double exp_nonpositive(double y) { return expm1_nonpositive(y) + 1.0; }

/// Hyperbolic tangent accurate to a few ulp: with m = e^(-2|x|) - 1,
/// tanh|x| = -m / (2 + m). Branch-free (bit-mask clamp and sign) so loops
/// over it vectorize.
inline double tanh(double x) {
  constexpr std::uint64_t kSign = 0x8000000000000000ULL;
  const std::uint64_t xb = std::bit_cast<std::uint64_t>(x);
  const double ax = std::bit_cast<double>(xb & ~kSign);
  const std::uint64_t below = 0 - static_cast<std::uint64_t>(ax < 20.0);
  const double c = std::bit_cast<double>((std::bit_cast<std::uint64_t>(ax) & below) |
                                         (std::bit_cast<std::uint64_t>(20.0) & ~below));
  const double m = expm1_nonpositive(-2.0 * c);
  const double t = -m / (2.0 + m);
  return std::bit_cast<double>((std::bit_cast<std::uint64_t>(t) & ~kSign) | (xb & kSign));
}

inline double logistic(double x) { return 0.5 + 0.5 * kernel::tanh(0.5 * x); }

inline double apply(Activation a, double x) {
  switch (a) {
    case Activation::tanh:
      return kernel::tanh(x);
    case Activation::logistic:
      return logistic(x);
    case Activation::linear:
      break;
  }
  return x;
}

/// Derivative expressed through the activation output y = g(x).
inline double derivative_from_output(Activation a, double y) {
  switch (a) {
    case Activation::tanh:
      return 1.0 - y * y;
    case Activation::logistic:
      return y * (1.0 - y);
    case Activation::linear:
      break;
  }
  return 1.0;
}

/// In-place activation over a contiguous block.
void apply_block(Activation a, double* v, std::size_t n);

}  // namespace kernel
}  // namespace smlp
