#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smlp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input or query vector length does not match the object it is applied to.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters, configuration values or preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problems with data content: non-finite values, empty sets, too few points.
class DataError : public Error {
 public:
  using Error::Error;
};

/// SGD produced a non-finite loss or weight.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, checksum, structure };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Dense row-major matrix. Used for point sets (rows = points) and weights.
struct RowMatrix {
  std::vector<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  RowMatrix() = default;
  RowMatrix(std::size_t r, std::size_t c) : data(r * c, 0.0), rows(r), cols(c) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool operator==(const RowMatrix&) const = default;
};

/// Seeded generator with portable uniform draws. std:: distributions are
/// implementation-defined, which would break cross-platform determinism.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t below(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return static_cast<std::size_t>(v % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Combine a base seed with identifiers into an independent stream seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  Rng r(base ^ 0x5851F42D4C957F2DULL);
  std::uint64_t s = r.next();
  s ^= a * 0xD1B54A32D192ED03ULL;
  s = Rng(s).next();
  s ^= b * 0x8CB92BA72F3D8DD7ULL;
  return Rng(s).next();
}

/// FNV-1a 64-bit, used for provenance digests.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_value(const T& v) { update(&v, sizeof(T)); }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

}  // namespace smlp
