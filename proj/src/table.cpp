#include "smlp/table.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string_view>

#include "smlp/binary_io.hpp"

namespace smlp {

namespace {

constexpr std::string_view kTableMagic{"SMLP-TAB\0", 9};
constexpr std::uint32_t kTableVersion = 1;
constexpr std::uint32_t kF32Flag = 0x80000000u;

}  // namespace

GridTable::GridTable(std::vector<std::vector<double>> axes, std::vector<std::string> scalar_names,
                     std::vector<double> values)
    : axes_(std::move(axes)), names_(std::move(scalar_names)), values_(std::move(values)) {
  if (axes_.empty() || axes_.size() > kMaxTableDims) {
    throw DataError("table must have 1.." + std::to_string(kMaxTableDims) + " dimensions, got " +
                    std::to_string(axes_.size()));
  }
  if (names_.empty()) throw DataError("table must have at least one scalar");
  num_points_ = 1;
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    const auto& a = axes_[d];
    if (a.size() < 2) {
      throw DataError("axis " + std::to_string(d) + " has " + std::to_string(a.size()) +
                      " points, need at least 2");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!std::isfinite(a[i])) throw DataError("axis " + std::to_string(d) + " is not finite");
      if (i > 0 && !(a[i] > a[i - 1])) {
        throw DataError("axis " + std::to_string(d) + " is not strictly increasing");
      }
    }
    num_points_ *= a.size();
  }
  if (values_.size() != num_points_ * names_.size()) {
    throw DataError("table has " + std::to_string(values_.size()) + " values, expected " +
                    std::to_string(num_points_ * names_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw DataError("table contains non-finite values");
  }
  strides_.assign(axes_.size(), 1);
  for (std::size_t d = axes_.size() - 1; d > 0; --d) {
    strides_[d - 1] = strides_[d] * axes_[d].size();
  }
}

std::vector<double> GridTable::inputs(std::size_t point) const {
  std::vector<double> x(dims());
  inputs(point, x);
  return x;
}

void GridTable::inputs(std::size_t point, std::span<double> out) const {
  for (std::size_t d = 0; d < dims(); ++d) {
    out[d] = axes_[d][(point / strides_[d]) % axes_[d].size()];
  }
}

double GridTable::scalar_min(std::size_t scalar) const {
  double m = value(0, scalar);
  for (std::size_t p = 1; p < num_points_; ++p) m = std::min(m, value(p, scalar));
  return m;
}

double GridTable::scalar_max(std::size_t scalar) const {
  double m = value(0, scalar);
  for (std::size_t p = 1; p < num_points_; ++p) m = std::max(m, value(p, scalar));
  return m;
}

std::uint64_t GridTable::digest() const {
  Fnv1a h;
  h.update_value(static_cast<std::uint64_t>(dims()));
  for (const auto& a : axes_) {
    h.update_value(static_cast<std::uint64_t>(a.size()));
    h.update(a.data(), a.size() * sizeof(double));
  }
  for (const auto& n : names_) {
    h.update_value(static_cast<std::uint64_t>(n.size()));
    h.update(n);
  }
  h.update(values_.data(), values_.size() * sizeof(double));
  return h.digest();
}

TablePoint table_point(const GridTable& table, std::size_t point) {
  auto out = table.outputs(point);
  return {table.inputs(point), std::vector<double>(out.begin(), out.end())};
}

// ---------------------------------------------------------------------------
// Synthetic families

namespace {

std::vector<std::vector<double>> synthetic_axes(const std::vector<std::size_t>& lengths, Rng& rng) {
  std::vector<std::vector<double>> axes(lengths.size());
  for (std::size_t d = 0; d < lengths.size(); ++d) {
    const std::size_t n = lengths[d];
    auto& a = axes[d];
    a.resize(n);
    if (d == 0) {
      // Mildly stretched spacing on [0, 1], like a mixture-fraction axis.
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        a[i] = t + 0.15 * t * (1.0 - t);
      }
      a.front() = 0.0;
      a.back() = 1.0;
    } else {
      const double lo = std::round(rng.uniform(-5.0, 5.0) * 100.0) / 100.0;
      const double span = std::round(rng.uniform(0.5, 100.0) * 100.0) / 100.0;
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = lo + span * static_cast<double>(i) / static_cast<double>(n - 1);
      }
    }
  }
  return axes;
}

/// Shared plumbing: maps raw inputs to the unit cube, then calls unit_eval.
class UnitCubeFunction : public SyntheticFunction {
 public:
  void evaluate(std::span<const double> raw, std::span<double> out) const override {
    if (raw.size() != axes_.size()) {
      throw DimensionError("synthetic function expects " + std::to_string(axes_.size()) +
                           " inputs, got " + std::to_string(raw.size()));
    }
    std::array<double, kMaxTableDims> u{};
    for (std::size_t d = 0; d < axes_.size(); ++d) {
      u[d] = (raw[d] - axes_[d].front()) / (axes_[d].back() - axes_[d].front());
    }
    unit_eval(std::span<const double>(u.data(), axes_.size()), out);
  }

 protected:
  virtual void unit_eval(std::span<const double> u, std::span<double> out) const = 0;

  void init(const SyntheticSpec& spec, Rng& rng, bool flame_names) {
    axes_ = synthetic_axes(spec.axes, rng);
    names_.resize(spec.scalars);
    for (std::size_t k = 0; k < spec.scalars; ++k) {
      char buf[32];
      if (flame_names) {
        if (k == 0) {
          std::snprintf(buf, sizeof buf, "T");
        } else {
          std::snprintf(buf, sizeof buf, "Y%02zu", k);
        }
      } else {
        std::snprintf(buf, sizeof buf, "s%02zu", k);
      }
      names_[k] = buf;
    }
    scale_.resize(spec.scalars);
    for (std::size_t k = 0; k < spec.scalars; ++k) {
      scale_[k] = std::pow(10.0, rng.uniform(-3.0, 1.0));
    }
  }

  std::vector<double> scale_;
};

class MultilinearFunction final : public UnitCubeFunction {
 public:
  MultilinearFunction(const SyntheticSpec& spec, Rng& rng) {
    init(spec, rng, false);
    a_.resize(spec.scalars * spec.axes.size());
    b_.resize(a_.size());
    for (std::size_t i = 0; i < a_.size(); ++i) {
      a_[i] = rng.uniform(0.5, 1.5);
      b_[i] = rng.uniform(-0.4, 1.0);
    }
  }

 protected:
  void unit_eval(std::span<const double> u, std::span<double> out) const override {
    const std::size_t n = u.size();
    for (std::size_t k = 0; k < out.size(); ++k) {
      double v = scale_[k];
      for (std::size_t d = 0; d < n; ++d) v *= a_[k * n + d] + b_[k * n + d] * u[d];
      out[k] = v;
    }
  }

 private:
  std::vector<double> a_, b_;
};

class GaussBumpsFunction final : public UnitCubeFunction {
 public:
  static constexpr std::size_t kBumps = 3;

  GaussBumpsFunction(const SyntheticSpec& spec, Rng& rng) : dims_(spec.axes.size()) {
    init(spec, rng, false);
    base_.resize(spec.scalars);
    amp_.resize(spec.scalars * kBumps);
    center_.resize(spec.scalars * kBumps * dims_);
    inv_two_var_.resize(center_.size());
    for (std::size_t k = 0; k < spec.scalars; ++k) {
      base_[k] = rng.uniform(0.1, 0.3);
      for (std::size_t m = 0; m < kBumps; ++m) {
        amp_[k * kBumps + m] = rng.uniform(0.3, 1.0);
        for (std::size_t d = 0; d < dims_; ++d) {
          const std::size_t i = (k * kBumps + m) * dims_ + d;
          center_[i] = rng.uniform(0.1, 0.9);
          const double sigma = rng.uniform(0.15, 0.4);
          inv_two_var_[i] = 1.0 / (2.0 * sigma * sigma);
        }
      }
    }
  }

 protected:
  void unit_eval(std::span<const double> u, std::span<double> out) const override {
    for (std::size_t k = 0; k < out.size(); ++k) {
      double v = base_[k];
      for (std::size_t m = 0; m < kBumps; ++m) {
        double e = 0.0;
        for (std::size_t d = 0; d < dims_; ++d) {
          const std::size_t i = (k * kBumps + m) * dims_ + d;
          const double du = u[d] - center_[i];
          e += du * du * inv_two_var_[i];
        }
        v += amp_[k * kBumps + m] * std::exp(-e);
      }
      out[k] = scale_[k] * v;
    }
  }

 private:
  std::size_t dims_;
  std::vector<double> base_, amp_, center_, inv_two_var_;
};

/// Piecewise-smooth in dim 0 with two C0 seams whose positions drift with the
/// other coordinates. The seams are shared by all scalars; each scalar has its
/// own slopes and curvature in the three regimes.
class RegimesFunction final : public UnitCubeFunction {
 public:
  RegimesFunction(const SyntheticSpec& spec, Rng& rng) : dims_(spec.axes.size()) {
    init(spec, rng, false);
    const std::size_t s = spec.scalars;
    seam1_ = rng.uniform(0.25, 0.4);
    seam2_ = rng.uniform(0.6, 0.75);
    slope_.resize(s);
    kink1_.resize(s);
    kink2_.resize(s);
    bump_.resize(s);
    mod_.resize(s * dims_);
    for (std::size_t k = 0; k < s; ++k) {
      slope_[k] = rng.uniform(0.5, 1.5);
      kink1_[k] = -slope_[k] - rng.uniform(0.3, 0.8);
      kink2_[k] = rng.uniform(1.0, 2.0);
      bump_[k] = rng.uniform(0.2, 0.5);
      for (std::size_t d = 0; d < dims_; ++d) mod_[k * dims_ + d] = rng.uniform(0.05, 0.2);
    }
  }

 protected:
  void unit_eval(std::span<const double> u, std::span<double> out) const override {
    constexpr double kPi = 3.14159265358979323846;
    const double drift1 = dims_ > 1 ? 0.1 * (u[1] - 0.5) : 0.0;
    const double drift2 = dims_ > 1 ? -0.1 * (u[dims_ - 1] - 0.5) : 0.0;
    const double s1 = seam1_ + drift1;
    const double s2 = seam2_ + drift2;
    const double z = u[0];
    for (std::size_t k = 0; k < out.size(); ++k) {
      double v = 1.0 + slope_[k] * z + kink1_[k] * std::max(0.0, z - s1) +
                 kink2_[k] * std::max(0.0, z - s2);
      v += bump_[k] * 4.0 * std::max(0.0, z - s1) * std::max(0.0, s2 - z) / (s2 - s1);
      for (std::size_t d = 1; d < dims_; ++d) {
        v += mod_[k * dims_ + d] * std::sin(kPi * u[d]);
      }
      out[k] = scale_[k] * v;
    }
  }

 private:
  std::size_t dims_;
  double seam1_ = 0.0, seam2_ = 0.0;
  std::vector<double> slope_, kink1_, kink2_, bump_, mod_;
};

/// Smooth peak in dim 0 (temperature against mixture fraction) whose height
/// and width are modulated by the remaining dims. Scalar 0 is temperature-like.
class FlameLikeFunction final : public UnitCubeFunction {
 public:
  FlameLikeFunction(const SyntheticSpec& spec, Rng& rng) : dims_(spec.axes.size()) {
    init(spec, rng, true);
    const std::size_t s = spec.scalars;
    peak_.resize(s);
    width_.resize(s);
    base_.resize(s);
    lin_.resize(s);
    atten_.resize(s * dims_);
    power_.resize(s * dims_);
    for (std::size_t k = 0; k < s; ++k) {
      peak_[k] = rng.uniform(0.25, 0.45);
      width_[k] = rng.uniform(0.12, 0.2);
      base_[k] = rng.uniform(0.1, 0.35);
      lin_[k] = rng.uniform(-0.5, 0.5);
      for (std::size_t d = 0; d < dims_; ++d) {
        atten_[k * dims_ + d] = rng.uniform(0.1, 0.35);
        power_[k * dims_ + d] = rng.uniform() < 0.5 ? 1.0 : 2.0;
      }
    }
    // Temperature: 300 K cold boundary, ~2000 K peak.
    scale_[0] = 1700.0;
    base_[0] = 300.0 / 1700.0;
    lin_[0] = 0.0;
  }

 protected:
  void unit_eval(std::span<const double> u, std::span<double> out) const override {
    const double z = u[0];
    for (std::size_t k = 0; k < out.size(); ++k) {
      double width = width_[k];
      if (dims_ > 1) width *= 1.0 + 0.5 * u[1];
      double atten = 1.0;
      for (std::size_t d = 1; d < dims_; ++d) {
        atten *= 1.0 - atten_[k * dims_ + d] * std::pow(u[d], power_[k * dims_ + d]);
      }
      const double dz = z - peak_[k];
      const double peak = atten * std::exp(-dz * dz / (2.0 * width * width));
      out[k] = scale_[k] * (base_[k] * (1.0 + lin_[k] * z) + peak);
    }
  }

 private:
  std::size_t dims_;
  std::vector<double> peak_, width_, base_, lin_, atten_, power_;
};

}  // namespace

std::vector<double> SyntheticFunction::operator()(std::span<const double> raw_inputs) const {
  std::vector<double> out(names_.size());
  evaluate(raw_inputs, out);
  return out;
}

std::vector<std::string> synthetic_families() {
  return {"multilinear", "gauss-bumps", "regimes", "flame-like"};
}

std::unique_ptr<SyntheticFunction> make_synthetic_function(const SyntheticSpec& spec) {
  if (spec.axes.empty() || spec.axes.size() > kMaxTableDims) {
    throw ConfigError("synthetic spec: axes must list 1.." + std::to_string(kMaxTableDims) +
                      " lengths");
  }
  for (std::size_t n : spec.axes) {
    if (n < 2) throw ConfigError("synthetic spec: axis length must be >= 2");
  }
  if (spec.scalars < 1) throw ConfigError("synthetic spec: scalars must be >= 1");

  Rng rng(derive_seed(spec.seed, 0x7AB1E));
  if (spec.family == "multilinear") return std::make_unique<MultilinearFunction>(spec, rng);
  if (spec.family == "gauss-bumps") return std::make_unique<GaussBumpsFunction>(spec, rng);
  if (spec.family == "regimes") return std::make_unique<RegimesFunction>(spec, rng);
  if (spec.family == "flame-like") return std::make_unique<FlameLikeFunction>(spec, rng);
  throw ConfigError("synthetic spec: unknown family '" + spec.family +
                    "' (expected multilinear, gauss-bumps, regimes or flame-like)");
}

GridTable generate_synthetic(const SyntheticSpec& spec) {
  auto fn = make_synthetic_function(spec);
  const auto& axes = fn->axes();
  std::size_t points = 1;
  for (const auto& a : axes) points *= a.size();

  std::vector<double> values(points * spec.scalars);
  std::vector<double> x(axes.size());
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t p = 0; p < points; ++p) {
    for (std::size_t d = 0; d < axes.size(); ++d) x[d] = axes[d][idx[d]];
    fn->evaluate(x, std::span<double>(values.data() + p * spec.scalars, spec.scalars));
    for (std::size_t d = axes.size(); d-- > 0;) {
      if (++idx[d] < axes[d].size()) break;
      idx[d] = 0;
    }
  }
  return GridTable(axes, fn->scalar_names(), std::move(values));
}

// ---------------------------------------------------------------------------
// Multilinear interpolation

std::vector<double> multilinear_eval(const GridTable& table, std::span<const double> query,
                                     RangePolicy policy) {
  std::vector<double> out(table.num_scalars());
  multilinear_eval(table, query, out, policy);
  return out;
}

void multilinear_eval(const GridTable& table, std::span<const double> query, std::span<double> out,
                      RangePolicy policy) {
  const std::size_t dims = table.dims();
  const std::size_t ns = table.num_scalars();
  if (query.size() != dims) {
    throw DimensionError("query has " + std::to_string(query.size()) + " coordinates, table has " +
                         std::to_string(dims) + " dimensions");
  }
  if (out.size() != ns) throw DimensionError("output buffer size does not match scalar count");

  std::array<double, kMaxTableDims> t{};
  std::array<std::size_t, kMaxTableDims> step{};
  std::size_t base = 0;
  for (std::size_t d = 0; d < dims; ++d) {
    const auto& a = table.axis(d);
    double x = query[d];
    if (std::isnan(x)) throw DataError("query coordinate " + std::to_string(d) + " is NaN");
    if (x < a.front() || x > a.back()) {
      if (policy == RangePolicy::strict) {
        throw DataError("query coordinate " + std::to_string(d) + " outside table bounds");
      }
      x = std::clamp(x, a.front(), a.back());
    }
    auto it = std::upper_bound(a.begin(), a.end(), x);
    std::size_t i = static_cast<std::size_t>(it - a.begin());
    i = std::clamp<std::size_t>(i, 1, a.size() - 1) - 1;
    t[d] = (x - a[i]) / (a[i + 1] - a[i]);
    base += i * table.stride(d);
    step[d] = table.stride(d);
  }

  std::fill(out.begin(), out.end(), 0.0);
  const double* values = table.values().data();
  const std::size_t corners = std::size_t{1} << dims;
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t offset = base;
    for (std::size_t d = 0; d < dims; ++d) {
      if (c & (std::size_t{1} << (dims - 1 - d))) {
        w *= t[d];
        offset += step[d];
      } else {
        w *= 1.0 - t[d];
      }
    }
    if (w == 0.0) continue;
    const double* v = values + offset * ns;
    for (std::size_t s = 0; s < ns; ++s) out[s] += w * v[s];
  }
}

// ---------------------------------------------------------------------------
// Normalization

void NormStats::normalize(std::span<const double> raw, std::span<double> out) const {
  for (std::size_t d = 0; d < min.size(); ++d) out[d] = normalize(d, raw[d]);
}

void NormStats::denormalize(std::span<const double> unit, std::span<double> out) const {
  for (std::size_t d = 0; d < min.size(); ++d) out[d] = denormalize(d, unit[d]);
}

NormStats input_norm_stats(const GridTable& table) {
  NormStats s;
  for (std::size_t d = 0; d < table.dims(); ++d) {
    const auto& a = table.axis(d);
    if (!(a.back() > a.front())) {
      throw DataError("degenerate axis " + std::to_string(d) + " (min == max)");
    }
    s.min.push_back(a.front());
    s.max.push_back(a.back());
  }
  return s;
}

NormalizedPoints normalize_inputs(const GridTable& table) {
  NormalizedPoints r{RowMatrix(table.num_points(), table.dims()), input_norm_stats(table)};
  std::vector<double> x(table.dims());
  for (std::size_t p = 0; p < table.num_points(); ++p) {
    table.inputs(p, x);
    r.stats.normalize(x, r.points.row(p));
  }
  return r;
}

// ---------------------------------------------------------------------------
// File I/O

std::vector<std::uint8_t> serialize_table(const GridTable& table, ValuePrecision precision) {
  ByteWriter w;
  w.raw(kTableMagic);
  w.u32(kTableVersion | (precision == ValuePrecision::f32 ? kF32Flag : 0u));
  w.u32(static_cast<std::uint32_t>(table.dims()));
  w.u32(static_cast<std::uint32_t>(table.num_scalars()));
  for (const auto& a : table.axes()) w.u32(static_cast<std::uint32_t>(a.size()));
  for (const auto& a : table.axes()) {
    for (double v : a) w.f64(v);
  }
  for (const auto& n : table.scalar_names()) w.str(n);
  if (precision == ValuePrecision::f32) {
    for (double v : table.values()) w.f32(static_cast<float>(v));
  } else {
    for (double v : table.values()) w.f64(v);
  }
  append_crc(w);
  return w.take();
}

GridTable deserialize_table(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kTableMagic.size() ||
      !std::equal(kTableMagic.begin(), kTableMagic.end(), bytes.begin())) {
    throw FormatError(FormatError::Kind::bad_magic, "not a table file (bad magic)");
  }
  if (bytes.size() < kTableMagic.size() + 4) {
    throw FormatError(FormatError::Kind::truncated, "table file truncated");
  }
  // Parse the body first so a short file reports truncation, not a bad CRC.
  ByteReader r(bytes.first(bytes.size() - 4));
  r.bytes(kTableMagic.size());
  const std::uint32_t version_word = r.u32();
  if ((version_word & ~kF32Flag) != kTableVersion) {
    throw FormatError(FormatError::Kind::bad_version,
                      "unsupported table version " + std::to_string(version_word & ~kF32Flag));
  }
  const bool f32 = (version_word & kF32Flag) != 0;
  const std::uint32_t dims = r.u32();
  const std::uint32_t ns = r.u32();
  if (dims == 0 || dims > kMaxTableDims || ns == 0) {
    throw FormatError(FormatError::Kind::structure, "table header has invalid dims/scalar count");
  }
  std::vector<std::size_t> lengths(dims);
  std::size_t points = 1;
  for (auto& n : lengths) {
    n = r.u32();
    if (n < 2) throw FormatError(FormatError::Kind::structure, "table axis shorter than 2");
    if (points > r.remaining() / n) {
      throw FormatError(FormatError::Kind::truncated, "table sizes exceed payload length");
    }
    points *= n;
  }
  std::vector<std::vector<double>> axes(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    axes[d].resize(lengths[d]);
    for (auto& v : axes[d]) v = r.f64();
  }
  std::vector<std::string> names(ns);
  for (auto& n : names) n = r.str();
  const std::size_t value_bytes = f32 ? 4 : 8;
  if (points * ns > r.remaining() / value_bytes) {
    throw FormatError(FormatError::Kind::truncated,
                      "table payload shorter than declared sizes");
  }
  std::vector<double> values(points * ns);
  for (auto& v : values) v = f32 ? static_cast<double>(r.f32()) : r.f64();
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::structure, "table payload longer than declared sizes");
  }
  verify_crc(bytes, "table");
  try {
    return GridTable(std::move(axes), std::move(names), std::move(values));
  } catch (const DataError& e) {
    throw FormatError(FormatError::Kind::structure, std::string("invalid table content: ") + e.what());
  }
}

void save_table(const GridTable& table, const std::filesystem::path& path,
                ValuePrecision precision) {
  write_file_atomic(path, serialize_table(table, precision));
}

GridTable load_table(const std::filesystem::path& path) { return deserialize_table(read_file(path)); }

}  // namespace smlp
