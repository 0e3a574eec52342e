#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smlp/common.hpp"

namespace smlp {

inline constexpr std::size_t kMaxTableDims = 8;

/// Dense rectilinear N-dimensional table. Values are row-major over the grid
/// (last axis fastest) with scalars innermost, so one grid point's outputs are
/// contiguous. Immutable after construction.
class GridTable {
 public:
  GridTable(std::vector<std::vector<double>> axes, std::vector<std::string> scalar_names,
            std::vector<double> values);

  std::size_t dims() const { return axes_.size(); }
  std::size_t num_scalars() const { return names_.size(); }
  std::size_t num_points() const { return num_points_; }

  const std::vector<double>& axis(std::size_t d) const { return axes_[d]; }
  const std::vector<std::vector<double>>& axes() const { return axes_; }
  const std::vector<std::string>& scalar_names() const { return names_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t stride(std::size_t d) const { return strides_[d]; }

  /// Outputs of the grid point with flat index `point`.
  std::span<const double> outputs(std::size_t point) const {
    return {values_.data() + point * names_.size(), names_.size()};
  }
  double value(std::size_t point, std::size_t scalar) const {
    return values_[point * names_.size() + scalar];
  }
  /// Raw input coordinates of grid point `point`.
  std::vector<double> inputs(std::size_t point) const;
  void inputs(std::size_t point, std::span<double> out) const;

  double scalar_min(std::size_t scalar) const;
  double scalar_max(std::size_t scalar) const;

  /// Content digest (axes, names, values). Independent of file precision.
  std::uint64_t digest() const;

  bool operator==(const GridTable&) const = default;

 private:
  std::vector<std::vector<double>> axes_;
  std::vector<std::string> names_;
  std::vector<double> values_;
  std::vector<std::size_t> strides_;
  std::size_t num_points_ = 0;
};

struct TablePoint {
  std::vector<double> inputs;
  std::vector<double> outputs;
};

TablePoint table_point(const GridTable& table, std::size_t point);

// ---------------------------------------------------------------------------
// Synthetic tables

struct SyntheticSpec {
  std::string family;               // multilinear | gauss-bumps | regimes | flame-like
  std::vector<std::size_t> axes;    // points per axis
  std::size_t scalars = 1;
  std::uint64_t seed = 0;
};

/// The analytic function behind a synthetic table, evaluable anywhere in the
/// table's domain. Tests compare interpolants against it.
class SyntheticFunction {
 public:
  virtual ~SyntheticFunction() = default;
  virtual void evaluate(std::span<const double> raw_inputs, std::span<double> out) const = 0;
  std::vector<double> operator()(std::span<const double> raw_inputs) const;

  const std::vector<std::vector<double>>& axes() const { return axes_; }
  const std::vector<std::string>& scalar_names() const { return names_; }

 protected:
  std::vector<std::vector<double>> axes_;
  std::vector<std::string> names_;
};

std::vector<std::string> synthetic_families();

std::unique_ptr<SyntheticFunction> make_synthetic_function(const SyntheticSpec& spec);

GridTable generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Multilinear interpolation baseline

enum class RangePolicy { clamp, strict };

std::vector<double> multilinear_eval(const GridTable& table, std::span<const double> query,
                                     RangePolicy policy = RangePolicy::clamp);

/// Writes num_scalars outputs into `out`. No allocation.
void multilinear_eval(const GridTable& table, std::span<const double> query, std::span<double> out,
                      RangePolicy policy = RangePolicy::clamp);

// ---------------------------------------------------------------------------
// Normalization

/// Per-dimension affine maps of raw inputs onto [0, 1].
struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t dims() const { return min.size(); }
  double normalize(std::size_t d, double x) const { return (x - min[d]) / (max[d] - min[d]); }
  double denormalize(std::size_t d, double u) const { return min[d] + u * (max[d] - min[d]); }
  void normalize(std::span<const double> raw, std::span<double> out) const;
  void denormalize(std::span<const double> unit, std::span<double> out) const;

  bool operator==(const NormStats&) const = default;
};

NormStats input_norm_stats(const GridTable& table);

struct NormalizedPoints {
  RowMatrix points;  // num_points x dims, in [0, 1]
  NormStats stats;
};

NormalizedPoints normalize_inputs(const GridTable& table);

// ---------------------------------------------------------------------------
// File I/O

enum class ValuePrecision : std::uint32_t { f64 = 0, f32 = 1 };

std::vector<std::uint8_t> serialize_table(const GridTable& table,
                                          ValuePrecision precision = ValuePrecision::f64);
GridTable deserialize_table(std::span<const std::uint8_t> bytes);

void save_table(const GridTable& table, const std::filesystem::path& path,
                ValuePrecision precision = ValuePrecision::f64);
GridTable load_table(const std::filesystem::path& path);

}  // namespace smlp
