#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "smlp/mlp.hpp"
#include "smlp/som.hpp"
#include "smlp/table.hpp"

namespace smlp {

enum class BlendMode : std::uint32_t { off = 0, nearest2 = 1 };

struct BlendConfig {
  BlendMode mode = BlendMode::off;
  /// Inverse-distance weight exponent: w = 1 / d^exponent.
  double exponent = 1.0;

  bool operator==(const BlendConfig&) const = default;
};

std::string_view blend_mode_name(BlendMode m);
BlendMode parse_blend_mode(std::string_view s);

/// Settings the model was trained with, kept so mismatched table/model pairs
/// can be refused later.
struct Provenance {
  std::uint64_t table_digest = 0;
  std::uint64_t policy_digest = 0;
  double tau_r = 0.0;
  double tau_a_multiplier = 0.0;
  std::vector<double> tau_a;  // per scalar, raw units

  bool operator==(const Provenance&) const = default;
};

/// SOM routing plus one network per (cluster, scalar group). Immutable once
/// trained or loaded; safe for concurrent evaluation.
struct SurrogateModel {
  std::vector<std::string> scalar_names;
  SomMap som;
  ScalarGrouping grouping;
  std::vector<MlpNetwork> networks;  // cluster-major: index = cluster * G + group
  NormStats input_norm;
  std::vector<OutputScale> output_scales;
  BlendConfig blend;
  Provenance provenance;

  std::size_t dims() const { return input_norm.dims(); }
  std::size_t num_scalars() const { return scalar_names.size(); }
  std::size_t num_clusters() const { return som.num_clusters(); }
  std::size_t num_groups() const { return grouping.num_groups(); }

  const MlpNetwork& network(std::size_t cluster, std::size_t group) const {
    return networks[cluster * num_groups() + group];
  }

  std::size_t parameter_count() const;
  std::size_t hidden_neurons() const;
  /// Tolerance of each scalar as recorded at training time.
  std::vector<ToleranceSpec> tolerances() const;

  /// Throws FormatError::structure on any inconsistency.
  void validate() const;

  bool operator==(const SurrogateModel&) const = default;
};

/// Evaluate all scalars (raw units, table order) at a raw-unit query.
/// Coordinates outside the trained bounds are clamped.
std::vector<double> surrogate_eval(const SurrogateModel& model, std::span<const double> query,
                                   ActivationCounter* counter = nullptr);

struct BatchOptions {
  std::size_t threads = 1;
};

struct BatchResult {
  RowMatrix outputs;  // queries x scalars
  double seconds = 0.0;
  std::uint64_t activations = 0;
  /// Forward passes per network, indexed like SurrogateModel::networks.
  std::vector<std::uint64_t> network_evaluations;
};

/// Batched evaluation; outputs are bitwise identical to per-query calls.
BatchResult surrogate_eval_batch(const SurrogateModel& model, const RowMatrix& queries,
                                 const BatchOptions& options = {});

/// Cluster chosen for a raw query (after clamping and normalization).
std::size_t surrogate_route(const SurrogateModel& model, std::span<const double> query);

// ---------------------------------------------------------------------------
// Serialization

std::vector<std::uint8_t> serialize_model(const SurrogateModel& model,
                                          ValuePrecision precision = ValuePrecision::f64);
SurrogateModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const SurrogateModel& model, const std::filesystem::path& path,
                ValuePrecision precision = ValuePrecision::f64);
SurrogateModel load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Storage accounting

struct MemoryReport {
  std::size_t model_bytes = 0;
  std::size_t table_bytes = 0;
  double ratio = 0.0;  // table_bytes / model_bytes
  std::size_t parameter_count = 0;
};

/// Published storage figures for a 1.62M-point, 24-scalar table against a
/// 4-cluster, two-hidden-layer network ensemble (megabytes).
inline constexpr double kPublishedModelMegabytes = 0.261;
inline constexpr double kPublishedTableMegabytes = 500.0;

MemoryReport memory_report(const SurrogateModel& model, const GridTable& table,
                           ValuePrecision precision = ValuePrecision::f64);

/// Human-readable summary including the published reference ratio.
std::string format_memory_report(const MemoryReport& r);

}  // namespace smlp
