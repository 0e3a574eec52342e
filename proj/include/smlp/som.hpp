#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "smlp/common.hpp"
#include "smlp/table.hpp"

namespace smlp {

/// Node lattice. A 1D lattice has rows == 1.
struct SomTopology {
  std::size_t rows = 1;
  std::size_t cols = 1;

  static SomTopology line(std::size_t n) { return {1, n}; }
  static SomTopology grid(std::size_t r, std::size_t c) { return {r, c}; }

  std::size_t nodes() const { return rows * cols; }
  bool is_2d() const { return rows > 1 && cols > 1; }
  /// Half the lattice diameter (the initial neighborhood radius).
  double half_diameter() const;

  bool operator==(const SomTopology&) const = default;
};

struct SomTrainParams {
  std::size_t epochs = 40;
  double learning_rate_start = 0.5;
  double learning_rate_end = 0.02;
  /// Fraction of epochs over which the neighborhood radius shrinks to zero.
  double ordered_fraction = 0.75;
  std::uint64_t seed = 1;
  bool shuffle = true;
  /// Remove nodes that win no training point.
  bool prune_empty = true;
};

/// Trained Kohonen map. Node weights live in normalized input space.
struct SomMap {
  SomTopology topology;
  std::size_t dims = 0;
  RowMatrix weights;  // num_clusters x dims
  bool trained = false;

  std::size_t num_clusters() const { return weights.rows; }
  std::span<const double> node(std::size_t j) const { return weights.row(j); }

  bool operator==(const SomMap&) const = default;
};

/// Per-epoch diagnostics from som_train.
struct SomTrainTrace {
  /// Mean distance from each point to its winning node, measured at the end of
  /// every epoch (index 0 is before the first epoch).
  std::vector<double> quantization_error;
  std::size_t ordered_epochs = 0;
  std::size_t pruned_nodes = 0;
};

SomMap som_train(const RowMatrix& points, SomTopology topology, const SomTrainParams& params,
                 SomTrainTrace* trace = nullptr);

/// Nearest node by Euclidean distance; ties go to the lowest index.
std::size_t som_assign(const SomMap& map, std::span<const double> query);

/// The two nearest nodes and their Euclidean distances (first is the winner).
struct NearestTwo {
  std::size_t first = 0;
  std::size_t second = 0;
  double first_distance = 0.0;
  double second_distance = 0.0;
};
NearestTwo som_nearest_two(const SomMap& map, std::span<const double> query);

std::vector<std::size_t> som_assign_all(const SomMap& map, const RowMatrix& points);

double quantization_error(const SomMap& map, const RowMatrix& points);

/// Recommended cluster count for a table size: 4 up to ~1.6M points, growing
/// proportionally beyond.
std::size_t default_cluster_count(std::size_t num_points);

// ---------------------------------------------------------------------------
// Scalar grouping

struct ScalarGrouping {
  std::vector<std::vector<std::size_t>> groups;

  std::size_t num_groups() const { return groups.size(); }
  std::size_t num_scalars() const;
  /// Throws ConfigError unless groups partition [0, num_scalars).
  void validate(std::size_t num_scalars) const;

  static ScalarGrouping singletons(std::size_t num_scalars);
  static ScalarGrouping single(std::size_t num_scalars);

  bool operator==(const ScalarGrouping&) const = default;
};

struct GroupingParams {
  std::size_t sample_points = 256;
  SomTrainParams som{.epochs = 200};
};

/// Standardized per-scalar profiles sampled at a fixed quasi-random point set.
RowMatrix scalar_features(const GridTable& table, std::size_t sample_points);

ScalarGrouping group_scalars(const GridTable& table, std::size_t num_groups,
                             const GroupingParams& params = {});

}  // namespace smlp
