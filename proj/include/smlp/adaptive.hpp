#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smlp/mlp.hpp"
#include "smlp/model.hpp"
#include "smlp/som.hpp"
#include "smlp/table.hpp"

namespace smlp {

/// Neuron-growth search over hidden-layer widths for a fixed layer count.
struct AdaptivePolicy {
  std::size_t hidden_layers = 2;
  std::size_t initial_width = 6;
  std::size_t width_increment = 3;
  std::size_t max_width = 64;
  /// Width of layer l is round(ratio[l] * first width). Empty: default_ratios.
  std::vector<double> layer_ratios;
  Activation activation = Activation::tanh;
  double checkpoint_fraction = 0.1;
  double checkpoint_threshold = 0.5;
  double train_fraction = 0.6;
  SgdParams sgd;

  /// (1, 0.5) for two hidden layers, otherwise a prefix of
  /// (1, 0.75, 0.5, 0.5, 0.25, 0.25).
  static std::vector<double> default_ratios(std::size_t hidden_layers);

  std::vector<double> ratios() const;
  std::size_t checkpoint_iteration() const;
  void validate() const;
  std::uint64_t digest() const;
};

/// Hidden widths at growth step k, or nullopt once the cap is exhausted.
std::optional<std::vector<std::size_t>> grow_architecture(const AdaptivePolicy& policy,
                                                          std::size_t step);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded random partition of [0, n). A single point is used for both sets.
Split split_train_test(std::size_t n, double train_fraction, std::uint64_t seed);

SupervisedSet subset(const SupervisedSet& data, const std::vector<std::size_t>& rows);

struct AttemptRecord {
  std::vector<std::size_t> widths;
  TrainOutcome outcome;
  bool diverged = false;
};

struct JobRecord {
  std::size_t cluster = 0;
  std::size_t group = 0;
  std::vector<std::string> scalar_names;
  std::vector<std::size_t> widths;
  bool converged = false;
  std::size_t iterations = 0;  // summed over attempts
  double seconds = 0.0;
  double pass_rate = 0.0;     // held-out pass rate of the returned network
  std::vector<double> rmse;   // held-out RMSE per scalar, raw units
  std::size_t train_points = 0;
  std::size_t test_points = 0;
  std::vector<AttemptRecord> attempts;

  std::string outcome() const { return converged ? "converged" : "best_effort"; }
};

struct JobResult {
  MlpNetwork network;
  JobRecord record;
};

/// Grows architectures until one reaches a 100% held-out pass rate; returns the
/// best network seen if the width cap is reached first. `data` holds normalized
/// inputs and raw targets of one cluster restricted to one scalar group.
JobResult adaptive_train_job(const SupervisedSet& data, const TargetSpace& space,
                             const AdaptivePolicy& policy, std::uint64_t split_seed,
                             std::uint64_t network_seed);

struct TrainingReport {
  std::vector<JobRecord> jobs;  // cluster-major
  double wall_seconds = 0.0;
  std::size_t parallelism = 1;

  bool all_converged() const;
  std::size_t total_hidden_neurons() const;
  double total_job_seconds() const;

  static constexpr std::string_view kCsvHeader =
      "cluster,group,architecture,outcome,iterations,seconds,pass_rate,rmse";
  std::string to_csv() const;
  static TrainingReport from_csv(std::string_view text);
};

/// Everything train_all needs besides the table.
struct TrainSetup {
  std::size_t clusters = 4;
  SomTrainParams som;
  ScalarGrouping grouping;
  double tau_r = 0.04;
  double tau_a_multiplier = 1e-3;
  /// When set, every scalar uses this absolute tolerance instead of the
  /// multiplier.
  std::optional<double> tau_a_absolute;
  AdaptivePolicy policy;
  BlendConfig blend;
  std::size_t parallelism = 1;
  std::uint64_t seed = 1;
};

/// Per-scalar absolute tolerance: multiplier * max |phi|.
std::vector<ToleranceSpec> scalar_tolerances(const GridTable& table, double tau_a_multiplier,
                                             double tau_r);

using ProgressFn = std::function<void(const JobRecord&)>;

/// Runs all (cluster, group) jobs for a trained SOM and grouping.
struct TrainResult {
  SurrogateModel model;
  TrainingReport report;
};

TrainResult train_all(const GridTable& table, const SomMap& som, const ScalarGrouping& grouping,
                      const TrainSetup& setup, const ProgressFn& progress = {});

/// Full pipeline: normalize, SOM, train_all (grouping taken from setup).
TrainResult train_surrogate(const GridTable& table, const TrainSetup& setup,
                            const ProgressFn& progress = {});

/// Seeds used by train_all for one job, exposed for isolated retraining.
std::uint64_t job_split_seed(std::uint64_t seed, std::size_t cluster);
std::uint64_t job_network_seed(std::uint64_t seed, std::size_t cluster, std::size_t group);

/// Cluster data for one job, as train_all builds it.
SupervisedSet job_data(const GridTable& table, const NormalizedPoints& points,
                       const std::vector<std::size_t>& members,
                       const std::vector<std::size_t>& scalars);

}  // namespace smlp
