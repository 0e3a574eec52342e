#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smlp/adaptive.hpp"
#include "smlp/model.hpp"
#include "smlp/table.hpp"

namespace smlp {

/// Sweep axes for the bench command.
struct BenchSweep {
  std::vector<std::size_t> layers{2, 3, 4, 5, 6};
  std::vector<std::size_t> clusters{1, 4, 8, 15, 20, 30};
  std::vector<bool> grouping{true, false};
};

/// Declarative run configuration: a JSON file with command-line overrides.
struct RunConfig {
  std::filesystem::path table_path;
  SyntheticSpec synthetic{"gauss-bumps", {20, 10, 10}, 8, 1};
  std::filesystem::path model_path;
  std::filesystem::path out_path;

  std::size_t clusters = 4;
  /// Unset: derived from the scalar count. 0: one network per scalar.
  std::optional<std::size_t> groups;
  double tau_r = 0.04;
  double tau_a_multiplier = 1e-3;
  std::optional<double> tau_a_absolute;
  AdaptivePolicy policy;
  std::size_t som_epochs = 40;
  BlendConfig blend;
  std::size_t parallelism = 1;
  std::uint64_t seed = 1;
  std::size_t queries = 100000;
  bool force = false;
  BenchSweep sweep;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses a JSON config. Unknown keys are rejected.
RunConfig parse_config_json(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Default group count for a scalar count: round(9/24 of the scalars), at least 1.
std::size_t default_group_count(std::size_t num_scalars);

/// Parallelism after the SMLP_THREADS cap.
std::size_t effective_parallelism(std::size_t requested);

/// Builds the train setup for a table from a run config (computes the scalar
/// grouping).
TrainSetup make_train_setup(const RunConfig& cfg, const GridTable& table);

}  // namespace smlp
