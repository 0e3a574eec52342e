#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "smlp/config.hpp"
#include "smlp/model.hpp"
#include "smlp/table.hpp"

namespace smlp {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitBestEffort = 3,
  kExitInternal = 4,
};

/// Uniform random queries inside the table bounds.
RowMatrix sample_queries(const GridTable& table, std::size_t count, std::uint64_t seed);

struct ScalarAccuracy {
  std::string name;
  double rmse = 0.0;
  double max_error = 0.0;
  double l2_relative = 0.0;  // ||pred - ref||_2 / ||ref||_2
  double pass_rate = 0.0;
};

/// Surrogate against the multilinear baseline at random in-bounds queries.
struct AccuracySummary {
  std::vector<ScalarAccuracy> scalars;
  double pass_rate = 0.0;  // point-level: all scalars within tolerance
  std::size_t queries = 0;
  double surrogate_seconds = 0.0;
  double baseline_seconds = 0.0;
};

AccuracySummary evaluate_accuracy(const SurrogateModel& model, const GridTable& table,
                                  std::size_t queries, std::uint64_t seed);

/// Loads cfg.table_path, or generates cfg.synthetic when no path is given.
GridTable resolve_table(const RunConfig& cfg);

int cmd_generate(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_bench(const RunConfig& cfg, std::ostream& out);
int cmd_report(const std::filesystem::path& report, const RunConfig& cfg, std::ostream& out);

/// Parses arguments, dispatches, and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace smlp
