#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "masklab/baselines.hpp"
#include "masklab/config.hpp"
#include "masklab/dataset.hpp"
#include "masklab/masking.hpp"
#include "masklab/metrics.hpp"

namespace masklab {

inline constexpr const char* kReportSchema = "masklab-report/1";

/// One (method, seed) cell of the comparison grid.
struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double test_accuracy = 0.0;
  std::optional<TransitionMatrix> estimate;
  std::optional<double> transition_error;
  std::optional<StructureScore> structure;
  bool degenerate_estimate = false;
  double wall_clock_s = 0.0;
  std::string curve_csv;
};

/// The dataset a seed's cells share: synthetic features with labels corrupted
/// by the configured structure.
LabeledDataset experiment_dataset(const RunConfig& cfg, std::uint64_t seed);

CellResult run_cell(const RunConfig& cfg, const std::string& method, std::uint64_t seed);

struct ComparisonOptions {
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> curves_dir;
};

/// Runs every (seed, method) cell and assembles the report. Failed cells are
/// marked and excluded from aggregates. Only keys named "wall_clock_s" vary
/// between identical runs.
nlohmann::json run_comparison(const RunConfig& cfg, const ComparisonOptions& options = {});

/// Copy of a report with every "wall_clock_s" field removed.
nlohmann::json strip_timing(const nlohmann::json& report);

std::string curve_csv(const std::vector<CurvePoint>& curve);
std::string masking_log_csv(const std::vector<MaskingLogRow>& log);

nlohmann::json environment_stamp();

}  // namespace masklab
