#pragma once

// Replicated simulation studies, estimation on external panels and report
// files (metrics, wide table, per-entry estimates, run manifest).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msnn/config.hpp"
#include "msnn/estimators.hpp"
#include "msnn/panel.hpp"

namespace msnn {

// One estimated entry, flattened for reporting.
struct EntryResult {
  std::size_t replicate = 0;
  Estimator estimator = Estimator::kMsnn;
  EntryQuery query;
  int observed_level = 0;  // D_ij of the target entry
  std::optional<double> estimate;
  std::optional<double> truth;                // simulation only
  std::optional<double> relative_error;       // |estimate - truth| / |truth|
  std::optional<double> observed;             // observed outcome when D_ij == level
  std::optional<double> validation_residual;  // |estimate - observed| / |observed|
  std::size_t k_used = 0;
  std::size_t anchor_rows = 0;
  std::size_t anchor_cols = 0;
  std::size_t lambda_used = 0;
  double residual_x = 0.0;
  double residual_q = 0.0;
  double condition_number = 0.0;
  std::optional<ConfidenceInterval> ci;
  std::string reason;

  bool feasible() const noexcept { return estimate.has_value(); }
};

// Per (replicate, estimator, level) counts from which metrics are computed.
struct ReplicateTally {
  std::size_t replicate = 0;
  Estimator estimator = Estimator::kMsnn;
  int level = 1;
  std::size_t entries = 0;
  std::size_t feasible = 0;
  std::size_t scored = 0;           // feasible entries with a nonzero truth
  long double relative_error_sum = 0.0L;
  double proportion = 0.0;          // observed fraction of the level
};

struct MetricsRow {
  Estimator estimator = Estimator::kMsnn;
  int level = 1;
  std::size_t replicates = 0;
  double fr_mean = 0.0;  // percent
  double fr_std = 0.0;
  double mre_mean = 0.0;  // over replicates with at least one scored entry; NaN if none
  double mre_std = 0.0;
  std::size_t mre_replicates = 0;
  double proportion_mean = 0.0;  // percent of entries observed at the level
  double proportion_std = 0.0;
};

struct StudyResult {
  std::vector<MetricsRow> metrics;
  std::vector<ReplicateTally> tallies;
  std::vector<EntryResult> dump;  // empty unless config.dump_estimates
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
};

// Mean and sample standard deviation across replicates, in (estimator, level)
// order of first appearance in `tallies`.
std::vector<MetricsRow> aggregate_metrics(const std::vector<ReplicateTally>& tallies);

// Generates a model and panel per replicate, runs every selected estimator
// on every entry at each target level and scores against the ground truth.
// Identical configs give bit-identical results regardless of thread count.
StudyResult run_simulation_study(const ExperimentConfig& config);

enum class TargetSelection { kAllMissing, kAll };

// Every entry at each level (kAll) or only those with D_ij == 0 (kAllMissing).
std::vector<EntryQuery> select_targets(const ObservedPanel& panel, TargetSelection selection,
                                       const std::vector<int>& levels);

// Parses "row:col:level" triples separated by ';' using the panel's ids.
std::vector<EntryQuery> parse_targets(const ObservedPanel& panel, const std::string& text);

// Estimates the given targets on an observed panel. Oracle weights are
// rejected with ConfigError since no ground truth exists.
StudyResult run_real_panel(const ObservedPanel& panel, const std::vector<EntryQuery>& targets,
                           const ExperimentConfig& config);
StudyResult run_real_panel(const std::string& panel_path, TargetSelection selection, const ExperimentConfig& config);

// Writes metrics.csv, table.csv, estimates.csv (when the dump is non-empty or
// dumping is enabled), ids.csv and manifest.cfg into `dir`, creating it.
void emit_report(const StudyResult& result, const ExperimentConfig& config, const std::string& dir);

// Rebuilds metrics.csv and table.csv in `dir` from its estimates.csv.
std::vector<MetricsRow> rerender_report(const std::string& dir);

// Individual writers, exposed for tests and tooling.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string table_csv(const std::vector<MetricsRow>& rows);
std::string estimates_csv_header();

}  // namespace msnn
