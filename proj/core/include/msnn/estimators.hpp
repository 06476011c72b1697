#pragma once

// Synthetic nearest neighbour entry estimators: strict SNN and the mixed
// variant (MSNN) that borrows anchor columns observed under other levels.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msnn/anchors.hpp"
#include "msnn/panel.hpp"
#include "msnn/spectral.hpp"

namespace msnn {

enum class WeightSource { kOracle, kEstimated, kUnit };

std::string to_string(WeightSource source);
WeightSource parse_weight_source(const std::string& text);

// Positive per-level multipliers applied to anchor columns by treatment level.
struct WeightFunction {
  std::vector<double> by_level;  // index = level; slot 0 unused
  WeightSource source = WeightSource::kUnit;
  std::vector<std::string> warnings;

  bool covers(int level) const noexcept {
    return level >= 1 && static_cast<std::size_t>(level) < by_level.size();
  }
  // Throws ConfigError when `level` has no weight.
  double at(int level) const;
};

// w(d) = 1 / max |Y_ij| over entries observed at d; levels without data or
// with an all-zero maximum fall back to 1 and add a warning.
WeightFunction estimate_weights(const ObservedPanel& panel);
// w(d) = 1 / f(d) from known level scales (scales[0] is level 1).
WeightFunction oracle_weights(std::span<const double> scales);
WeightFunction unit_weights(int levels);

struct FeasibilityPolicy {
  double x_residual_tol = 0.1;
  double q_residual_tol = 0.1;
  std::size_t min_rows = 2;
  std::size_t min_cols = 2;
  // A fixed rank larger than the anchor supports leaves the subspace tests
  // vacuous; such subgroups are rejected.
  bool reject_clipped_rank = true;

  void validate() const;
};

struct FeasibilityVerdict {
  bool pass = false;
  double residual_x = 0.0;
  double residual_q = 0.0;
  std::size_t lambda_used = 0;
  bool clipped = false;
};

// x must lie near the column space and q near the row space of the rank-
// truncated S, and S must meet the minimum shape.
FeasibilityVerdict feasibility_check(const Eigen::MatrixXd& s_w, const Eigen::VectorXd& q_w,
                                     const Eigen::VectorXd& x, const RankRule& rule, const FeasibilityPolicy& policy);

struct SubgroupDiagnostics {
  std::size_t anchor_rows = 0;
  std::size_t anchor_cols = 0;
  std::size_t lambda_used = 0;
  double residual_x = 0.0;
  double residual_q = 0.0;
  double condition_number = 0.0;
  bool passed = false;
  double estimate = 0.0;
  Eigen::VectorXd beta;
  // Plug-in noise sd of the target-level entries; NaN when the fit leaves no
  // residual degrees of freedom.
  double noise_sd = 0.0;
  // noise_sd * ||beta||, the subgroup's standard error contribution.
  double sigma_tilde = 0.0;
};

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

struct EstimateRecord {
  EntryQuery query;
  AnchorMode mode = AnchorMode::kMixed;
  std::optional<double> estimate;
  std::size_t k_used = 0;
  std::vector<SubgroupDiagnostics> subgroups;
  std::optional<ConfidenceInterval> ci;
  std::string reason;  // why the entry is infeasible, or a note on how it was obtained

  bool feasible() const noexcept { return estimate.has_value(); }
};

// Plan must be strict. Subgroups failing feasibility are dropped; the
// estimate is the mean over the rest, or absent when none pass.
EstimateRecord snn_estimate(const ObservedPanel& panel, const EntryQuery& query, const SubgroupPlan& plan,
                            const RankRule& rule, const FeasibilityPolicy& policy);

// Plan must be mixed; anchor cells and q are scaled by w(d(b)), x is not.
EstimateRecord msnn_estimate(const ObservedPanel& panel, const EntryQuery& query, const SubgroupPlan& plan,
                             const WeightFunction& weights, const RankRule& rule, const FeasibilityPolicy& policy);

// estimate +/- z * sqrt(sum sigma_k^2) / K. Needs at least two subgroups.
std::optional<ConfidenceInterval> plugin_ci(double estimate, std::span<const double> sigma_tilde, double level);
std::optional<ConfidenceInterval> plugin_ci(const EstimateRecord& record, double level);

// Two-sided standard normal quantile for a confidence level.
double normal_critical_value(double level);

enum class Estimator { kSnn, kMsnn };

std::string to_string(Estimator estimator);

struct PipelineOptions {
  std::size_t k = 1;
  RankRule rule = RankRule::gap(0.1);
  FeasibilityPolicy policy;
  BicliqueOptions biclique;
  double ci_level = 0.95;
  // When the mixed anchor fails, MSNN retries on the strict anchor (which is
  // also a valid mixed anchor), so it is feasible whenever SNN is.
  bool strict_fallback = true;
};

// Indicator -> biclique -> subgroups -> estimate for one target.
EstimateRecord estimate_entry(const ObservedPanel& panel, const EntryQuery& query, Estimator estimator,
                              const WeightFunction& weights, const PipelineOptions& options,
                              std::uint64_t partition_seed);

}  // namespace msnn
