#pragma once

// Synthetic ground truth with shared row factors across treatment levels,
// plus MCAR and softmax-MNAR treatment assignment.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msnn/panel.hpp"

namespace msnn {

// A^(d) = U V^(d)^T with U shared by every level. Levels are 1-based in the
// accessors; `scales[d - 1]` is f(d).
struct LatentModel {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t rank = 0;
  Eigen::MatrixXd u;                 // m x rank, unit-norm rows
  std::vector<Eigen::MatrixXd> v;    // per level, n x rank
  std::vector<Eigen::MatrixXd> mean; // per level, m x n (absolute values when abs_outcomes)
  std::vector<double> scales;
  double sigma_rel = 0.0;
  bool abs_outcomes = false;

  int levels() const noexcept { return static_cast<int>(scales.size()); }
  double expected(std::size_t i, std::size_t j, int level) const { return mean[static_cast<std::size_t>(level - 1)](i, j); }
  double noise_sd(int level) const { return sigma_rel * scales[static_cast<std::size_t>(level - 1)]; }
};

// Latent entries are i.i.d. standard normal; U rows are normalised and each
// row of V^(d) is rescaled so that column j of A^(d) peaks at exactly f(d)
// in absolute value. Throws DomainError for rank > min(m, n), non-positive
// dimensions or scales, or a negative noise level.
LatentModel generate_model(std::size_t m, std::size_t n, std::size_t rank, std::vector<double> scales,
                           double sigma_rel, std::uint64_t seed, bool abs_outcomes = false);

struct AssignedPanel {
  TreatmentGrid treatments;
  ObservedPanel panel;
};

// `probabilities[0]` is P(D = 0), `probabilities[d]` is P(D = d); they must
// be non-negative and sum to 1. Noise defaults to a stream derived from `seed`.
AssignedPanel assign_mcar(const LatentModel& model, std::span<const double> probabilities, std::uint64_t seed,
                          std::optional<std::uint64_t> noise_seed = std::nullopt);

// P(D_ij = d) proportional to exp(lambda * A_ij^(d)) over d >= 1. The model
// must use absolute outcomes. `p0_thinning` first hides each entry with that
// probability (default 0: every entry is observed at some level).
AssignedPanel assign_mnar_softmax(const LatentModel& model, double lambda, std::uint64_t seed,
                                  std::optional<std::uint64_t> noise_seed = std::nullopt, double p0_thinning = 0.0);

// Builds the observed panel for a given assignment.
ObservedPanel observe(const LatentModel& model, const TreatmentGrid& treatments, std::uint64_t noise_seed);

// Sidecar `row_id,col_id,treatment,A_value` with one line per entry and level.
void write_ground_truth_csv(const LatentModel& model, const std::string& path);

// Reads a ground-truth sidecar back into per-level m x n matrices (index level-1).
std::vector<Eigen::MatrixXd> load_ground_truth_csv(const std::string& path, std::size_t m, std::size_t n, int levels);

}  // namespace msnn
