#pragma once

// Expected anchor counts under MCAR assignment: closed forms, exact counting
// on a realised assignment, exhaustive enumeration over all assignments of a
// tiny grid, and Monte-Carlo estimates.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msnn/estimators.hpp"
#include "msnn/panel.hpp"

namespace msnn {

// Anchor shape (r rows, c columns) on an m x n grid with MCAR level
// probabilities `p` (p[0] is level 1; P(D = 0) = 1 - sum p) and target level.
struct TheoryInstance {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t r = 1;
  std::size_t c = 1;
  std::vector<double> p;
  int level = 1;

  // Throws DomainError unless 1 <= r <= m-1, 1 <= c <= n-1, every p_d >= 0
  // with at least one positive, sum p <= 1 and the level is in range.
  void validate() const;
  double p_target() const { return p[static_cast<std::size_t>(level - 1)]; }
  double p_max() const;
  int level_of_max() const;
};

// sum_d (p_d / p_max)^(r+1); at least 1.
double gamma(std::span<const double> p, std::size_t r);

struct ClosedForm {
  long double log_value = 0.0L;  // natural log of the expectation
  double value = 0.0;            // exp(log_value), +inf on overflow
  bool overflow = false;
};

// E[K'] for the estimator: C(m-1,r) C(n-1,c) p_d^(rc+r+c) for SNN and
// C(m-1,r) C(n-1,c) gamma^c p_d^r p_max^((r+1)c) for MSNN.
ClosedForm expected_k_closed_form(const TheoryInstance& inst, Estimator estimator);

struct EfficiencyRatios {
  double msnn_over_snn = 1.0;          // [sum_d' (p_d'/p_d)^(r+1)]^c
  double snn_d_over_msnn_dmax = 1.0;   // gamma^-c (p_d/p_max)^(rc+r+c)
  double msnn_d_over_msnn_dmax = 1.0;  // (p_d/p_max)^r
};
EfficiencyRatios efficiency_ratios(const TheoryInstance& inst);

// Sparsity regime under which the closed forms are tight, for one alpha:
// row_term = m r p_d p_max^(alpha c), col_term = n c gamma p_max^((1-alpha) r + 1 + alpha).
struct SparsityCheck {
  double alpha = 0.0;
  double row_term = 0.0;
  double col_term = 0.0;
  bool satisfied = false;  // both terms <= 1
};
std::vector<SparsityCheck> sparsity_conditions(const TheoryInstance& inst);

struct AnchorCounts {
  std::uint64_t k_prime = 0;    // valid (rows, cols) index pairs of the given shape
  double k_pair = 0.0;          // unordered valid pairs whose row sets intersect
  std::optional<std::uint64_t> k_independent;  // largest family with disjoint row sets
  std::size_t valid_row_sets = 0;
};

// Exhaustive counts for target (query.row, query.col, query.level). Throws
// BudgetError when C(m-1,r) C(n-1,c) exceeds `budget`.
AnchorCounts count_anchors_exact(const TreatmentGrid& grid, const EntryQuery& query, std::size_t r, std::size_t c,
                                 Estimator estimator, std::size_t budget = 1'000'000);

// Target (0, 0, inst.level) with shape (inst.r, inst.c).
AnchorCounts count_anchors_exact(const TheoryInstance& inst, const TreatmentGrid& grid, Estimator estimator,
                                 std::size_t budget = 1'000'000);

// Same counts but only K' and K^p, bounded by the number of candidate row
// subsets rather than the full pair space; for grids too large for the above.
AnchorCounts count_valid_anchors(const TreatmentGrid& grid, const EntryQuery& query, std::size_t r, std::size_t c,
                                 Estimator estimator, std::size_t budget = 10'000'000);

struct Moment {
  double mean = 0.0;
  double se = 0.0;
};

struct CountReport {
  Estimator estimator = Estimator::kMsnn;
  std::string method;  // "exact-enum" or "monte-carlo"
  std::size_t replicates = 0;
  double closed_form = 0.0;
  Moment k_prime;
  Moment k_pair;
  Moment k_geq_1;
  std::optional<Moment> k_independent;
  // E[K]/max K <= P(K >= 1) <= E[K], with 3 SE slack for Monte-Carlo.
  std::optional<bool> probability_sandwich_ok;
  // E[K'] / (1 + 2 E[K^p] / E[K']) <= E[K] <= E[K'], with 3 SE slack.
  std::optional<bool> independence_sandwich_ok;
};

struct CountComparison {
  TheoryInstance instance;
  CountReport snn;
  CountReport msnn;
  Moment k_prime_ratio;  // E[K'_MSNN] / E[K'_SNN], delta-method SE on paired draws
  double ratio_closed_form = 0.0;
};

// Monte-Carlo over i.i.d. MCAR draws with target (0, 0, inst.level). Uses the
// full counts (including K_independent) when the instance fits `budget`,
// otherwise only K' and K^p on lazily drawn rows.
CountComparison monte_carlo_expectations(const TheoryInstance& inst, std::size_t replicates, std::uint64_t seed,
                                         std::size_t budget = 1'000'000);

// Exact expectations by enumerating every assignment of the m x n grid.
// Throws BudgetError when (levels + 1)^(m n) exceeds `max_grids`.
CountComparison exact_expectations(const TheoryInstance& inst, std::size_t max_grids = 2'000'000);

// One MCAR draw of the full grid, consistent with the Monte-Carlo streams.
TreatmentGrid sample_mcar_grid(const TheoryInstance& inst, std::uint64_t seed, std::size_t replicate);

std::string count_report_csv_header();
std::string count_report_csv_row(const CountComparison& cmp);

}  // namespace msnn
