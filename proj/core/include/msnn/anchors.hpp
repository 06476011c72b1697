#pragma once

// Anchor discovery: which entries may join the regression block for a target
// (i, j, d), the largest all-ones block among them, and its split into
// row-disjoint subgroups.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msnn/panel.hpp"

namespace msnn {

enum class AnchorMode {
  kStrict,  // SNN: every anchor cell, x and q at the target level
  kMixed,   // MSNN: each anchor column may carry its own non-zero level
};

std::string to_string(AnchorMode mode);

// Usability indicator B for one target. Stored column-wise as bit masks over
// the candidate rows (rows a != i with D_aj = d); entries outside the
// candidate rows/columns are zero.
class IndicatorMatrix {
 public:
  // B_ab = 1{D_ab = D_ib != 0, D_aj = d, a != i, b != j}; strict mode further
  // requires D_ib = d.
  static IndicatorMatrix build(const ObservedPanel& panel, const EntryQuery& query, AnchorMode mode);
  // Arbitrary 0/1 matrix given row-major; used for search tests.
  static IndicatorMatrix from_dense(std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& bits);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool at(std::size_t a, std::size_t b) const;
  std::size_t ones() const noexcept;
  std::vector<std::uint8_t> to_dense() const;

  const std::optional<EntryQuery>& target() const noexcept { return target_; }
  AnchorMode mode() const noexcept { return mode_; }

  const std::vector<std::size_t>& candidate_rows() const noexcept { return cand_rows_; }
  const std::vector<std::size_t>& candidate_cols() const noexcept { return cand_cols_; }
  std::size_t words() const noexcept { return words_; }
  // Bit t of the returned words is set when candidate row t is a one in
  // candidate column k.
  const std::uint64_t* column_mask(std::size_t k) const noexcept { return masks_.data() + k * words_; }

 private:
  void reserve_layout(std::size_t candidate_rows);

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::optional<EntryQuery> target_;
  AnchorMode mode_ = AnchorMode::kMixed;
  std::vector<std::size_t> cand_rows_;
  std::vector<std::size_t> cand_cols_;
  std::vector<std::size_t> row_slot_;  // panel row -> candidate slot, or npos
  std::size_t words_ = 0;
  std::vector<std::uint64_t> masks_;
};

struct Biclique {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  std::size_t area() const noexcept { return rows.size() * cols.size(); }
};

enum class BicliqueSearch {
  kExact,   // maximum area over closed bicliques
  kGreedy,  // column-seeded greedy; returns a maximal biclique
};

struct BicliqueOptions {
  std::size_t min_rows = 2;
  std::size_t min_cols = 2;
  BicliqueSearch mode = BicliqueSearch::kGreedy;
  // Exact mode gives up with BudgetError once it has generated this many
  // distinct closed row sets.
  std::size_t budget = 1'000'000;
};

// All-ones submatrix of `b` with at least min_rows x min_cols cells, or
// nullopt when none exists. Ties on area prefer more rows.
std::optional<Biclique> max_biclique(const IndicatorMatrix& b, const BicliqueOptions& options);

// Mixed/strict anchor rows (MAR) and columns (MAC) for one target.
struct AnchorSet {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  std::vector<int> col_levels;  // d(b) = D_ib for each anchor column
  AnchorMode mode = AnchorMode::kMixed;
};

// Checks the treatment conditions of `rows` x `cols` against the panel.
bool is_valid_anchor(const ObservedPanel& panel, const EntryQuery& query, const std::vector<std::size_t>& rows,
                     const std::vector<std::size_t>& cols, AnchorMode mode);

// Throws DomainError when the biclique violates the treatment conditions.
AnchorSet make_anchor_set(const ObservedPanel& panel, const EntryQuery& query, const Biclique& biclique,
                          AnchorMode mode);

// Indicator, search and validation in one call.
std::optional<AnchorSet> find_anchor(const ObservedPanel& panel, const EntryQuery& query, AnchorMode mode,
                                     const BicliqueOptions& options);

struct SubgroupPlan {
  std::vector<AnchorSet> subgroups;  // shared columns, pairwise-disjoint rows
  std::uint64_t seed = 0;
  AnchorMode mode() const noexcept { return subgroups.empty() ? AnchorMode::kMixed : subgroups.front().mode; }
};

// Shuffles the anchor rows with `seed` and deals them into `k` groups whose
// sizes differ by at most one. Throws InfeasibleError when k > |rows| and
// UsageError when k == 0.
SubgroupPlan partition_subgroups(const AnchorSet& anchor, std::size_t k, std::uint64_t seed);

}  // namespace msnn
