#pragma once

// Observation model: per-entry treatment labels and the single outcome
// observed under that label. Label 0 means the entry was not exposed and its
// outcome is absent.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace msnn {

inline constexpr int kMaxLevels = 255;

// Target of a single estimation: entry (row, col) under treatment `level` >= 1.
struct EntryQuery {
  std::size_t row = 0;
  std::size_t col = 0;
  int level = 1;

  friend bool operator==(const EntryQuery&, const EntryQuery&) = default;
};

// Dense m x n grid of treatment labels in {0, ..., levels}.
class TreatmentGrid {
 public:
  TreatmentGrid() = default;
  TreatmentGrid(std::size_t rows, std::size_t cols, int levels);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int levels() const noexcept { return levels_; }

  int at(std::size_t i, std::size_t j) const noexcept { return labels_[i * cols_ + j]; }
  // Throws DomainError when `label` is outside {0, ..., levels}.
  void set(std::size_t i, std::size_t j, int label);

  const std::uint8_t* row_data(std::size_t i) const noexcept { return labels_.data() + i * cols_; }

  friend bool operator==(const TreatmentGrid&, const TreatmentGrid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int levels_ = 0;
  std::vector<std::uint8_t> labels_;
};

// How outcome() treats entries with label 0.
enum class MissingOutcomes {
  kAbsent,          // querying them is an error
  kStructuralZero,  // they read as 0.0
};

// Immutable after construction; build through PanelBuilder or load_panel_csv.
class ObservedPanel {
 public:
  ObservedPanel() = default;

  std::size_t rows() const noexcept { return grid_.rows(); }
  std::size_t cols() const noexcept { return grid_.cols(); }
  int levels() const noexcept { return grid_.levels(); }

  int treatment(std::size_t i, std::size_t j) const noexcept { return grid_.at(i, j); }
  bool observed(std::size_t i, std::size_t j) const noexcept { return grid_.at(i, j) != 0; }
  const TreatmentGrid& treatments() const noexcept { return grid_; }

  // Throws MissingEntryError for an unobserved entry unless the panel uses
  // the structural-zero convention.
  double outcome(std::size_t i, std::size_t j) const;
  // Unchecked read for hot loops; 0.0 at unobserved entries.
  double raw_outcome(std::size_t i, std::size_t j) const noexcept {
    return outcomes_[i * cols() + j];
  }

  std::size_t observed_count() const noexcept;

  const std::vector<std::string>& row_ids() const noexcept { return row_ids_; }
  const std::vector<std::string>& col_ids() const noexcept { return col_ids_; }

  MissingOutcomes missing_convention() const noexcept { return convention_; }
  ObservedPanel with_missing_convention(MissingOutcomes convention) const;

  // Throws DomainError when indices are out of range or level is not in {1..levels}.
  void check_query(const EntryQuery& query) const;

 private:
  friend class PanelBuilder;

  TreatmentGrid grid_;
  std::vector<double> outcomes_;
  std::vector<std::string> row_ids_;
  std::vector<std::string> col_ids_;
  MissingOutcomes convention_ = MissingOutcomes::kAbsent;
};

class PanelBuilder {
 public:
  PanelBuilder(std::size_t rows, std::size_t cols, int levels);

  // Records outcome `value` observed under `level` >= 1. Throws ConflictError
  // when the entry was already set and DomainError for a bad level.
  PanelBuilder& observe(std::size_t i, std::size_t j, int level, double value);
  // Explicitly records an unexposed entry (equivalent to never setting it).
  PanelBuilder& mark_missing(std::size_t i, std::size_t j);

  PanelBuilder& row_ids(std::vector<std::string> ids);
  PanelBuilder& col_ids(std::vector<std::string> ids);
  PanelBuilder& missing_convention(MissingOutcomes convention);

  ObservedPanel build() &&;

 private:
  void claim(std::size_t i, std::size_t j);

  ObservedPanel panel_;
  std::vector<bool> seen_;
};

// Fraction of the m*n entries carrying `level` (0 counts missing entries).
double observed_fraction(const ObservedPanel& panel, int level);

// CSV with header `row_id,col_id,treatment,outcome`; one line per cell, the
// outcome left empty when treatment is 0. Ids are arbitrary strings and are
// indexed in order of first appearance. Cells never listed are missing.
// `levels` declares the label range; when absent it is the largest label seen.
ObservedPanel load_panel_csv(const std::string& path, std::optional<int> levels = std::nullopt,
                             MissingOutcomes convention = MissingOutcomes::kAbsent);

// Writes every cell in row-major order using the ids held by the panel.
void write_panel_csv(const ObservedPanel& panel, const std::string& path);

}  // namespace msnn
