#include "msnn/panel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "msnn/csv.hpp"
#include "msnn/error.hpp"

namespace msnn {

namespace {

std::vector<std::string> index_ids(std::size_t count) {
  std::vector<std::string> ids(count);
  for (std::size_t k = 0; k < count; ++k) ids[k] = std::to_string(k);
  return ids;
}

std::string cell_name(std::size_t i, std::size_t j) {
  return "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

}  // namespace

TreatmentGrid::TreatmentGrid(std::size_t rows, std::size_t cols, int levels)
    : rows_(rows), cols_(cols), levels_(levels), labels_(rows * cols, 0) {
  if (levels < 0 || levels > kMaxLevels) {
    throw DomainError("number of treatment levels must lie in [0, " + std::to_string(kMaxLevels) + "]");
  }
}

void TreatmentGrid::set(std::size_t i, std::size_t j, int label) {
  if (label < 0 || label > levels_) {
    throw DomainError("treatment label " + std::to_string(label) + " outside {0.." +
                      std::to_string(levels_) + "}");
  }
  labels_[i * cols_ + j] = static_cast<std::uint8_t>(label);
}

double ObservedPanel::outcome(std::size_t i, std::size_t j) const {
  if (i >= rows() || j >= cols()) throw DomainError("entry " + cell_name(i, j) + " out of range");
  if (!observed(i, j) && convention_ == MissingOutcomes::kAbsent) {
    throw MissingEntryError("outcome at " + cell_name(i, j) + " is not observed");
  }
  return outcomes_[i * cols() + j];
}

std::size_t ObservedPanel::observed_count() const noexcept {
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows(); ++i) {
    const auto* row = grid_.row_data(i);
    count += static_cast<std::size_t>(std::count_if(row, row + cols(), [](auto v) { return v != 0; }));
  }
  return count;
}

ObservedPanel ObservedPanel::with_missing_convention(MissingOutcomes convention) const {
  ObservedPanel copy = *this;
  copy.convention_ = convention;
  return copy;
}

void ObservedPanel::check_query(const EntryQuery& query) const {
  if (query.row >= rows() || query.col >= cols()) {
    throw DomainError("query entry " + cell_name(query.row, query.col) + " out of range for " +
                      std::to_string(rows()) + "x" + std::to_string(cols()) + " panel");
  }
  if (query.level < 1 || query.level > levels()) {
    throw DomainError("query level " + std::to_string(query.level) + " outside {1.." +
                      std::to_string(levels()) + "}");
  }
}

PanelBuilder::PanelBuilder(std::size_t rows, std::size_t cols, int levels) {
  panel_.grid_ = TreatmentGrid(rows, cols, levels);
  panel_.outcomes_.assign(rows * cols, 0.0);
  panel_.row_ids_ = index_ids(rows);
  panel_.col_ids_ = index_ids(cols);
  seen_.assign(rows * cols, false);
}

void PanelBuilder::claim(std::size_t i, std::size_t j) {
  if (i >= panel_.rows() || j >= panel_.cols()) {
    throw DomainError("entry " + cell_name(i, j) + " out of range");
  }
  const auto k = i * panel_.cols() + j;
  if (seen_[k]) throw ConflictError("entry " + cell_name(i, j) + " recorded twice");
  seen_[k] = true;
}

PanelBuilder& PanelBuilder::observe(std::size_t i, std::size_t j, int level, double value) {
  if (level < 1) throw DomainError("observed entries need a treatment level >= 1");
  claim(i, j);
  panel_.grid_.set(i, j, level);
  panel_.outcomes_[i * panel_.cols() + j] = value;
  return *this;
}

PanelBuilder& PanelBuilder::mark_missing(std::size_t i, std::size_t j) {
  claim(i, j);
  return *this;
}

PanelBuilder& PanelBuilder::row_ids(std::vector<std::string> ids) {
  if (ids.size() != panel_.rows()) throw UsageError("row id count does not match row count");
  panel_.row_ids_ = std::move(ids);
  return *this;
}

PanelBuilder& PanelBuilder::col_ids(std::vector<std::string> ids) {
  if (ids.size() != panel_.cols()) throw UsageError("column id count does not match column count");
  panel_.col_ids_ = std::move(ids);
  return *this;
}

PanelBuilder& PanelBuilder::missing_convention(MissingOutcomes convention) {
  panel_.convention_ = convention;
  return *this;
}

ObservedPanel PanelBuilder::build() && { return std::move(panel_); }

double observed_fraction(const ObservedPanel& panel, int level) {
  if (level < 0 || level > panel.levels()) {
    throw DomainError("level " + std::to_string(level) + " outside {0.." + std::to_string(panel.levels()) + "}");
  }
  const std::size_t total = panel.rows() * panel.cols();
  if (total == 0) return 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < panel.rows(); ++i) {
    const auto* row = panel.treatments().row_data(i);
    count += static_cast<std::size_t>(std::count(row, row + panel.cols(), level));
  }
  return static_cast<double>(count) / static_cast<double>(total);
}

namespace {

struct CsvCell {
  std::size_t row;
  std::size_t col;
  int level;
  double value;
  std::size_t line;
};

std::size_t intern(std::unordered_map<std::string, std::size_t>& index, std::vector<std::string>& ids,
                   const std::string& id) {
  const auto [it, inserted] = index.try_emplace(id, ids.size());
  if (inserted) ids.push_back(id);
  return it->second;
}

}  // namespace

ObservedPanel load_panel_csv(const std::string& path, std::optional<int> levels, MissingOutcomes convention) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw ParseError("missing header row", 1);
  const auto header = csv::split_line(lines.front(), 1);
  const std::vector<std::string> expected = {"row_id", "col_id", "treatment", "outcome"};
  if (header.size() != expected.size() ||
      !std::equal(header.begin(), header.end(), expected.begin(),
                  [](const std::string& a, const std::string& b) { return csv::trim(a) == b; })) {
    throw ParseError("header must be 'row_id,col_id,treatment,outcome'", 1);
  }

  std::unordered_map<std::string, std::size_t> row_index;
  std::unordered_map<std::string, std::size_t> col_index;
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
  std::vector<CsvCell> cells;
  int max_label = 0;

  for (std::size_t k = 1; k < lines.size(); ++k) {
    const std::size_t line_no = k + 1;
    if (csv::trim(lines[k]).empty()) continue;
    const auto fields = csv::split_line(lines[k], line_no);
    if (fields.size() != 4) {
      throw ParseError("expected 4 fields, found " + std::to_string(fields.size()), line_no);
    }
    const long long label = csv::parse_integer(fields[2], line_no);
    if (label < 0) throw ParseError("treatment must be a non-negative integer", line_no);
    if (label > kMaxLevels) throw DomainError("treatment label " + std::to_string(label) + " on line " +
                                              std::to_string(line_no) + " exceeds supported range");
    const auto outcome_text = csv::trim(fields[3]);
    double value = 0.0;
    if (label == 0) {
      if (!outcome_text.empty()) throw ParseError("outcome must be empty when treatment is 0", line_no);
    } else {
      value = csv::parse_double(outcome_text, line_no);
      if (!std::isfinite(value)) throw ParseError("outcome must be finite", line_no);
    }
    const auto row = intern(row_index, row_ids, std::string(csv::trim(fields[0])));
    const auto col = intern(col_index, col_ids, std::string(csv::trim(fields[1])));
    cells.push_back({row, col, static_cast<int>(label), value, line_no});
    max_label = std::max(max_label, static_cast<int>(label));
  }

  const int declared = levels.value_or(std::max(1, max_label));
  if (max_label > declared) {
    const auto bad = std::find_if(cells.begin(), cells.end(), [&](const CsvCell& c) { return c.level > declared; });
    throw DomainError("treatment label " + std::to_string(bad->level) + " on line " + std::to_string(bad->line) +
                      " outside {0.." + std::to_string(declared) + "}");
  }

  PanelBuilder builder(row_ids.size(), col_ids.size(), declared);
  builder.row_ids(row_ids).col_ids(col_ids).missing_convention(convention);
  for (const auto& cell : cells) {
    try {
      if (cell.level == 0) {
        builder.mark_missing(cell.row, cell.col);
      } else {
        builder.observe(cell.row, cell.col, cell.level, cell.value);
      }
    } catch (const ConflictError&) {
      throw ConflictError("cell (" + row_ids[cell.row] + ", " + col_ids[cell.col] + ") listed twice (line " +
                          std::to_string(cell.line) + ")");
    }
  }
  return std::move(builder).build();
}

void write_panel_csv(const ObservedPanel& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "row_id,col_id,treatment,outcome\n";
  for (std::size_t i = 0; i < panel.rows(); ++i) {
    for (std::size_t j = 0; j < panel.cols(); ++j) {
      out << csv::escape(panel.row_ids()[i]) << ',' << csv::escape(panel.col_ids()[j]) << ','
          << panel.treatment(i, j) << ',';
      if (panel.observed(i, j)) out << csv::format_double(panel.raw_outcome(i, j));
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace msnn
