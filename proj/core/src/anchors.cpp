#include "msnn/anchors.hpp"

#include <algorithm>
#include <bit>
#include <random>
#include <unordered_set>

#include "msnn/error.hpp"

namespace msnn {

namespace {

constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

using Words = std::vector<std::uint64_t>;

std::size_t popcount(const std::uint64_t* w, std::size_t n) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < n; ++k) total += static_cast<std::size_t>(std::popcount(w[k]));
  return total;
}

bool contains(const std::uint64_t* outer, const std::uint64_t* inner, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if ((outer[k] & inner[k]) != inner[k]) return false;
  }
  return true;
}

std::size_t and_popcount(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < n; ++k) total += static_cast<std::size_t>(std::popcount(a[k] & b[k]));
  return total;
}

struct WordsHash {
  std::size_t operator()(const Words& w) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (auto x : w) {
      h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

// Candidate = closed row set plus the number of columns containing it.
struct Candidate {
  Words rows;
  std::size_t row_count = 0;
  std::size_t col_count = 0;
  std::size_t area() const { return row_count * col_count; }
};

// Larger area first, then more rows, then the lexicographically smallest row
// set (lowest bit first).
bool better(const Candidate& a, const Candidate& b) {
  if (a.area() != b.area()) return a.area() > b.area();
  if (a.row_count != b.row_count) return a.row_count > b.row_count;
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    if (a.rows[k] != b.rows[k]) {
      const auto diff = a.rows[k] ^ b.rows[k];
      const auto lowest = diff & (~diff + 1);
      return (a.rows[k] & lowest) != 0;
    }
  }
  return false;
}

std::size_t supporting_columns(const IndicatorMatrix& b, const std::uint64_t* rows) {
  std::size_t count = 0;
  for (std::size_t k = 0; k < b.candidate_cols().size(); ++k) {
    if (contains(b.column_mask(k), rows, b.words())) ++count;
  }
  return count;
}

Biclique expand(const IndicatorMatrix& b, const Candidate& best) {
  Biclique out;
  for (std::size_t t = 0; t < b.candidate_rows().size(); ++t) {
    if ((best.rows[t / 64] >> (t % 64)) & 1ULL) out.rows.push_back(b.candidate_rows()[t]);
  }
  for (std::size_t k = 0; k < b.candidate_cols().size(); ++k) {
    if (contains(b.column_mask(k), best.rows.data(), b.words())) out.cols.push_back(b.candidate_cols()[k]);
  }
  std::sort(out.rows.begin(), out.rows.end());
  std::sort(out.cols.begin(), out.cols.end());
  return out;
}

std::optional<Candidate> exact_search(const IndicatorMatrix& b, const BicliqueOptions& opt) {
  const std::size_t w = b.words();
  std::unordered_set<Words, WordsHash> closed;
  std::vector<Words> fresh;
  for (std::size_t k = 0; k < b.candidate_cols().size(); ++k) {
    const auto* mask = b.column_mask(k);
    if (popcount(mask, w) < opt.min_rows) continue;
    fresh.clear();
    fresh.emplace_back(mask, mask + w);
    for (const auto& s : closed) {
      Words meet(w);
      for (std::size_t t = 0; t < w; ++t) meet[t] = s[t] & mask[t];
      if (popcount(meet.data(), w) >= opt.min_rows) fresh.push_back(std::move(meet));
    }
    for (auto& f : fresh) closed.insert(std::move(f));
    if (closed.size() > opt.budget) {
      throw BudgetError("exact biclique search exceeded budget of " + std::to_string(opt.budget) +
                        " closed row sets");
    }
  }
  std::optional<Candidate> best;
  for (const auto& s : closed) {
    Candidate c{s, popcount(s.data(), w), supporting_columns(b, s.data())};
    if (c.col_count < opt.min_cols) continue;
    if (!best || better(c, *best)) best = std::move(c);
  }
  return best;
}

std::optional<Candidate> greedy_search(const IndicatorMatrix& b, const BicliqueOptions& opt) {
  const std::size_t w = b.words();
  const std::size_t ncols = b.candidate_cols().size();
  std::unordered_set<Words, WordsHash> seeds_seen;
  std::vector<char> inside(ncols);
  std::optional<Candidate> best;
  Words rows(w);

  for (std::size_t seed = 0; seed < ncols; ++seed) {
    const auto* seed_mask = b.column_mask(seed);
    if (popcount(seed_mask, w) < opt.min_rows) continue;
    if (!seeds_seen.emplace(seed_mask, seed_mask + w).second) continue;
    std::copy(seed_mask, seed_mask + w, rows.begin());

    while (true) {
      std::size_t support = 0;
      for (std::size_t k = 0; k < ncols; ++k) {
        inside[k] = contains(b.column_mask(k), rows.data(), w);
        support += inside[k] ? 1 : 0;
      }
      const std::size_t row_count = popcount(rows.data(), w);
      if (support >= opt.min_cols) {
        Candidate c{rows, row_count, support};
        if (!best || better(c, *best)) best = std::move(c);
      }
      // Next column: the one keeping the most rows; every choice strictly
      // shrinks the row set, so the walk ends after at most |rows| steps.
      std::size_t pick = ncols;
      std::size_t pick_rows = 0;
      for (std::size_t k = 0; k < ncols; ++k) {
        if (inside[k]) continue;
        const auto kept = and_popcount(rows.data(), b.column_mask(k), w);
        if (kept > pick_rows) {
          pick = k;
          pick_rows = kept;
        }
      }
      if (pick == ncols || pick_rows < opt.min_rows) break;
      const auto* mask = b.column_mask(pick);
      for (std::size_t t = 0; t < w; ++t) rows[t] &= mask[t];
    }
  }
  return best;
}

}  // namespace

std::string to_string(AnchorMode mode) { return mode == AnchorMode::kStrict ? "strict" : "mixed"; }

void IndicatorMatrix::reserve_layout(std::size_t candidate_rows) {
  words_ = std::max<std::size_t>(1, (candidate_rows + 63) / 64);
}

IndicatorMatrix IndicatorMatrix::build(const ObservedPanel& panel, const EntryQuery& query, AnchorMode mode) {
  panel.check_query(query);
  IndicatorMatrix b;
  b.rows_ = panel.rows();
  b.cols_ = panel.cols();
  b.target_ = query;
  b.mode_ = mode;
  b.row_slot_.assign(b.rows_, kNoSlot);

  const auto d = query.level;
  for (std::size_t a = 0; a < b.rows_; ++a) {
    if (a != query.row && panel.treatment(a, query.col) == d) {
      b.row_slot_[a] = b.cand_rows_.size();
      b.cand_rows_.push_back(a);
    }
  }
  b.reserve_layout(b.cand_rows_.size());
  if (b.cand_rows_.empty()) return b;

  const auto* target_row = panel.treatments().row_data(query.row);
  Words mask(b.words_);
  for (std::size_t col = 0; col < b.cols_; ++col) {
    const int level = target_row[col];
    if (col == query.col || level == 0) continue;
    if (mode == AnchorMode::kStrict && level != d) continue;
    std::fill(mask.begin(), mask.end(), 0);
    bool any = false;
    for (std::size_t t = 0; t < b.cand_rows_.size(); ++t) {
      if (panel.treatment(b.cand_rows_[t], col) == level) {
        mask[t / 64] |= 1ULL << (t % 64);
        any = true;
      }
    }
    if (!any) continue;
    b.cand_cols_.push_back(col);
    b.masks_.insert(b.masks_.end(), mask.begin(), mask.end());
  }
  return b;
}

IndicatorMatrix IndicatorMatrix::from_dense(std::size_t rows, std::size_t cols, const std::vector<std::uint8_t>& bits) {
  if (bits.size() != rows * cols) throw UsageError("dense indicator size does not match its shape");
  IndicatorMatrix b;
  b.rows_ = rows;
  b.cols_ = cols;
  b.row_slot_.assign(rows, kNoSlot);
  for (std::size_t a = 0; a < rows; ++a) {
    const bool any = std::any_of(bits.begin() + static_cast<std::ptrdiff_t>(a * cols),
                                 bits.begin() + static_cast<std::ptrdiff_t>((a + 1) * cols),
                                 [](auto v) { return v != 0; });
    if (any) {
      b.row_slot_[a] = b.cand_rows_.size();
      b.cand_rows_.push_back(a);
    }
  }
  b.reserve_layout(b.cand_rows_.size());
  Words mask(b.words_);
  for (std::size_t col = 0; col < cols; ++col) {
    std::fill(mask.begin(), mask.end(), 0);
    bool any = false;
    for (std::size_t t = 0; t < b.cand_rows_.size(); ++t) {
      if (bits[b.cand_rows_[t] * cols + col] != 0) {
        mask[t / 64] |= 1ULL << (t % 64);
        any = true;
      }
    }
    if (!any) continue;
    b.cand_cols_.push_back(col);
    b.masks_.insert(b.masks_.end(), mask.begin(), mask.end());
  }
  return b;
}

bool IndicatorMatrix::at(std::size_t a, std::size_t b) const {
  if (a >= rows_ || b >= cols_) throw DomainError("indicator index out of range");
  const auto slot = row_slot_[a];
  if (slot == kNoSlot) return false;
  const auto it = std::lower_bound(cand_cols_.begin(), cand_cols_.end(), b);
  if (it == cand_cols_.end() || *it != b) return false;
  const auto k = static_cast<std::size_t>(it - cand_cols_.begin());
  return (column_mask(k)[slot / 64] >> (slot % 64)) & 1ULL;
}

std::size_t IndicatorMatrix::ones() const noexcept { return popcount(masks_.data(), masks_.size()); }

std::vector<std::uint8_t> IndicatorMatrix::to_dense() const {
  std::vector<std::uint8_t> dense(rows_ * cols_, 0);
  for (std::size_t k = 0; k < cand_cols_.size(); ++k) {
    for (std::size_t t = 0; t < cand_rows_.size(); ++t) {
      if ((column_mask(k)[t / 64] >> (t % 64)) & 1ULL) dense[cand_rows_[t] * cols_ + cand_cols_[k]] = 1;
    }
  }
  return dense;
}

std::optional<Biclique> max_biclique(const IndicatorMatrix& b, const BicliqueOptions& options) {
  if (options.min_rows < 1 || options.min_cols < 1) throw UsageError("biclique minimum shape must be >= 1x1");
  if (b.candidate_rows().size() < options.min_rows || b.candidate_cols().size() < options.min_cols) {
    return std::nullopt;
  }
  const auto best =
      options.mode == BicliqueSearch::kExact ? exact_search(b, options) : greedy_search(b, options);
  if (!best) return std::nullopt;
  return expand(b, *best);
}

bool is_valid_anchor(const ObservedPanel& panel, const EntryQuery& query, const std::vector<std::size_t>& rows,
                     const std::vector<std::size_t>& cols, AnchorMode mode) {
  const int d = query.level;
  for (auto a : rows) {
    if (a == query.row || a >= panel.rows() || panel.treatment(a, query.col) != d) return false;
  }
  for (auto col : cols) {
    if (col == query.col || col >= panel.cols()) return false;
    const int level = panel.treatment(query.row, col);
    if (level == 0) return false;
    if (mode == AnchorMode::kStrict && level != d) return false;
    for (auto a : rows) {
      if (panel.treatment(a, col) != level) return false;
    }
  }
  return true;
}

AnchorSet make_anchor_set(const ObservedPanel& panel, const EntryQuery& query, const Biclique& biclique,
                          AnchorMode mode) {
  if (!is_valid_anchor(panel, query, biclique.rows, biclique.cols, mode)) {
    throw DomainError("biclique violates the " + to_string(mode) + " anchor conditions");
  }
  AnchorSet anchor{biclique.rows, biclique.cols, {}, mode};
  anchor.col_levels.reserve(anchor.cols.size());
  for (auto col : anchor.cols) anchor.col_levels.push_back(panel.treatment(query.row, col));
  return anchor;
}

std::optional<AnchorSet> find_anchor(const ObservedPanel& panel, const EntryQuery& query, AnchorMode mode,
                                     const BicliqueOptions& options) {
  const auto b = IndicatorMatrix::build(panel, query, mode);
  const auto biclique = max_biclique(b, options);
  if (!biclique) return std::nullopt;
  return make_anchor_set(panel, query, *biclique, mode);
}

SubgroupPlan partition_subgroups(const AnchorSet& anchor, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw UsageError("number of subgroups must be >= 1");
  if (k > anchor.rows.size()) {
    throw InfeasibleError("cannot split " + std::to_string(anchor.rows.size()) + " anchor rows into " +
                          std::to_string(k) + " subgroups");
  }
  auto rows = anchor.rows;
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);

  SubgroupPlan plan;
  plan.seed = seed;
  const std::size_t base = rows.size() / k;
  const std::size_t extra = rows.size() % k;
  auto it = rows.begin();
  for (std::size_t g = 0; g < k; ++g) {
    const auto size = static_cast<std::ptrdiff_t>(base + (g < extra ? 1 : 0));
    AnchorSet group{{it, it + size}, anchor.cols, anchor.col_levels, anchor.mode};
    std::sort(group.rows.begin(), group.rows.end());
    plan.subgroups.push_back(std::move(group));
    it += size;
  }
  return plan;
}

}  // namespace msnn
