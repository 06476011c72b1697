#include "msnn/theory.hpp"

#include <algorithm>
#include <bit>
#include <cfloat>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

#include "msnn/csv.hpp"
#include "msnn/error.hpp"
#include "msnn/random.hpp"

namespace msnn {

namespace {

__extension__ typedef unsigned __int128 u128;
__extension__ typedef __int128 i128;
using Bits = std::vector<std::uint64_t>;

long double log_binomial(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<long double>(n) + 1.0L) - std::lgamma(static_cast<long double>(k) + 1.0L) -
         std::lgamma(static_cast<long double>(n - k) + 1.0L);
}

u128 binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  u128 result = 1;
  for (std::uint64_t t = 0; t < k; ++t) result = result * (n - t) / (t + 1);
  return result;
}

std::uint64_t saturate(u128 v) {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  return v > kMax ? kMax : static_cast<std::uint64_t>(v);
}

std::size_t popcount(const Bits& bits) {
  std::size_t total = 0;
  for (auto w : bits) total += static_cast<std::size_t>(std::popcount(w));
  return total;
}

ClosedForm finish(long double log_value) {
  ClosedForm out;
  out.log_value = log_value;
  if (std::isinf(log_value) && log_value < 0) {
    out.value = 0.0;
  } else if (log_value > std::log(static_cast<long double>(DBL_MAX))) {
    out.value = std::numeric_limits<double>::infinity();
    out.overflow = true;
  } else {
    out.value = static_cast<double>(std::exp(log_value));
  }
  return out;
}

// Candidate rows are those with label d in the target column; each carries the
// set of columns (other than the target column) that the validity predicate
// admits for that row.
struct CountProblem {
  std::size_t r = 1;
  std::size_t c = 1;
  std::size_t words = 0;
  std::vector<Bits> row_masks;
};

CountProblem make_problem(const std::uint8_t* target_row, const std::vector<const std::uint8_t*>& anchor_rows,
                          std::size_t n, std::size_t target_col, int level, Estimator estimator, std::size_t r,
                          std::size_t c) {
  CountProblem problem;
  problem.r = r;
  problem.c = c;
  problem.words = (n + 63) / 64;
  problem.row_masks.reserve(anchor_rows.size());
  const auto d = static_cast<std::uint8_t>(level);
  for (const std::uint8_t* row : anchor_rows) {
    Bits mask(problem.words, 0);
    for (std::size_t b = 0; b < n; ++b) {
      if (b == target_col) continue;
      const bool ok = estimator == Estimator::kSnn ? (target_row[b] == d && row[b] == d)
                                                   : (target_row[b] != 0 && row[b] == target_row[b]);
      if (ok) mask[b / 64] |= std::uint64_t{1} << (b % 64);
    }
    problem.row_masks.push_back(std::move(mask));
  }
  return problem;
}

struct ValidRowSet {
  std::vector<std::uint32_t> rows;
  u128 weight = 0;  // number of column sets of size c
};

// Depth-first enumeration of r-subsets of candidate rows, pruning as soon as
// the shared column count drops below c.
class RowSetEnumerator {
 public:
  RowSetEnumerator(const CountProblem& problem, std::size_t node_budget)
      : problem_(problem), budget_(node_budget), chosen_(problem.r) {}

  std::vector<ValidRowSet> run() {
    if (problem_.row_masks.size() >= problem_.r) {
      Bits all(problem_.words, ~std::uint64_t{0});
      visit(0, 0, all);
    }
    return std::move(found_);
  }

 private:
  void visit(std::size_t start, std::size_t depth, const Bits& acc) {
    const std::size_t total = problem_.row_masks.size();
    for (std::size_t a = start; a + (problem_.r - depth) <= total; ++a) {
      if (++nodes_ > budget_) {
        throw BudgetError("anchor enumeration exceeded node budget of " + std::to_string(budget_));
      }
      Bits next(problem_.words);
      for (std::size_t w = 0; w < problem_.words; ++w) next[w] = acc[w] & problem_.row_masks[a][w];
      const std::size_t shared = popcount(next);
      if (shared < problem_.c) continue;
      chosen_[depth] = static_cast<std::uint32_t>(a);
      if (depth + 1 == problem_.r) {
        found_.push_back({chosen_, binomial(shared, problem_.c)});
      } else {
        visit(a + 1, depth + 1, next);
      }
    }
  }

  const CountProblem& problem_;
  std::size_t budget_;
  std::size_t nodes_ = 0;
  std::vector<std::uint32_t> chosen_;
  std::vector<ValidRowSet> found_;
};

// Number of unordered pairs of distinct valid anchors whose row sets
// intersect. Ordered intersecting pairs (self-pairs included) follow from
// inclusion-exclusion over shared row subsets T: sum_T (-1)^(|T|+1) W_T^2,
// where W_T is the total weight of row sets containing T.
double pair_count(const std::vector<ValidRowSet>& sets, std::size_t r, u128 k_prime) {
  if (sets.empty()) return 0.0;
  i128 ordered = 0;
  auto add_term = [&ordered](u128 sum, std::size_t size) {
    const i128 sq = static_cast<i128>(sum) * static_cast<i128>(sum);
    ordered += (size % 2 == 1) ? sq : -sq;
  };
  const std::size_t subsets = std::size_t{1} << r;
  std::uint32_t max_row = 0;
  for (const auto& s : sets) max_row = std::max(max_row, s.rows.back());

  if (r <= 4 && max_row < 0xffff) {
    // Subsets packed as up to four 16-bit (row + 1) fields.
    std::vector<std::pair<std::uint64_t, u128>> entries;
    entries.reserve(sets.size() * (subsets - 1));
    for (const auto& s : sets) {
      for (std::size_t mask = 1; mask < subsets; ++mask) {
        std::uint64_t key = 0;
        int pos = 0;
        for (std::size_t t = 0; t < r; ++t) {
          if (mask & (std::size_t{1} << t)) key |= static_cast<std::uint64_t>(s.rows[t] + 1) << (16 * pos++);
        }
        entries.emplace_back(key, s.weight);
      }
    }
    std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t a = 0; a < entries.size();) {
      std::size_t b = a;
      u128 sum = 0;
      while (b < entries.size() && entries[b].first == entries[a].first) sum += entries[b++].second;
      std::size_t size = 0;
      for (int field = 0; field < 4; ++field) size += ((entries[a].first >> (16 * field)) & 0xffffULL) != 0;
      add_term(sum, size);
      a = b;
    }
  } else {
    std::map<std::vector<std::uint32_t>, u128> table;
    for (const auto& s : sets) {
      for (std::size_t mask = 1; mask < subsets; ++mask) {
        std::vector<std::uint32_t> key;
        for (std::size_t t = 0; t < r; ++t) {
          if (mask & (std::size_t{1} << t)) key.push_back(s.rows[t]);
        }
        table[key] += s.weight;
      }
    }
    for (const auto& [key, sum] : table) add_term(sum, key.size());
  }
  return static_cast<double>((ordered - static_cast<i128>(k_prime)) / 2);
}

// Maximum number of pairwise row-disjoint valid row sets (exact set packing).
// Branches on the lowest undecided row: either it stays unused or it is
// covered by a row set whose smallest row it is.
class SetPacker {
 public:
  SetPacker(const std::vector<ValidRowSet>& sets, std::size_t r, std::size_t node_budget)
      : r_(r), budget_(node_budget) {
    std::vector<std::uint32_t> used_rows;
    for (const auto& s : sets) used_rows.insert(used_rows.end(), s.rows.begin(), s.rows.end());
    std::sort(used_rows.begin(), used_rows.end());
    used_rows.erase(std::unique(used_rows.begin(), used_rows.end()), used_rows.end());
    rows_ = used_rows.size();
    by_min_row_.resize(rows_);
    for (const auto& s : sets) {
      std::vector<std::uint32_t> local;
      for (auto row : s.rows) {
        local.push_back(static_cast<std::uint32_t>(
            std::lower_bound(used_rows.begin(), used_rows.end(), row) - used_rows.begin()));
      }
      by_min_row_[local.front()].push_back(std::move(local));
    }
    blocked_.assign(rows_, 0);
  }

  std::optional<std::uint64_t> solve() {
    try {
      search(0, 0, rows_);
    } catch (const BudgetError&) {
      return std::nullopt;
    }
    return best_;
  }

 private:
  void search(std::size_t x, std::uint64_t count, std::size_t free_rows) {
    if (++nodes_ > budget_) throw BudgetError("set packing node budget exceeded");
    while (x < rows_ && blocked_[x]) ++x;
    best_ = std::max(best_, count);
    if (x >= rows_) return;
    if (count + free_rows / r_ <= best_) return;
    for (const auto& set : by_min_row_[x]) {
      if (std::any_of(set.begin(), set.end(), [&](std::uint32_t row) { return blocked_[row] != 0; })) continue;
      for (auto row : set) blocked_[row] = 1;
      search(x + 1, count + 1, free_rows - r_);
      for (auto row : set) blocked_[row] = 0;
    }
    search(x + 1, count, free_rows - 1);
  }

  std::size_t r_;
  std::size_t budget_;
  std::size_t rows_ = 0;
  std::size_t nodes_ = 0;
  std::uint64_t best_ = 0;
  std::vector<std::vector<std::vector<std::uint32_t>>> by_min_row_;
  std::vector<std::uint8_t> blocked_;
};

constexpr std::size_t kPackingNodeBudget = 20'000'000;

AnchorCounts solve_counts(const CountProblem& problem, std::size_t node_budget, bool with_independent) {
  AnchorCounts counts;
  const auto sets = RowSetEnumerator(problem, node_budget).run();
  u128 k_prime = 0;
  for (const auto& s : sets) k_prime += s.weight;
  counts.k_prime = saturate(k_prime);
  counts.valid_row_sets = sets.size();
  counts.k_pair = pair_count(sets, problem.r, k_prime);
  if (with_independent) {
    if (problem.r == 1) {
      counts.k_independent = sets.size();
    } else {
      counts.k_independent = SetPacker(sets, problem.r, kPackingNodeBudget).solve();
    }
  }
  return counts;
}

void check_shape(const TreatmentGrid& grid, const EntryQuery& query, std::size_t r, std::size_t c) {
  if (query.row >= grid.rows() || query.col >= grid.cols()) throw DomainError("target entry outside the grid");
  if (query.level < 1 || query.level > grid.levels()) throw DomainError("target level outside the grid levels");
  if (r < 1 || c < 1) throw DomainError("anchor shape must be at least 1 x 1");
}

CountProblem problem_from_grid(const TreatmentGrid& grid, const EntryQuery& query, std::size_t r, std::size_t c,
                               Estimator estimator) {
  std::vector<const std::uint8_t*> rows;
  for (std::size_t a = 0; a < grid.rows(); ++a) {
    if (a != query.row && grid.at(a, query.col) == query.level) rows.push_back(grid.row_data(a));
  }
  return make_problem(grid.row_data(query.row), rows, grid.cols(), query.col, query.level, estimator, r, c);
}

double pair_space(std::size_t m, std::size_t n, std::size_t r, std::size_t c) {
  if (r > m - 1 || c > n - 1) return 0.0;
  return std::exp(static_cast<double>(log_binomial(m - 1, r) + log_binomial(n - 1, c)));
}

void check_pair_budget(std::size_t m, std::size_t n, std::size_t r, std::size_t c, std::size_t budget) {
  const double space = pair_space(m, n, r, c);
  if (space > static_cast<double>(budget) * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "C(m-1,r) C(n-1,c) = " << space << " exceeds the enumeration budget " << budget;
    throw BudgetError(msg.str());
  }
}

// MCAR label sampler: cumulative[k] = p_1 + ... + p_(k+1); mass left over is level 0.
class LabelSampler {
 public:
  explicit LabelSampler(const std::vector<double>& p) {
    double acc = 0.0;
    for (double v : p) cumulative_.push_back(acc += v);
  }
  std::uint8_t draw(std::mt19937_64& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (std::size_t k = 0; k < cumulative_.size(); ++k) {
      if (u < cumulative_[k]) return static_cast<std::uint8_t>(k + 1);
    }
    return 0;
  }

 private:
  std::vector<double> cumulative_;
};

// Target entry is (0, 0). The target column comes from its own stream; every
// row has a stream of its own covering all n cells, whose column-0 draw is
// overwritten by the column value. Rows irrelevant to the counts are skipped.
struct LazyDraw {
  std::vector<std::uint8_t> column;
  std::vector<std::uint8_t> target_row;
  std::vector<std::vector<std::uint8_t>> anchor_rows;
};

std::vector<std::uint8_t> draw_row(const TheoryInstance& inst, const LabelSampler& sampler, std::uint64_t seed,
                                   std::size_t replicate, std::size_t row, std::uint8_t column_value) {
  std::mt19937_64 rng(derive_seed(seed, Stream::kTheory, replicate, 1, row));
  std::vector<std::uint8_t> labels(inst.n);
  for (auto& label : labels) label = sampler.draw(rng);
  labels[0] = column_value;
  return labels;
}

std::vector<std::uint8_t> draw_column(const TheoryInstance& inst, const LabelSampler& sampler, std::uint64_t seed,
                                      std::size_t replicate) {
  std::mt19937_64 rng(derive_seed(seed, Stream::kTheory, replicate, 0, 0));
  std::vector<std::uint8_t> column(inst.m);
  for (auto& label : column) label = sampler.draw(rng);
  return column;
}

LazyDraw lazy_draw(const TheoryInstance& inst, const LabelSampler& sampler, std::uint64_t seed,
                   std::size_t replicate) {
  LazyDraw draw;
  draw.column = draw_column(inst, sampler, seed, replicate);
  draw.target_row = draw_row(inst, sampler, seed, replicate, 0, draw.column[0]);
  for (std::size_t a = 1; a < inst.m; ++a) {
    if (draw.column[a] == inst.level) draw.anchor_rows.push_back(draw_row(inst, sampler, seed, replicate, a, draw.column[a]));
  }
  return draw;
}

Moment moment_of(const std::vector<double>& samples) {
  Moment out;
  const auto count = static_cast<double>(samples.size());
  if (samples.empty()) return out;
  long double sum = 0.0L;
  for (double v : samples) sum += v;
  const long double mean = sum / count;
  long double ss = 0.0L;
  for (double v : samples) ss += (v - mean) * (v - mean);
  out.mean = static_cast<double>(mean);
  out.se = samples.size() > 1 ? static_cast<double>(std::sqrt(ss / (count - 1.0) / count)) : 0.0;
  return out;
}

double covariance_of_means(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t count = x.size();
  if (count < 2) return 0.0;
  long double mx = 0.0L;
  long double my = 0.0L;
  for (std::size_t t = 0; t < count; ++t) {
    mx += x[t];
    my += y[t];
  }
  mx /= count;
  my /= count;
  long double cov = 0.0L;
  for (std::size_t t = 0; t < count; ++t) cov += (x[t] - mx) * (y[t] - my);
  return static_cast<double>(cov / (count - 1) / count);
}

struct Samples {
  std::vector<double> k_prime;
  std::vector<double> k_pair;
  std::vector<double> k_geq_1;
  std::vector<double> k_independent;
  bool independent_complete = true;

  explicit Samples(std::size_t count) : k_prime(count), k_pair(count), k_geq_1(count), k_independent(count) {}
  void store(std::size_t t, const AnchorCounts& counts) {
    k_prime[t] = static_cast<double>(counts.k_prime);
    k_pair[t] = counts.k_pair;
    k_geq_1[t] = counts.k_prime > 0 ? 1.0 : 0.0;
    if (counts.k_independent) {
      k_independent[t] = static_cast<double>(*counts.k_independent);
    } else {
      independent_complete = false;
    }
  }
};

void apply_sandwich(CountReport& report, const TheoryInstance& inst, double slack_sd) {
  const double max_k = static_cast<double>((inst.m - 1) / inst.r);
  const double tol = 1e-12;
  const Moment& p1 = report.k_geq_1;
  if (report.k_independent) {
    const Moment& k = *report.k_independent;
    const double lower = k.mean / max_k - slack_sd * (p1.se + k.se / max_k) - tol;
    const double upper = k.mean + slack_sd * (p1.se + k.se) + tol;
    report.probability_sandwich_ok = p1.mean >= lower && p1.mean <= upper;
    const double kp = report.k_prime.mean;
    const double lower_ind = kp > 0.0 ? kp / (1.0 + 2.0 * report.k_pair.mean / kp) : 0.0;
    report.independence_sandwich_ok = k.mean >= lower_ind - slack_sd * k.se - tol &&
                                      k.mean <= kp + slack_sd * report.k_prime.se + tol;
  } else {
    report.probability_sandwich_ok = p1.mean <= report.k_prime.mean + slack_sd * (p1.se + report.k_prime.se) + tol;
  }
}

CountReport make_report(const TheoryInstance& inst, Estimator estimator, const Samples& samples, std::string method,
                        std::size_t replicates, double slack_sd) {
  CountReport report;
  report.estimator = estimator;
  report.method = std::move(method);
  report.replicates = replicates;
  report.closed_form = expected_k_closed_form(inst, estimator).value;
  report.k_prime = moment_of(samples.k_prime);
  report.k_pair = moment_of(samples.k_pair);
  report.k_geq_1 = moment_of(samples.k_geq_1);
  if (samples.independent_complete) report.k_independent = moment_of(samples.k_independent);
  apply_sandwich(report, inst, slack_sd);
  return report;
}

}  // namespace

void TheoryInstance::validate() const {
  if (m < 2 || n < 2) throw DomainError("theory instance needs m >= 2 and n >= 2");
  if (r < 1 || r > m - 1) throw DomainError("anchor rows r must satisfy 1 <= r <= m-1");
  if (c < 1 || c > n - 1) throw DomainError("anchor columns c must satisfy 1 <= c <= n-1");
  if (p.empty() || static_cast<int>(p.size()) > kMaxLevels) throw DomainError("need at least one level probability");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("level probabilities must be finite and >= 0");
    sum += v;
  }
  if (sum > 1.0 + 1e-12) throw DomainError("level probabilities sum to more than 1");
  if (p_max() <= 0.0) throw DomainError("at least one level probability must be positive");
  if (level < 1 || level > static_cast<int>(p.size())) throw DomainError("target level outside 1..l");
}

double TheoryInstance::p_max() const { return p.empty() ? 0.0 : *std::max_element(p.begin(), p.end()); }

int TheoryInstance::level_of_max() const {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
}

double gamma(std::span<const double> p, std::size_t r) {
  if (p.empty()) throw DomainError("gamma needs at least one level");
  const double top = *std::max_element(p.begin(), p.end());
  if (!(top > 0.0)) throw DomainError("gamma needs a positive level probability");
  long double sum = 0.0L;
  for (double v : p) sum += std::pow(static_cast<long double>(v) / top, static_cast<long double>(r + 1));
  return static_cast<double>(sum);
}

ClosedForm expected_k_closed_form(const TheoryInstance& inst, Estimator estimator) {
  inst.validate();
  const long double pd = inst.p_target();
  if (pd <= 0.0L) return finish(-std::numeric_limits<long double>::infinity());
  const auto r = static_cast<long double>(inst.r);
  const auto c = static_cast<long double>(inst.c);
  const long double base = log_binomial(inst.m - 1, inst.r) + log_binomial(inst.n - 1, inst.c);
  if (estimator == Estimator::kSnn) return finish(base + (r * c + r + c) * std::log(pd));
  const long double g = gamma(inst.p, inst.r);
  const long double pmax = inst.p_max();
  return finish(base + c * std::log(g) + r * std::log(pd) + (r + 1.0L) * c * std::log(pmax));
}

EfficiencyRatios efficiency_ratios(const TheoryInstance& inst) {
  inst.validate();
  EfficiencyRatios out;
  const long double pd = inst.p_target();
  const long double pmax = inst.p_max();
  const auto r = static_cast<long double>(inst.r);
  const auto c = static_cast<long double>(inst.c);
  if (pd <= 0.0L) {
    out.msnn_over_snn = std::numeric_limits<double>::infinity();
    out.snn_d_over_msnn_dmax = 0.0;
    out.msnn_d_over_msnn_dmax = 0.0;
    return out;
  }
  long double sum = 0.0L;
  for (double v : inst.p) sum += std::pow(static_cast<long double>(v) / pd, r + 1.0L);
  out.msnn_over_snn = static_cast<double>(std::exp(c * std::log(sum)));
  const long double g = gamma(inst.p, inst.r);
  out.snn_d_over_msnn_dmax = static_cast<double>(std::exp(-c * std::log(g) + (r * c + r + c) * std::log(pd / pmax)));
  out.msnn_d_over_msnn_dmax = static_cast<double>(std::pow(pd / pmax, r));
  return out;
}

std::vector<SparsityCheck> sparsity_conditions(const TheoryInstance& inst) {
  inst.validate();
  const double g = gamma(inst.p, inst.r);
  const double pd = inst.p_target();
  const double pmax = inst.p_max();
  const auto m = static_cast<double>(inst.m);
  const auto n = static_cast<double>(inst.n);
  const auto r = static_cast<double>(inst.r);
  const auto c = static_cast<double>(inst.c);
  std::vector<SparsityCheck> out;
  for (int step = 1; step <= 9; ++step) {
    SparsityCheck check;
    check.alpha = step / 10.0;
    check.row_term = m * r * pd * std::pow(pmax, check.alpha * c);
    check.col_term = n * c * g * std::pow(pmax, (1.0 - check.alpha) * r + 1.0 + check.alpha);
    check.satisfied = check.row_term <= 1.0 && check.col_term <= 1.0;
    out.push_back(check);
  }
  return out;
}

AnchorCounts count_anchors_exact(const TreatmentGrid& grid, const EntryQuery& query, std::size_t r, std::size_t c,
                                 Estimator estimator, std::size_t budget) {
  check_shape(grid, query, r, c);
  if (r > grid.rows() - 1 || c > grid.cols() - 1) return {};
  check_pair_budget(grid.rows(), grid.cols(), r, c, budget);
  const auto problem = problem_from_grid(grid, query, r, c, estimator);
  return solve_counts(problem, std::numeric_limits<std::size_t>::max(), true);
}

AnchorCounts count_anchors_exact(const TheoryInstance& inst, const TreatmentGrid& grid, Estimator estimator,
                                 std::size_t budget) {
  inst.validate();
  if (grid.rows() != inst.m || grid.cols() != inst.n) throw DomainError("grid shape does not match the instance");
  return count_anchors_exact(grid, EntryQuery{0, 0, inst.level}, inst.r, inst.c, estimator, budget);
}

AnchorCounts count_valid_anchors(const TreatmentGrid& grid, const EntryQuery& query, std::size_t r, std::size_t c,
                                 Estimator estimator, std::size_t budget) {
  check_shape(grid, query, r, c);
  if (r > grid.rows() - 1 || c > grid.cols() - 1) return {};
  const auto problem = problem_from_grid(grid, query, r, c, estimator);
  return solve_counts(problem, budget, false);
}

TreatmentGrid sample_mcar_grid(const TheoryInstance& inst, std::uint64_t seed, std::size_t replicate) {
  inst.validate();
  const LabelSampler sampler(inst.p);
  TreatmentGrid grid(inst.m, inst.n, static_cast<int>(inst.p.size()));
  const auto column = draw_column(inst, sampler, seed, replicate);
  for (std::size_t a = 0; a < inst.m; ++a) {
    const auto row = draw_row(inst, sampler, seed, replicate, a, column[a]);
    for (std::size_t b = 0; b < inst.n; ++b) grid.set(a, b, row[b]);
  }
  return grid;
}

CountComparison monte_carlo_expectations(const TheoryInstance& inst, std::size_t replicates, std::uint64_t seed,
                                         std::size_t budget) {
  inst.validate();
  if (replicates < 1) throw UsageError("need at least one replicate");
  const bool full = pair_space(inst.m, inst.n, inst.r, inst.c) <= static_cast<double>(budget);
  const std::size_t node_budget = full ? std::numeric_limits<std::size_t>::max() : std::max<std::size_t>(budget, 10'000'000);
  const LabelSampler sampler(inst.p);

  Samples snn(replicates);
  Samples msnn(replicates);
  std::exception_ptr failure;
  std::mutex failure_mutex;

#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(replicates); ++t) {
    try {
      const auto replicate = static_cast<std::size_t>(t);
      const auto draw = lazy_draw(inst, sampler, seed, replicate);
      std::vector<const std::uint8_t*> rows;
      for (const auto& row : draw.anchor_rows) rows.push_back(row.data());
      for (Estimator estimator : {Estimator::kSnn, Estimator::kMsnn}) {
        const auto problem =
            make_problem(draw.target_row.data(), rows, inst.n, 0, inst.level, estimator, inst.r, inst.c);
        const auto counts = solve_counts(problem, node_budget, full);
        (estimator == Estimator::kSnn ? snn : msnn).store(replicate, counts);
      }
    } catch (...) {
      const std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  CountComparison out;
  out.instance = inst;
  out.snn = make_report(inst, Estimator::kSnn, snn, "monte-carlo", replicates, 3.0);
  out.msnn = make_report(inst, Estimator::kMsnn, msnn, "monte-carlo", replicates, 3.0);
  out.ratio_closed_form = efficiency_ratios(inst).msnn_over_snn;
  const double mx = out.msnn.k_prime.mean;
  const double my = out.snn.k_prime.mean;
  if (my > 0.0) {
    const double ratio = mx / my;
    const double var_x = out.msnn.k_prime.se * out.msnn.k_prime.se;
    const double var_y = out.snn.k_prime.se * out.snn.k_prime.se;
    const double cov = covariance_of_means(msnn.k_prime, snn.k_prime);
    const double var = (var_x - 2.0 * ratio * cov + ratio * ratio * var_y) / (my * my);
    out.k_prime_ratio = {ratio, std::sqrt(std::max(var, 0.0))};
  } else {
    out.k_prime_ratio = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  }
  return out;
}

CountComparison exact_expectations(const TheoryInstance& inst, std::size_t max_grids) {
  inst.validate();
  const std::size_t cells = inst.m * inst.n;
  const std::size_t categories = inst.p.size() + 1;
  long double total = 1.0L;
  for (std::size_t t = 0; t < cells; ++t) total *= static_cast<long double>(categories);
  if (total > static_cast<long double>(max_grids)) {
    throw BudgetError("exhaustive enumeration needs " + std::to_string(static_cast<double>(total)) +
                      " assignments, budget is " + std::to_string(max_grids));
  }
  std::vector<long double> prob(categories);
  long double observed = 0.0L;
  for (std::size_t k = 1; k < categories; ++k) observed += (prob[k] = inst.p[k - 1]);
  prob[0] = std::max(0.0L, 1.0L - observed);

  struct Acc {
    long double k_prime = 0, k_pair = 0, k_geq_1 = 0, k_independent = 0;
    bool complete = true;
  } acc[2];

  std::vector<std::uint8_t> labels(cells, 0);
  TreatmentGrid grid(inst.m, inst.n, static_cast<int>(inst.p.size()));
  while (true) {
    long double weight = 1.0L;
    for (std::size_t t = 0; t < cells; ++t) weight *= prob[labels[t]];
    if (weight > 0.0L) {
      for (std::size_t t = 0; t < cells; ++t) grid.set(t / inst.n, t % inst.n, labels[t]);
      for (int e = 0; e < 2; ++e) {
        const auto problem = problem_from_grid(grid, EntryQuery{0, 0, inst.level}, inst.r, inst.c,
                                               e == 0 ? Estimator::kSnn : Estimator::kMsnn);
        const auto counts = solve_counts(problem, std::numeric_limits<std::size_t>::max(), true);
        acc[e].k_prime += weight * static_cast<long double>(counts.k_prime);
        acc[e].k_pair += weight * static_cast<long double>(counts.k_pair);
        acc[e].k_geq_1 += counts.k_prime > 0 ? weight : 0.0L;
        if (counts.k_independent) {
          acc[e].k_independent += weight * static_cast<long double>(*counts.k_independent);
        } else {
          acc[e].complete = false;
        }
      }
    }
    std::size_t t = 0;
    while (t < cells && ++labels[t] == categories) labels[t++] = 0;
    if (t == cells) break;
  }

  CountComparison out;
  out.instance = inst;
  for (int e = 0; e < 2; ++e) {
    CountReport report;
    report.estimator = e == 0 ? Estimator::kSnn : Estimator::kMsnn;
    report.method = "exact-enum";
    report.replicates = static_cast<std::size_t>(total);
    report.closed_form = expected_k_closed_form(inst, report.estimator).value;
    report.k_prime = {static_cast<double>(acc[e].k_prime), 0.0};
    report.k_pair = {static_cast<double>(acc[e].k_pair), 0.0};
    report.k_geq_1 = {static_cast<double>(acc[e].k_geq_1), 0.0};
    if (acc[e].complete) report.k_independent = Moment{static_cast<double>(acc[e].k_independent), 0.0};
    apply_sandwich(report, inst, 0.0);
    (e == 0 ? out.snn : out.msnn) = report;
  }
  out.ratio_closed_form = efficiency_ratios(inst).msnn_over_snn;
  out.k_prime_ratio = {out.snn.k_prime.mean > 0.0 ? out.msnn.k_prime.mean / out.snn.k_prime.mean
                                                   : std::numeric_limits<double>::quiet_NaN(),
                       0.0};
  return out;
}

std::string count_report_csv_header() {
  std::string header = "m,n,r,c,level,p,gamma,method,replicates,ratio_closed_form,ratio_mean,ratio_se";
  for (const char* tag : {"snn", "msnn"}) {
    for (const char* field :
         {"closed_form", "k_prime_mean", "k_prime_se", "k_pair_mean", "k_pair_se", "p_k_geq_1", "p_k_geq_1_se",
          "k_independent_mean", "k_independent_se", "probability_sandwich", "independence_sandwich"}) {
      header += ",";
      header += tag;
      header += "_";
      header += field;
    }
  }
  return header;
}

std::string count_report_csv_row(const CountComparison& cmp) {
  const auto& inst = cmp.instance;
  std::string probs;
  for (std::size_t k = 0; k < inst.p.size(); ++k) {
    if (k > 0) probs += ";";
    probs += csv::format_double(inst.p[k]);
  }
  auto verdict = [](const std::optional<bool>& v) -> std::string {
    if (!v) return "";
    return *v ? "pass" : "fail";
  };
  std::ostringstream row;
  row << inst.m << ',' << inst.n << ',' << inst.r << ',' << inst.c << ',' << inst.level << ',' << probs << ','
      << csv::format_double(gamma(inst.p, inst.r)) << ',' << cmp.snn.method << ',' << cmp.snn.replicates << ','
      << csv::format_double(cmp.ratio_closed_form) << ',' << csv::format_double(cmp.k_prime_ratio.mean) << ','
      << csv::format_double(cmp.k_prime_ratio.se);
  for (const CountReport* report : {&cmp.snn, &cmp.msnn}) {
    row << ',' << csv::format_double(report->closed_form) << ',' << csv::format_double(report->k_prime.mean) << ','
        << csv::format_double(report->k_prime.se) << ',' << csv::format_double(report->k_pair.mean) << ','
        << csv::format_double(report->k_pair.se) << ',' << csv::format_double(report->k_geq_1.mean) << ','
        << csv::format_double(report->k_geq_1.se) << ',';
    if (report->k_independent) {
      row << csv::format_double(report->k_independent->mean) << ',' << csv::format_double(report->k_independent->se);
    } else {
      row << ',';
    }
    row << ',' << verdict(report->probability_sandwich_ok) << ',' << verdict(report->independence_sandwich_ok);
  }
  return row.str();
}

}  // namespace msnn
