#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "msnn/error.hpp"
#include "msnn/theory.hpp"

namespace {

using msnn::Estimator;
using msnn::TheoryInstance;

const std::vector<double> kSparse{0.01, 0.025, 0.05, 0.8};

TEST(Gamma, Examples) {
  const std::vector<double> one{0.3};
  EXPECT_DOUBLE_EQ(msnn::gamma(one, 3), 1.0);
  EXPECT_NEAR(msnn::gamma(kSparse, 3), 1.0000163, 1e-6);
  const double direct = 1.0 + std::pow(0.0625, 4) + std::pow(0.03125, 4) + std::pow(0.0125, 4);
  EXPECT_NEAR(msnn::gamma(kSparse, 3), direct, 1e-15);
  const std::vector<double> twin{0.2, 0.2};
  EXPECT_DOUBLE_EQ(msnn::gamma(twin, 5), 2.0);
}

TEST(ClosedForm, SmallSnnInstance) {
  const TheoryInstance inst{3, 3, 1, 1, {0.5}, 1};
  EXPECT_NEAR(msnn::expected_k_closed_form(inst, Estimator::kSnn).value, 0.5, 1e-15);
  EXPECT_NEAR(msnn::expected_k_closed_form(inst, Estimator::kMsnn).value, 0.5, 1e-15);
}

TEST(ClosedForm, SingleLevelReducesToSnn) {
  for (std::size_t r = 1; r <= 4; ++r) {
    const TheoryInstance inst{40, 30, r, 3, {0.37}, 1};
    const auto snn = msnn::expected_k_closed_form(inst, Estimator::kSnn);
    const auto mixed = msnn::expected_k_closed_form(inst, Estimator::kMsnn);
    EXPECT_NEAR(static_cast<double>(snn.log_value), static_cast<double>(mixed.log_value), 1e-12);
  }
}

TEST(ClosedForm, RatioOnSparseInstance) {
  const TheoryInstance inst{300, 100, 3, 2, kSparse, 1};
  const double expected = std::pow(1.0 + std::pow(2.5, 4) + std::pow(5.0, 4) + std::pow(80.0, 4), 2);
  EXPECT_NEAR(expected, 1.678e15, 0.001 * 1.678e15);
  const auto snn = msnn::expected_k_closed_form(inst, Estimator::kSnn);
  const auto mixed = msnn::expected_k_closed_form(inst, Estimator::kMsnn);
  const double ratio = std::exp(static_cast<double>(mixed.log_value - snn.log_value));
  EXPECT_NEAR(ratio / expected, 1.0, 1e-9);
  EXPECT_NEAR(msnn::efficiency_ratios(inst).msnn_over_snn / expected, 1.0, 1e-12);
}

TEST(ClosedForm, LogSpaceAvoidsOverflow) {
  const TheoryInstance inst{100000, 100000, 40, 40, {0.9}, 1};
  const auto result = msnn::expected_k_closed_form(inst, Estimator::kSnn);
  EXPECT_TRUE(std::isfinite(static_cast<double>(result.log_value)));
  const TheoryInstance huge{1000000, 1000000, 400, 400, {0.999}, 1};
  const auto big = msnn::expected_k_closed_form(huge, Estimator::kMsnn);
  EXPECT_TRUE(big.overflow);
  EXPECT_TRUE(std::isinf(big.value));
}

TEST(Efficiency, DegenerateAndMonotone) {
  const TheoryInstance single{30, 20, 2, 2, {0.4}, 1};
  const auto r = msnn::efficiency_ratios(single);
  EXPECT_DOUBLE_EQ(r.msnn_over_snn, 1.0);
  EXPECT_DOUBLE_EQ(r.snn_d_over_msnn_dmax, 1.0);
  EXPECT_DOUBLE_EQ(r.msnn_d_over_msnn_dmax, 1.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(0.01, 0.24);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> p(4);
    for (auto& v : p) v = unif(rng);
    const int lowest = 1 + static_cast<int>(std::min_element(p.begin(), p.end()) - p.begin());
    const TheoryInstance inst{50, 50, 1 + static_cast<std::size_t>(t % 3), 1 + static_cast<std::size_t>(t % 4), p,
                              lowest};
    EXPECT_GE(msnn::efficiency_ratios(inst).msnn_over_snn, 1.0);
    EXPECT_LE(msnn::efficiency_ratios(inst).msnn_d_over_msnn_dmax, 1.0);
  }
}

TEST(Sparsity, ScansAlphaGrid) {
  const TheoryInstance inst{300, 100, 3, 2, kSparse, 1};
  const auto checks = msnn::sparsity_conditions(inst);
  ASSERT_EQ(checks.size(), 9u);
  EXPECT_NEAR(checks.front().alpha, 0.1, 1e-12);
  EXPECT_NEAR(checks.back().alpha, 0.9, 1e-12);
  const double row = 300.0 * 3 * 0.01 * std::pow(0.8, 0.5 * 2);
  EXPECT_NEAR(checks[4].row_term, row, 1e-12 * row);
}

TEST(Instance, Validation) {
  EXPECT_THROW((TheoryInstance{3, 3, 3, 1, {0.5}, 1}.validate()), msnn::DomainError);
  EXPECT_THROW((TheoryInstance{3, 3, 1, 1, {0.7, 0.6}, 1}.validate()), msnn::DomainError);
  EXPECT_THROW((TheoryInstance{3, 3, 1, 1, {0.5}, 2}.validate()), msnn::DomainError);
}

// Independent enumeration of every (row set, column set) pair.
struct BruteCounts {
  std::uint64_t k_prime = 0;
  std::uint64_t k_pair = 0;
  std::uint64_t k_independent = 0;
};

void subsets(std::size_t n, std::size_t k, std::size_t start, std::vector<std::size_t>& cur,
             std::vector<std::vector<std::size_t>>& out) {
  if (cur.size() == k) {
    out.push_back(cur);
    return;
  }
  for (std::size_t v = start; v < n; ++v) {
    cur.push_back(v);
    subsets(n, k, v + 1, cur, out);
    cur.pop_back();
  }
}

BruteCounts brute_force(const msnn::TreatmentGrid& g, int d, std::size_t r, std::size_t c, Estimator est) {
  std::vector<std::vector<std::size_t>> row_sets, col_sets;
  std::vector<std::size_t> cur;
  subsets(g.rows() - 1, r, 0, cur, row_sets);
  subsets(g.cols() - 1, c, 0, cur, col_sets);
  std::vector<std::vector<std::size_t>> valid_rows;  // one entry per valid pair
  for (const auto& rows : row_sets) {
    for (const auto& cols : col_sets) {
      bool ok = true;
      for (auto a0 : rows) ok = ok && g.at(a0 + 1, 0) == d;
      for (auto b0 : cols) {
        const int level = g.at(0, b0 + 1);
        ok = ok && level != 0 && (est == Estimator::kMsnn || level == d);
        for (auto a0 : rows) ok = ok && g.at(a0 + 1, b0 + 1) == level;
      }
      if (ok) valid_rows.push_back(rows);
    }
  }
  BruteCounts out;
  out.k_prime = valid_rows.size();
  for (std::size_t x = 0; x < valid_rows.size(); ++x) {
    for (std::size_t y = x + 1; y < valid_rows.size(); ++y) {
      const auto& a = valid_rows[x];
      const auto& b = valid_rows[y];
      const bool meet = std::any_of(a.begin(), a.end(), [&](auto v) { return std::find(b.begin(), b.end(), v) != b.end(); });
      out.k_pair += meet ? 1 : 0;
    }
  }
  // Maximum family with pairwise disjoint row sets by plain recursion.
  std::function<std::uint64_t(std::size_t, std::uint32_t)> best = [&](std::size_t from, std::uint32_t used) {
    std::uint64_t top = 0;
    for (std::size_t x = from; x < valid_rows.size(); ++x) {
      std::uint32_t mask = 0;
      for (auto v : valid_rows[x]) mask |= 1u << v;
      if (mask & used) continue;
      top = std::max(top, 1 + best(x + 1, used | mask));
    }
    return top;
  };
  out.k_independent = best(0, 0);
  return out;
}

msnn::TreatmentGrid random_grid(std::size_t m, std::size_t n, const std::vector<double>& p, std::mt19937_64& rng) {
  msnn::TreatmentGrid g(m, n, static_cast<int>(p.size()));
  std::uniform_real_distribution<double> unif;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double u = unif(rng);
      int label = 0;
      for (std::size_t d = 0; d < p.size(); ++d) {
        if (u < p[d]) {
          label = static_cast<int>(d) + 1;
          break;
        }
        u -= p[d];
      }
      g.set(i, j, label);
    }
  }
  return g;
}

TEST(Counts, AllTargetLevelGrid) {
  msnn::TreatmentGrid g(4, 4, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) g.set(i, j, 1);
  for (auto est : {Estimator::kSnn, Estimator::kMsnn}) {
    const auto counts = msnn::count_anchors_exact(g, {0, 0, 1}, 1, 1, est);
    EXPECT_EQ(counts.k_prime, 9u);
    ASSERT_TRUE(counts.k_independent);
    EXPECT_EQ(*counts.k_independent, 3u);
    // Pairs sharing a row: 3 rows x C(3,2) column pairs.
    EXPECT_EQ(counts.k_pair, 9.0);
  }
}

TEST(Counts, EmptyGrid) {
  const msnn::TreatmentGrid g(5, 5, 2);
  const auto counts = msnn::count_anchors_exact(g, {0, 0, 1}, 2, 2, Estimator::kMsnn);
  EXPECT_EQ(counts.k_prime, 0u);
  EXPECT_EQ(counts.k_pair, 0.0);
  EXPECT_EQ(counts.k_independent.value_or(99), 0u);
}

TEST(Counts, MatchBruteForceAndSandwichInputs) {
  std::mt19937_64 rng(41);
  const std::vector<double> p{0.3, 0.5};
  for (int t = 0; t < 50; ++t) {
    const std::size_t m = 6 + static_cast<std::size_t>(t % 3);
    const std::size_t n = 5 + static_cast<std::size_t>(t % 2);
    const auto g = random_grid(m, n, p, rng);
    const std::size_t r = 1 + static_cast<std::size_t>(t % 2);
    const std::size_t c = 1 + static_cast<std::size_t>((t / 2) % 2);
    const int d = 1 + t % 2;
    for (auto est : {Estimator::kSnn, Estimator::kMsnn}) {
      const auto fast = msnn::count_anchors_exact(g, {0, 0, d}, r, c, est);
      const auto slow = brute_force(g, d, r, c, est);
      EXPECT_EQ(fast.k_prime, slow.k_prime);
      EXPECT_EQ(fast.k_pair, static_cast<double>(slow.k_pair));
      ASSERT_TRUE(fast.k_independent);
      EXPECT_EQ(*fast.k_independent, slow.k_independent);
      EXPECT_LE(*fast.k_independent, fast.k_prime);
      EXPECT_LE(static_cast<double>(fast.k_prime - *fast.k_independent), 2.0 * fast.k_pair);
      const auto light = msnn::count_valid_anchors(g, {0, 0, d}, r, c, est);
      EXPECT_EQ(light.k_prime, fast.k_prime);
      EXPECT_EQ(light.k_pair, fast.k_pair);
    }
    EXPECT_GE(msnn::count_anchors_exact(g, {0, 0, d}, r, c, Estimator::kMsnn).k_prime,
              msnn::count_anchors_exact(g, {0, 0, d}, r, c, Estimator::kSnn).k_prime);
  }
}

TEST(Counts, BudgetEnforced) {
  const msnn::TreatmentGrid g(40, 40, 1);
  EXPECT_THROW(msnn::count_anchors_exact(g, {0, 0, 1}, 3, 3, Estimator::kSnn, 1000), msnn::BudgetError);
}

TEST(MonteCarlo, SmallInstanceMatchesClosedForm) {
  const TheoryInstance inst{3, 3, 1, 1, {0.5}, 1};
  const auto cmp = msnn::monte_carlo_expectations(inst, 20000, 7);
  EXPECT_EQ(cmp.snn.method, "monte-carlo");
  EXPECT_EQ(cmp.snn.replicates, 20000u);
  EXPECT_LE(std::abs(cmp.snn.k_prime.mean - 0.5), 3.0 * cmp.snn.k_prime.se);
  EXPECT_LE(std::abs(cmp.msnn.k_prime.mean - 0.5), 3.0 * cmp.msnn.k_prime.se);
  ASSERT_TRUE(cmp.snn.probability_sandwich_ok);
  EXPECT_TRUE(*cmp.snn.probability_sandwich_ok);
  ASSERT_TRUE(cmp.msnn.independence_sandwich_ok);
  EXPECT_TRUE(*cmp.msnn.independence_sandwich_ok);
}

TEST(MonteCarlo, ExactEnumerationEqualsClosedForm) {
  const TheoryInstance inst{3, 3, 1, 1, {0.5}, 1};
  const auto cmp = msnn::exact_expectations(inst);
  EXPECT_EQ(cmp.snn.method, "exact-enum");
  EXPECT_NEAR(cmp.snn.k_prime.mean, 0.5, 1e-12);
  EXPECT_EQ(cmp.snn.k_prime.se, 0.0);

  const TheoryInstance two{3, 3, 1, 1, {0.2, 0.5}, 1};
  const auto both = msnn::exact_expectations(two);
  EXPECT_NEAR(both.snn.k_prime.mean, msnn::expected_k_closed_form(two, Estimator::kSnn).value, 1e-12);
  EXPECT_NEAR(both.msnn.k_prime.mean, msnn::expected_k_closed_form(two, Estimator::kMsnn).value, 1e-12);
  EXPECT_THROW(msnn::exact_expectations(TheoryInstance{5, 5, 1, 1, {0.2, 0.5}, 1}), msnn::BudgetError);
}

TEST(MonteCarlo, ZeroProbabilityLevelGivesNoAnchors) {
  const TheoryInstance inst{6, 6, 1, 1, {0.0, 0.5}, 1};
  const auto cmp = msnn::monte_carlo_expectations(inst, 500, 3);
  EXPECT_EQ(cmp.snn.k_prime.mean, 0.0);
  EXPECT_EQ(cmp.msnn.k_prime.mean, 0.0);
  EXPECT_EQ(cmp.msnn.k_geq_1.mean, 0.0);
}

TEST(MonteCarlo, PerDrawDominanceAndSamplerConsistency) {
  const TheoryInstance inst{8, 7, 2, 2, {0.3, 0.4}, 1};
  for (std::size_t rep = 0; rep < 200; ++rep) {
    const auto g = msnn::sample_mcar_grid(inst, 5, rep);
    EXPECT_GE(msnn::count_anchors_exact(inst, g, Estimator::kMsnn).k_prime,
              msnn::count_anchors_exact(inst, g, Estimator::kSnn).k_prime);
  }
}

TEST(MonteCarlo, SparseRatioWithinThreeSe) {
  const TheoryInstance inst{25, 25, 1, 2, {0.1, 0.3}, 1};
  const auto cmp = msnn::monte_carlo_expectations(inst, 4000, 11);
  const double formula = std::pow(1.0 + std::pow(3.0, 2), 2);
  EXPECT_NEAR(cmp.ratio_closed_form, formula, 1e-9 * formula);
  EXPECT_LE(std::abs(cmp.k_prime_ratio.mean - formula), 3.0 * cmp.k_prime_ratio.se);
}

TEST(Report, CsvRowShape) {
  const TheoryInstance inst{3, 3, 1, 1, {0.5}, 1};
  const auto cmp = msnn::exact_expectations(inst);
  const auto header = msnn::count_report_csv_header();
  const auto row = msnn::count_report_csv_row(cmp);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}

}  // namespace
