#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "msnn/anchors.hpp"
#include "msnn/datagen.hpp"
#include "msnn/error.hpp"
#include "msnn/estimators.hpp"
#include "msnn/random.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using msnn::EntryQuery;
using msnn::Estimator;

msnn::ObservedPanel panel_with_grid(const msnn::LatentModel& model, const std::vector<int>& labels,
                                    std::uint64_t noise_seed = 1) {
  msnn::TreatmentGrid grid(model.m, model.n, model.levels());
  for (std::size_t i = 0; i < model.m; ++i)
    for (std::size_t j = 0; j < model.n; ++j) grid.set(i, j, labels[i * model.n + j]);
  return msnn::observe(model, grid, noise_seed);
}

msnn::PipelineOptions fixed_rank_options(std::size_t rank, std::size_t k = 1) {
  msnn::PipelineOptions options;
  options.rule = msnn::RankRule::fixed(rank);
  options.k = k;
  return options;
}

double relative(double estimate, double truth) { return std::abs(estimate - truth) / std::abs(truth); }

TEST(Weights, MaxAbsEstimate) {
  msnn::PanelBuilder builder(2, 2, 2);
  builder.observe(0, 0, 1, -3.0).observe(1, 1, 1, 2.0);
  const auto panel = std::move(builder).build();
  const auto w = msnn::estimate_weights(panel);
  EXPECT_DOUBLE_EQ(w.at(1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(w.at(2), 1.0);  // no data at level 2
  EXPECT_EQ(w.warnings.size(), 1u);
  EXPECT_THROW((void)w.at(3), msnn::ConfigError);
}

TEST(Weights, OracleFromScales) {
  const std::vector<double> f{1.0, 5.0, 25.0, 625.0};
  const auto w = msnn::oracle_weights(f);
  EXPECT_DOUBLE_EQ(w.at(1), 1.0);
  EXPECT_DOUBLE_EQ(w.at(2), 0.2);
  EXPECT_DOUBLE_EQ(w.at(3), 0.04);
  EXPECT_DOUBLE_EQ(w.at(4), 0.0016);
  EXPECT_EQ(msnn::parse_weight_source("estimated"), msnn::WeightSource::kEstimated);
  EXPECT_THROW(msnn::parse_weight_source("magic"), msnn::ConfigError);
}

TEST(Weights, EstimatedEqualsOracleWhenBoundsAttained) {
  // Noise-free model: every column of A^(d) peaks at exactly f(d), so with a
  // fully observed level the max-abs estimate recovers 1/f(d).
  const std::vector<double> f{1.0, 5.0, 25.0, 625.0};
  const auto model = msnn::generate_model(30, 8, 3, f, 0.0, 3);
  std::vector<int> labels(30 * 8);
  for (std::size_t j = 0; j < 8; ++j)
    for (std::size_t i = 0; i < 30; ++i) labels[i * 8 + j] = 1 + static_cast<int>(j % 4);
  const auto panel = panel_with_grid(model, labels);
  const auto estimated = msnn::estimate_weights(panel);
  const auto oracle = msnn::oracle_weights(f);
  for (int d = 1; d <= 4; ++d) EXPECT_NEAR(estimated.at(d), oracle.at(d), 1e-15 * oracle.at(d));
}

TEST(Snn, NoiselessRankOneIsExact) {
  const auto model = msnn::generate_model(8, 6, 1, {3.0}, 0.0, 9);
  const auto panel = panel_with_grid(model, std::vector<int>(48, 1));
  const auto weights = msnn::unit_weights(1);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      const auto record = msnn::estimate_entry(panel, {i, j, 1}, Estimator::kSnn, weights, fixed_rank_options(1), 0);
      ASSERT_TRUE(record.feasible());
      EXPECT_LE(relative(*record.estimate, model.expected(i, j, 1)), 1e-8);
    }
  }
}

TEST(Snn, OneByOneAnchorIsInfeasible) {
  const auto model = msnn::generate_model(4, 4, 1, {1.0}, 0.0, 2);
  const auto panel = panel_with_grid(model, std::vector<int>(16, 1));
  msnn::SubgroupPlan plan;
  plan.subgroups.push_back({{1}, {1}, {1}, msnn::AnchorMode::kStrict});
  const auto record = msnn::snn_estimate(panel, {0, 0, 1}, plan, msnn::RankRule::fixed(1), msnn::FeasibilityPolicy{});
  EXPECT_FALSE(record.feasible());
  EXPECT_FALSE(record.reason.empty());
  // Wrong plan mode.
  msnn::SubgroupPlan mixed = plan;
  mixed.subgroups[0].mode = msnn::AnchorMode::kMixed;
  EXPECT_THROW(msnn::snn_estimate(panel, {0, 0, 1}, mixed, msnn::RankRule::fixed(1), msnn::FeasibilityPolicy{}),
               msnn::UsageError);
}

TEST(Snn, NoiselessRankThreeRecovery) {
  const std::vector<double> f{1.0, 5.0, 25.0, 625.0};
  const auto model = msnn::generate_model(60, 30, 3, f, 0.0, 4);
  const std::vector<double> p{0.1, 0.05, 0.05, 0.2, 0.6};
  const auto panel = msnn::assign_mcar(model, p, 6).panel;
  const auto weights = msnn::oracle_weights(f);
  std::size_t feasible = 0;
  for (int d = 1; d <= 4; ++d) {
    for (std::size_t i = 0; i < 60; i += 3) {
      for (std::size_t j = 0; j < 30; j += 2) {
        for (auto est : {Estimator::kSnn, Estimator::kMsnn}) {
          const auto record = msnn::estimate_entry(panel, {i, j, d}, est, weights, fixed_rank_options(3), 0);
          if (!record.feasible()) continue;
          ++feasible;
          EXPECT_LE(relative(*record.estimate, model.expected(i, j, d)), 1e-6);
        }
      }
    }
  }
  EXPECT_GT(feasible, 100u);
}

// Rows 1.. share the target row's column levels, which alternate between the
// two scales; column 0 is the target column at level 1.
std::vector<int> two_level_labels(std::size_t m, std::size_t n) {
  std::vector<int> labels(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) labels[i * n + j] = j == 0 ? 1 : 1 + static_cast<int>(j % 2);
  return labels;
}

TEST(Msnn, TwoLevelNoiselessIsExact) {
  const std::vector<double> f{1.0, 50.0};
  const auto model = msnn::generate_model(12, 10, 2, f, 0.0, 17);
  const auto panel = panel_with_grid(model, two_level_labels(12, 10));
  const EntryQuery query{0, 0, 1};
  const auto anchor = msnn::find_anchor(panel, query, msnn::AnchorMode::kMixed,
                                        {2, 2, msnn::BicliqueSearch::kExact, 1'000'000});
  ASSERT_TRUE(anchor);
  EXPECT_EQ(anchor->rows.size(), 11u);
  EXPECT_EQ(anchor->cols.size(), 9u);
  const auto plan = msnn::partition_subgroups(*anchor, 1, 0);
  for (const auto& weights : {msnn::oracle_weights(f), msnn::unit_weights(2)}) {
    const auto record =
        msnn::msnn_estimate(panel, query, plan, weights, msnn::RankRule::fixed(2), msnn::FeasibilityPolicy{});
    ASSERT_TRUE(record.feasible());
    EXPECT_LE(relative(*record.estimate, model.expected(0, 0, 1)), 1e-8);
  }
  msnn::WeightFunction partial;
  partial.by_level = {1.0, 1.0};
  EXPECT_THROW(msnn::msnn_estimate(panel, query, plan, partial, msnn::RankRule::fixed(2), msnn::FeasibilityPolicy{}),
               msnn::ConfigError);
}

TEST(Msnn, SingleLevelAnchorMatchesSnn) {
  const std::vector<double> f{1.0, 5.0};
  const auto model = msnn::generate_model(40, 20, 3, f, 0.01, 8);
  const auto panel = panel_with_grid(model, std::vector<int>(800, 2), 5);
  const auto weights = msnn::oracle_weights(f);
  msnn::PipelineOptions options;
  for (std::size_t i = 0; i < 40; i += 7) {
    for (std::size_t j = 0; j < 20; j += 3) {
      const auto snn = msnn::estimate_entry(panel, {i, j, 2}, Estimator::kSnn, weights, options, 3);
      const auto msnn_record = msnn::estimate_entry(panel, {i, j, 2}, Estimator::kMsnn, weights, options, 3);
      ASSERT_EQ(snn.feasible(), msnn_record.feasible());
      if (snn.feasible()) EXPECT_LE(relative(*msnn_record.estimate, *snn.estimate), 1e-10);
    }
  }
}

TEST(Feasibility, MembershipAndOrthogonality) {
  MatrixXd s(3, 3);
  s << 1, 2, 0, 0, 1, 0, 1, 3, 0;  // rank 2, third column zero
  const VectorXd x = s.col(1);
  const VectorXd q = s.row(2).transpose();
  const auto ok = msnn::feasibility_check(s, q, x, msnn::RankRule::fixed(2), msnn::FeasibilityPolicy{});
  EXPECT_TRUE(ok.pass);
  EXPECT_NEAR(ok.residual_x, 0.0, 1e-12);
  EXPECT_NEAR(ok.residual_q, 0.0, 1e-12);

  // x orthogonal to col(S).
  VectorXd orth(3);
  orth << 1, 1, -1;
  const auto bad = msnn::feasibility_check(s, q, orth, msnn::RankRule::fixed(2), msnn::FeasibilityPolicy{});
  EXPECT_FALSE(bad.pass);
  EXPECT_NEAR(bad.residual_x, 1.0, 1e-12);

  // Shape gate.
  msnn::FeasibilityPolicy strict_shape;
  strict_shape.min_rows = 4;
  EXPECT_FALSE(msnn::feasibility_check(s, q, x, msnn::RankRule::fixed(2), strict_shape).pass);
  // A fixed rank the anchor cannot support is rejected by default.
  EXPECT_FALSE(msnn::feasibility_check(s, q, x, msnn::RankRule::fixed(5), msnn::FeasibilityPolicy{}).pass);
}

TEST(Feasibility, NoiselessAnchorsAllPass) {
  const std::vector<double> f{1.0, 5.0, 25.0, 625.0};
  const auto model = msnn::generate_model(80, 40, 3, f, 0.0, 12);
  const std::vector<double> p{0.115, 0.01, 0.025, 0.05, 0.8};
  const auto panel = msnn::assign_mcar(model, p, 12).panel;
  const auto weights = msnn::oracle_weights(f);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < 80; i += 5) {
    for (std::size_t j = 0; j < 40; j += 3) {
      for (int d = 3; d <= 4; ++d) {
        const EntryQuery q{i, j, d};
        const auto anchor = msnn::find_anchor(panel, q, msnn::AnchorMode::kMixed, {2, 2});
        if (!anchor || anchor->rows.size() < 4 || anchor->cols.size() < 4) continue;
        ++anchors;
        const auto plan = msnn::partition_subgroups(*anchor, 1, 0);
        const auto record =
            msnn::msnn_estimate(panel, q, plan, weights, msnn::RankRule::fixed(3), msnn::FeasibilityPolicy{});
        EXPECT_TRUE(record.feasible()) << i << "," << j << "," << d;
      }
    }
  }
  EXPECT_GT(anchors, 50u);
}

TEST(Ci, FormulaArithmetic) {
  const double z = msnn::normal_critical_value(0.95);
  EXPECT_NEAR(z, 1.959963984540054, 1e-12);
  const std::vector<double> equal(4, 0.3);
  const auto ci = msnn::plugin_ci(10.0, equal, 0.95);
  ASSERT_TRUE(ci);
  EXPECT_NEAR(ci->upper - ci->lower, 2.0 * z * 0.3 * 2.0 / 4.0, 1e-14);
  EXPECT_NEAR(ci->upper + ci->lower, 20.0, 1e-12);
  const std::vector<double> one{0.3};
  EXPECT_FALSE(msnn::plugin_ci(10.0, one, 0.95));
  EXPECT_THROW(msnn::normal_critical_value(1.0), msnn::ConfigError);
}

TEST(Ci, ZeroNoiseHasZeroWidth) {
  const std::vector<double> f{1.0, 5.0};
  const auto model = msnn::generate_model(60, 20, 2, f, 0.0, 2);
  const auto panel = panel_with_grid(model, std::vector<int>(1200, 1));
  const auto record =
      msnn::estimate_entry(panel, {0, 0, 1}, Estimator::kMsnn, msnn::oracle_weights(f), fixed_rank_options(2, 4), 7);
  ASSERT_TRUE(record.feasible());
  ASSERT_EQ(record.k_used, 4u);
  ASSERT_TRUE(record.ci);
  EXPECT_LE(record.ci->upper - record.ci->lower, 1e-8);
}

msnn::ObservedPanel scale_level(const msnn::ObservedPanel& panel, int level, double alpha) {
  msnn::PanelBuilder builder(panel.rows(), panel.cols(), panel.levels());
  for (std::size_t i = 0; i < panel.rows(); ++i) {
    for (std::size_t j = 0; j < panel.cols(); ++j) {
      const int d = panel.treatment(i, j);
      if (d == 0) continue;
      builder.observe(i, j, d, panel.outcome(i, j) * (d == level ? alpha : 1.0));
    }
  }
  return std::move(builder).build();
}

TEST(Properties, ScaleEquivariance) {
  const std::vector<double> f{1.0, 5.0, 25.0};
  const auto model = msnn::generate_model(60, 30, 3, f, 0.01, 31);
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  const auto panel = msnn::assign_mcar(model, p, 31).panel;
  const int level = 2;
  const double alpha = 3.7;
  const auto scaled = scale_level(panel, level, alpha);
  msnn::PipelineOptions options;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < 60; i += 4) {
    for (std::size_t j = 0; j < 30; j += 3) {
      for (auto est : {Estimator::kSnn, Estimator::kMsnn}) {
        const auto base = msnn::estimate_entry(panel, {i, j, level}, est, msnn::estimate_weights(panel), options, 1);
        const auto moved =
            msnn::estimate_entry(scaled, {i, j, level}, est, msnn::estimate_weights(scaled), options, 1);
        ASSERT_EQ(base.feasible(), moved.feasible());
        if (!base.feasible()) continue;
        ++checked;
        EXPECT_LE(relative(*moved.estimate, alpha * *base.estimate), 1e-8);
      }
    }
  }
  EXPECT_GT(checked, 20u);
}

TEST(Properties, SnnFeasibleImpliesMsnnFeasible) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::vector<double> f{1.0, 5.0, 25.0};
    const auto model = msnn::generate_model(30, 15, 2, f, 0.01, 100 + trial);
    const std::vector<double> p{0.2, 0.3, 0.2, 0.3};
    const auto panel = msnn::assign_mcar(model, p, 200 + trial).panel;
    const auto weights = msnn::oracle_weights(f);
    msnn::PipelineOptions options;
    for (std::size_t i = 0; i < 30; i += 3) {
      for (std::size_t j = 0; j < 15; j += 2) {
        for (int d = 1; d <= 3; ++d) {
          const auto snn = msnn::estimate_entry(panel, {i, j, d}, Estimator::kSnn, weights, options, 0);
          if (!snn.feasible()) continue;
          const auto mixed = msnn::estimate_entry(panel, {i, j, d}, Estimator::kMsnn, weights, options, 0);
          EXPECT_TRUE(mixed.feasible());
        }
      }
    }
  }
}

// Squared errors at the same targets for K = 1, 2, 4; the paired difference
// of mean squared errors must not be significantly positive.
TEST(Properties, ErrorDoesNotGrowWithSubgroups) {
  const std::vector<double> f{1.0, 5.0, 25.0, 625.0};
  const std::vector<double> p{0.115, 0.01, 0.025, 0.05, 0.8};
  std::vector<std::vector<double>> sq(3);
  const std::size_t ks[] = {1, 2, 4};
  for (std::uint64_t rep = 0; rep < 40; ++rep) {
    const auto model = msnn::generate_model(120, 40, 3, f, 0.001, rep);
    const auto panel = msnn::assign_mcar(model, p, rep).panel;
    const auto weights = msnn::oracle_weights(f);
    std::mt19937_64 rng(rep);
    for (int t = 0; t < 5; ++t) {
      const EntryQuery q{rng() % 120, rng() % 40, 4};
      std::vector<double> errs;
      for (auto k : ks) {
        msnn::PipelineOptions options;
        options.k = k;
        options.rule = msnn::RankRule::fixed(3);
        const auto record = msnn::estimate_entry(panel, q, Estimator::kMsnn, weights, options, rep);
        if (!record.feasible() || record.k_used != k) break;
        const double e = (*record.estimate - model.expected(q.row, q.col, 4)) / 625.0;
        errs.push_back(e * e);
      }
      if (errs.size() != 3) continue;
      for (int s = 0; s < 3; ++s) sq[static_cast<std::size_t>(s)].push_back(errs[static_cast<std::size_t>(s)]);
    }
  }
  const auto count = sq[0].size();
  ASSERT_GT(count, 100u);
  for (int s = 1; s < 3; ++s) {
    double mean = 0.0;
    for (std::size_t t = 0; t < count; ++t) mean += sq[static_cast<std::size_t>(s)][t] - sq[static_cast<std::size_t>(s - 1)][t];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
      const double diff = sq[static_cast<std::size_t>(s)][t] - sq[static_cast<std::size_t>(s - 1)][t] - mean;
      var += diff * diff;
    }
    const double se = std::sqrt(var / static_cast<double>(count - 1) / static_cast<double>(count));
    EXPECT_LE(mean, 3.0 * se) << "K step " << s;
  }
}

TEST(Properties, CiCoverageAtDenseLevel) {
  const std::vector<double> f{1.0, 5.0, 25.0, 625.0};
  const std::vector<double> p{0.115, 0.01, 0.025, 0.05, 0.8};
  std::size_t covered = 0;
  std::size_t total = 0;
  for (std::uint64_t rep = 0; rep < 60; ++rep) {
    // Wide panel: anchors get many more columns than rows per subgroup.
    const auto model = msnn::generate_model(100, 1000, 3, f, 0.001, msnn::derive_seed(rep, msnn::Stream::kModel));
    const auto panel = msnn::assign_mcar(model, p, rep).panel;
    const EntryQuery q{rep % 100, (rep * 7) % 1000, 4};
    msnn::PipelineOptions options;
    options.k = 4;
    options.rule = msnn::RankRule::fixed(3);
    options.policy.min_rows = 4;  // leaves residual degrees of freedom for the plug-in sd
    const auto record = msnn::estimate_entry(panel, q, Estimator::kMsnn, msnn::oracle_weights(f), options, rep);
    if (!record.ci) continue;
    ++total;
    const double truth = model.expected(q.row, q.col, 4);
    covered += (record.ci->lower <= truth && truth <= record.ci->upper) ? 1 : 0;
  }
  ASSERT_GE(total, 55u);
  const double rate = static_cast<double>(covered) / static_cast<double>(total);
  EXPECT_GE(rate, 0.85);
}

}  // namespace
