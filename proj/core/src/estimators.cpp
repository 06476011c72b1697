#include "msnn/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "msnn/error.hpp"

namespace msnn {

std::string to_string(WeightSource source) {
  switch (source) {
    case WeightSource::kOracle:
      return "oracle";
    case WeightSource::kEstimated:
      return "estimated";
    case WeightSource::kUnit:
      return "unit";
  }
  return {};
}

WeightSource parse_weight_source(const std::string& text) {
  if (text == "oracle") return WeightSource::kOracle;
  if (text == "estimated") return WeightSource::kEstimated;
  if (text == "unit") return WeightSource::kUnit;
  throw ConfigError("unknown weight source '" + text + "' (expected oracle, estimated or unit)");
}

std::string to_string(Estimator estimator) { return estimator == Estimator::kSnn ? "SNN" : "MSNN"; }

double WeightFunction::at(int level) const {
  if (!covers(level)) throw ConfigError("no weight for treatment level " + std::to_string(level));
  return by_level[static_cast<std::size_t>(level)];
}

WeightFunction estimate_weights(const ObservedPanel& panel) {
  const int levels = panel.levels();
  std::vector<double> max_abs(static_cast<std::size_t>(levels) + 1, 0.0);
  std::vector<std::size_t> counts(max_abs.size(), 0);
  for (std::size_t i = 0; i < panel.rows(); ++i) {
    for (std::size_t j = 0; j < panel.cols(); ++j) {
      const auto d = static_cast<std::size_t>(panel.treatment(i, j));
      if (d == 0) continue;
      ++counts[d];
      max_abs[d] = std::max(max_abs[d], std::abs(panel.raw_outcome(i, j)));
    }
  }
  WeightFunction w;
  w.source = WeightSource::kEstimated;
  w.by_level.assign(max_abs.size(), 1.0);
  for (int d = 1; d <= levels; ++d) {
    const auto k = static_cast<std::size_t>(d);
    if (counts[k] == 0) {
      w.warnings.push_back("level " + std::to_string(d) + " has no observed entries; using weight 1");
    } else if (max_abs[k] == 0.0) {
      w.warnings.push_back("level " + std::to_string(d) + " has only zero outcomes; using weight 1");
    } else {
      w.by_level[k] = 1.0 / max_abs[k];
    }
  }
  return w;
}

WeightFunction oracle_weights(std::span<const double> scales) {
  WeightFunction w;
  w.source = WeightSource::kOracle;
  w.by_level.assign(scales.size() + 1, 1.0);
  for (std::size_t k = 0; k < scales.size(); ++k) {
    if (!(scales[k] > 0.0) || !std::isfinite(scales[k])) {
      throw ConfigError("level scales must be positive and finite");
    }
    w.by_level[k + 1] = 1.0 / scales[k];
  }
  return w;
}

WeightFunction unit_weights(int levels) {
  WeightFunction w;
  w.source = WeightSource::kUnit;
  w.by_level.assign(static_cast<std::size_t>(std::max(levels, 0)) + 1, 1.0);
  return w;
}

void FeasibilityPolicy::validate() const {
  if (!(x_residual_tol > 0.0 && x_residual_tol <= 1.0) || !(q_residual_tol > 0.0 && q_residual_tol <= 1.0)) {
    throw ConfigError("feasibility tolerances must lie in (0, 1]");
  }
  if (min_rows < 1 || min_cols < 1) throw ConfigError("minimum anchor shape must be at least 1x1");
}

namespace {

struct SubgroupFit {
  BetaFit fit;
  FeasibilityVerdict verdict;
};

FeasibilityVerdict judge(const SvdFactors& svd, const RankRule::Selection& sel, const Eigen::VectorXd& q,
                         const Eigen::VectorXd& x, const FeasibilityPolicy& policy) {
  FeasibilityVerdict v;
  v.lambda_used = sel.rank;
  v.clipped = sel.clipped;
  const auto k = static_cast<Eigen::Index>(sel.rank);
  v.residual_x = basis_residual(x, svd.left.leftCols(k));
  v.residual_q = basis_residual(q, svd.right.leftCols(k));
  const bool shape_ok = static_cast<std::size_t>(svd.left.rows()) >= policy.min_rows &&
                        static_cast<std::size_t>(svd.right.rows()) >= policy.min_cols;
  v.pass = shape_ok && sel.rank >= 1 && !(sel.clipped && policy.reject_clipped_rank) &&
           v.residual_x <= policy.x_residual_tol && v.residual_q <= policy.q_residual_tol;
  return v;
}

// Pooled residual sd of [S; q^T] after projecting its rows onto the retained
// right singular space.
double pooled_residual_sd(const Eigen::MatrixXd& s, const Eigen::VectorXd& q, const BetaFit& fit) {
  const auto rows = static_cast<std::size_t>(s.rows());
  const auto cols = static_cast<std::size_t>(s.cols());
  const std::size_t lambda = fit.lambda_used;
  if (lambda >= cols || lambda > rows) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t dof = (rows + 1 - lambda) * (cols - lambda);
  const auto v = fit.svd.right.leftCols(static_cast<Eigen::Index>(lambda));
  const Eigen::MatrixXd s_rest = s - (s * v) * v.transpose();
  const Eigen::VectorXd q_rest = q - v * (v.transpose() * q);
  return std::sqrt((s_rest.squaredNorm() + q_rest.squaredNorm()) / static_cast<double>(dof));
}

EstimateRecord run_subgroups(const ObservedPanel& panel, const EntryQuery& query, const SubgroupPlan& plan,
                             const WeightFunction* weights, const RankRule& rule, const FeasibilityPolicy& policy) {
  panel.check_query(query);
  EstimateRecord record;
  record.query = query;
  record.mode = plan.mode();
  if (plan.subgroups.empty()) {
    record.reason = "empty subgroup plan";
    return record;
  }
  const double target_weight = weights ? weights->at(query.level) : 1.0;

  double sum = 0.0;
  for (const auto& group : plan.subgroups) {
    const auto r = static_cast<Eigen::Index>(group.rows.size());
    const auto c = static_cast<Eigen::Index>(group.cols.size());
    Eigen::MatrixXd s(r, c);
    Eigen::VectorXd q(c);
    Eigen::VectorXd x(r);
    for (Eigen::Index b = 0; b < c; ++b) {
      const auto col = group.cols[static_cast<std::size_t>(b)];
      const double w = weights ? weights->at(group.col_levels[static_cast<std::size_t>(b)]) : 1.0;
      q[b] = w * panel.outcome(query.row, col);
      for (Eigen::Index a = 0; a < r; ++a) s(a, b) = w * panel.outcome(group.rows[static_cast<std::size_t>(a)], col);
    }
    for (Eigen::Index a = 0; a < r; ++a) x[a] = panel.outcome(group.rows[static_cast<std::size_t>(a)], query.col);

    SubgroupDiagnostics diag;
    diag.anchor_rows = group.rows.size();
    diag.anchor_cols = group.cols.size();
    if (s.size() == 0 || s.cwiseAbs().maxCoeff() == 0.0) {
      diag.condition_number = std::numeric_limits<double>::infinity();
      record.subgroups.push_back(std::move(diag));
      continue;
    }
    const auto svd = thin_svd(s);
    const auto fit = truncated_beta(svd, q, rule);
    const auto verdict = judge(svd, rule.select(svd.singular_values), q, x, policy);
    diag.lambda_used = verdict.lambda_used;
    diag.residual_x = verdict.residual_x;
    diag.residual_q = verdict.residual_q;
    diag.condition_number = condition_number(svd.singular_values);
    diag.passed = verdict.pass;
    diag.beta = fit.beta;
    diag.estimate = x.dot(fit.beta);
    diag.noise_sd = pooled_residual_sd(s, q, fit) / target_weight;
    diag.sigma_tilde = diag.noise_sd * fit.beta.norm();
    if (diag.passed) {
      sum += diag.estimate;
      ++record.k_used;
    }
    record.subgroups.push_back(std::move(diag));
  }
  if (record.k_used == 0) {
    record.reason = "no subgroup passed the feasibility checks";
  } else {
    record.estimate = sum / static_cast<double>(record.k_used);
  }
  return record;
}

}  // namespace

FeasibilityVerdict feasibility_check(const Eigen::MatrixXd& s_w, const Eigen::VectorXd& q_w,
                                     const Eigen::VectorXd& x, const RankRule& rule, const FeasibilityPolicy& policy) {
  if (s_w.cols() != q_w.size() || s_w.rows() != x.size()) throw UsageError("feasibility check: inconsistent shapes");
  if (s_w.size() == 0 || s_w.cwiseAbs().maxCoeff() == 0.0) {
    return {false, x.norm() == 0.0 ? 0.0 : 1.0, q_w.norm() == 0.0 ? 0.0 : 1.0, 0, false};
  }
  const auto svd = thin_svd(s_w);
  return judge(svd, rule.select(svd.singular_values), q_w, x, policy);
}

EstimateRecord snn_estimate(const ObservedPanel& panel, const EntryQuery& query, const SubgroupPlan& plan,
                            const RankRule& rule, const FeasibilityPolicy& policy) {
  if (plan.mode() != AnchorMode::kStrict) throw UsageError("snn_estimate needs a strict anchor plan");
  return run_subgroups(panel, query, plan, nullptr, rule, policy);
}

EstimateRecord msnn_estimate(const ObservedPanel& panel, const EntryQuery& query, const SubgroupPlan& plan,
                             const WeightFunction& weights, const RankRule& rule, const FeasibilityPolicy& policy) {
  if (plan.mode() != AnchorMode::kMixed) throw UsageError("msnn_estimate needs a mixed anchor plan");
  for (const auto& group : plan.subgroups) {
    for (int level : group.col_levels) {
      if (!weights.covers(level)) throw ConfigError("no weight for treatment level " + std::to_string(level));
    }
  }
  return run_subgroups(panel, query, plan, &weights, rule, policy);
}

double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 0.5 + level / 2.0);
}

std::optional<ConfidenceInterval> plugin_ci(double estimate, std::span<const double> sigma_tilde, double level) {
  if (sigma_tilde.size() < 2) return std::nullopt;
  double total = 0.0;
  for (double s : sigma_tilde) {
    if (!std::isfinite(s)) return std::nullopt;
    total += s * s;
  }
  const double half = normal_critical_value(level) * std::sqrt(total) / static_cast<double>(sigma_tilde.size());
  return ConfidenceInterval{estimate - half, estimate + half, level};
}

std::optional<ConfidenceInterval> plugin_ci(const EstimateRecord& record, double level) {
  if (!record.estimate || record.k_used < 2) return std::nullopt;
  std::vector<double> sigmas;
  for (const auto& g : record.subgroups) {
    if (g.passed) sigmas.push_back(g.sigma_tilde);
  }
  return plugin_ci(*record.estimate, sigmas, level);
}

EstimateRecord estimate_entry(const ObservedPanel& panel, const EntryQuery& query, Estimator estimator,
                              const WeightFunction& weights, const PipelineOptions& options,
                              std::uint64_t partition_seed) {
  panel.check_query(query);
  options.policy.validate();
  if (options.k < 1) throw ConfigError("number of subgroups must be >= 1");

  EstimateRecord record;
  record.query = query;
  record.mode = estimator == Estimator::kSnn ? AnchorMode::kStrict : AnchorMode::kMixed;

  bool level_in_column = false;
  for (std::size_t a = 0; a < panel.rows() && !level_in_column; ++a) {
    level_in_column = a != query.row && panel.treatment(a, query.col) == query.level;
  }
  if (!level_in_column) {
    record.reason = "level " + std::to_string(query.level) + " never observed in column " +
                    panel.col_ids()[query.col] + " outside the target row";
    return record;
  }

  BicliqueOptions search = options.biclique;
  search.min_rows = std::max(search.min_rows, options.k * options.policy.min_rows);
  search.min_cols = std::max(search.min_cols, options.policy.min_cols);

  const auto attempt = [&](AnchorMode mode) -> std::optional<EstimateRecord> {
    auto anchor = find_anchor(panel, query, mode, search);
    if (!anchor) return std::nullopt;
    const auto plan = partition_subgroups(*anchor, options.k, partition_seed);
    if (estimator == Estimator::kSnn) return snn_estimate(panel, query, plan, options.rule, options.policy);
    auto mixed_plan = plan;
    for (auto& g : mixed_plan.subgroups) g.mode = AnchorMode::kMixed;
    return msnn_estimate(panel, query, mixed_plan, weights, options.rule, options.policy);
  };

  auto primary = attempt(record.mode);
  if (estimator == Estimator::kMsnn && options.strict_fallback && (!primary || !primary->feasible())) {
    auto fallback = attempt(AnchorMode::kStrict);
    if (fallback && fallback->feasible()) {
      fallback->reason = "strict anchor fallback";
      primary = std::move(fallback);
    }
  }
  if (!primary) {
    record.reason = "no " + to_string(record.mode) + " anchor of at least " + std::to_string(search.min_rows) +
                    "x" + std::to_string(search.min_cols);
    return record;
  }
  record = std::move(*primary);
  if (record.feasible() && record.k_used >= 2) record.ci = plugin_ci(record, options.ci_level);
  return record;
}

}  // namespace msnn
