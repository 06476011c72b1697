#include "msnn/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msnn/csv.hpp"
#include "msnn/error.hpp"

namespace msnn {

SvdFactors thin_svd(const Eigen::MatrixXd& matrix) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {svd.singularValues(), svd.matrixU(), svd.matrixV()};
}

RankRule RankRule::fixed(std::size_t rank) {
  if (rank < 1) throw ConfigError("fixed rank must be >= 1");
  return {Mode::kFixed, rank, 0.0};
}

RankRule RankRule::energy(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("energy threshold must lie in (0, 1)");
  return {Mode::kEnergy, 0, threshold};
}

RankRule RankRule::gap(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("gap ratio must lie in (0, 1)");
  return {Mode::kGap, 0, ratio};
}

RankRule::Selection RankRule::select(const Eigen::VectorXd& singular_values) const {
  const auto available = static_cast<std::size_t>(singular_values.size());
  if (available == 0 || singular_values[0] <= 0.0) return {0, false};
  const double top = singular_values[0];
  std::size_t nonzero = 0;
  while (nonzero < available && singular_values[nonzero] >= kNumericalZeroRatio * top) ++nonzero;

  Selection sel;
  switch (mode_) {
    case Mode::kFixed:
      sel.clipped = rank_ > available;
      sel.rank = std::min({rank_, available, nonzero});
      break;
    case Mode::kEnergy: {
      const double total = singular_values.squaredNorm();
      double acc = 0.0;
      sel.rank = available;
      for (std::size_t l = 0; l < available; ++l) {
        acc += singular_values[l] * singular_values[l];
        if (acc >= parameter_ * total) {
          sel.rank = l + 1;
          break;
        }
      }
      sel.rank = std::min(sel.rank, nonzero);
      break;
    }
    case Mode::kGap:
      sel.rank = 0;
      while (sel.rank < available && singular_values[sel.rank] >= parameter_ * top) ++sel.rank;
      sel.rank = std::min(sel.rank, nonzero);
      break;
  }
  return sel;
}

std::string RankRule::to_string() const {
  switch (mode_) {
    case Mode::kFixed:
      return "fixed:" + std::to_string(rank_);
    case Mode::kEnergy:
    case Mode::kGap:
      return (mode_ == Mode::kEnergy ? "energy:" : "gap:") + csv::format_double(parameter_);
  }
  return {};
}

RankRule RankRule::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("rank rule must look like fixed:3, energy:0.95 or gap:0.1");
  const auto kind = text.substr(0, colon);
  const auto value = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    if (kind == "fixed") {
      const long long rank = std::stoll(value, &used);
      if (used != value.size() || rank < 1) throw ConfigError("fixed rank must be a positive integer");
      return fixed(static_cast<std::size_t>(rank));
    }
    const double param = std::stod(value, &used);
    if (used != value.size()) throw ConfigError("bad rank rule parameter '" + value + "'");
    if (kind == "energy") return energy(param);
    if (kind == "gap") return gap(param);
  } catch (const std::logic_error&) {
    throw ConfigError("bad rank rule parameter '" + value + "'");
  }
  throw ConfigError("unknown rank rule '" + kind + "'");
}

BetaFit truncated_beta(const Eigen::MatrixXd& s, const Eigen::VectorXd& q, const RankRule& rule) {
  if (s.cols() != q.size()) {
    throw UsageError("q has " + std::to_string(q.size()) + " entries but S has " + std::to_string(s.cols()) +
                     " columns");
  }
  if (s.size() == 0 || s.cwiseAbs().maxCoeff() == 0.0) throw DegenerateMatrixError("anchor matrix is all zero");
  return truncated_beta(thin_svd(s), q, rule);
}

BetaFit truncated_beta(const SvdFactors& svd, const Eigen::VectorXd& q, const RankRule& rule) {
  if (svd.right.rows() != q.size()) throw UsageError("q length does not match the anchor column count");
  if (svd.singular_values.size() == 0 || svd.singular_values[0] <= 0.0) {
    throw DegenerateMatrixError("anchor matrix is all zero");
  }
  const auto sel = rule.select(svd.singular_values);
  const auto k = static_cast<Eigen::Index>(sel.rank);
  BetaFit fit;
  fit.lambda_used = sel.rank;
  fit.clipped = sel.clipped;
  const Eigen::VectorXd coeffs =
      (svd.right.leftCols(k).transpose() * q).cwiseQuotient(svd.singular_values.head(k));
  fit.beta = svd.left.leftCols(k) * coeffs;
  fit.svd = svd;
  return fit;
}

double basis_residual(const Eigen::VectorXd& v, const Eigen::MatrixXd& basis) {
  if (basis.cols() > 0 && basis.rows() != v.size()) throw UsageError("basis and vector dimensions differ");
  const double norm = v.norm();
  if (norm == 0.0) return 0.0;
  const Eigen::VectorXd rest = basis.cols() > 0 ? Eigen::VectorXd(v - basis * (basis.transpose() * v)) : v;
  return rest.norm() / std::max(norm, 1e-12);
}

double subspace_residual(const Eigen::VectorXd& v, const Eigen::MatrixXd& m) {
  if (m.rows() != v.size()) throw UsageError("vector length does not match matrix row count");
  if (m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0) return v.norm() == 0.0 ? 0.0 : 1.0;
  const auto svd = thin_svd(m);
  Eigen::Index k = 0;
  while (k < svd.singular_values.size() &&
         svd.singular_values[k] >= kNumericalZeroRatio * svd.singular_values[0]) {
    ++k;
  }
  return basis_residual(v, svd.left.leftCols(k));
}

double condition_number(const Eigen::VectorXd& singular_values) {
  if (singular_values.size() == 0 || singular_values[0] <= 0.0) {
    throw DegenerateMatrixError("condition number of an all-zero matrix");
  }
  const double top = singular_values[0];
  const double bottom = singular_values[singular_values.size() - 1];
  if (bottom < kNumericalZeroRatio * top) return std::numeric_limits<double>::infinity();
  return top / bottom;
}

double condition_number(const Eigen::MatrixXd& s) {
  if (s.size() == 0) throw DegenerateMatrixError("condition number of an empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s);
  return condition_number(Eigen::VectorXd(svd.singularValues()));
}

}  // namespace msnn
