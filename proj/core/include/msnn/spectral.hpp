#pragma once

// Truncated-SVD building blocks: principal-component regression weights,
// subspace membership residuals and conditioning diagnostics.

#include <cstddef>
#include <string>

#include <Eigen/Dense>

namespace msnn {

// Thin SVD with singular values in descending order.
struct SvdFactors {
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd left;   // rows x k, orthonormal columns
  Eigen::MatrixXd right;  // cols x k, orthonormal columns
};

SvdFactors thin_svd(const Eigen::MatrixXd& matrix);

// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kNumericalZeroRatio = 1e-12;

class RankRule {
 public:
  enum class Mode { kFixed, kEnergy, kGap };

  // Keep exactly `rank` components (clipped to the matrix shape).
  static RankRule fixed(std::size_t rank);
  // Smallest rank whose squared singular values reach `threshold` of the total.
  static RankRule energy(double threshold);
  // Keep every singular value >= `ratio` * largest.
  static RankRule gap(double ratio);

  Mode mode() const noexcept { return mode_; }
  std::size_t fixed_rank() const noexcept { return rank_; }
  double parameter() const noexcept { return parameter_; }

  struct Selection {
    std::size_t rank = 0;
    bool clipped = false;  // a fixed rank exceeded what the matrix supports
  };
  // `singular_values` must be in descending order.
  Selection select(const Eigen::VectorXd& singular_values) const;

  // "fixed:3", "energy:0.95", "gap:0.1"
  std::string to_string() const;
  static RankRule parse(const std::string& text);

  friend bool operator==(const RankRule&, const RankRule&) = default;

 private:
  RankRule(Mode mode, std::size_t rank, double parameter) : mode_(mode), rank_(rank), parameter_(parameter) {}

  Mode mode_;
  std::size_t rank_;
  double parameter_;
};

struct BetaFit {
  Eigen::VectorXd beta;        // one weight per row of S
  std::size_t lambda_used = 0;
  bool clipped = false;
  SvdFactors svd;              // factors of S, retained for diagnostics
};

// beta = sum_{l <= lambda} (1/tau_l) u_l v_l^T q, i.e. the rank-lambda
// pseudo-inverse of S^T applied to q. S is rows x cols, q has one entry per
// column. Throws DegenerateMatrixError for an all-zero S and UsageError on a
// length mismatch.
BetaFit truncated_beta(const Eigen::MatrixXd& s, const Eigen::VectorXd& q, const RankRule& rule);
BetaFit truncated_beta(const SvdFactors& svd, const Eigen::VectorXd& q, const RankRule& rule);

// ||v - P v|| / max(||v||, 1e-12) with P the projector onto the span of the
// orthonormal columns of `basis`. A zero vector has residual 0.
double basis_residual(const Eigen::VectorXd& v, const Eigen::MatrixXd& basis);

// Relative distance of v from the column space of m.
double subspace_residual(const Eigen::VectorXd& v, const Eigen::MatrixXd& m);

// tau_max / tau_min; +infinity when tau_min < 1e-12 * tau_max.
double condition_number(const Eigen::MatrixXd& s);
double condition_number(const Eigen::VectorXd& singular_values);

}  // namespace msnn
