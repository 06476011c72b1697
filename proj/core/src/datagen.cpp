#include "msnn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "msnn/csv.hpp"
#include "msnn/error.hpp"
#include "msnn/random.hpp"

namespace msnn {

LatentModel generate_model(std::size_t m, std::size_t n, std::size_t rank, std::vector<double> scales,
                           double sigma_rel, std::uint64_t seed, bool abs_outcomes) {
  if (m == 0 || n == 0 || rank == 0) throw DomainError("model dimensions and rank must be positive");
  if (rank > std::min(m, n)) {
    throw DomainError("rank " + std::to_string(rank) + " exceeds min(m, n) = " + std::to_string(std::min(m, n)));
  }
  if (scales.empty() || static_cast<int>(scales.size()) > kMaxLevels) {
    throw DomainError("need between 1 and " + std::to_string(kMaxLevels) + " level scales");
  }
  for (double f : scales) {
    if (!(f > 0.0) || !std::isfinite(f)) throw DomainError("level scales must be positive and finite");
  }
  if (!(sigma_rel >= 0.0) || !std::isfinite(sigma_rel)) throw DomainError("noise level must be finite and >= 0");

  LatentModel model;
  model.m = m;
  model.n = n;
  model.rank = rank;
  model.scales = std::move(scales);
  model.sigma_rel = sigma_rel;
  model.abs_outcomes = abs_outcomes;

  std::mt19937_64 rng(derive_seed(seed, Stream::kModel));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ri = static_cast<Eigen::Index>(rank);

  model.u.resize(mi, ri);
  for (Eigen::Index i = 0; i < mi; ++i) {
    for (Eigen::Index k = 0; k < ri; ++k) model.u(i, k) = normal(rng);
    model.u.row(i).normalize();
  }

  for (double f : model.scales) {
    Eigen::MatrixXd v(ni, ri);
    for (Eigen::Index j = 0; j < ni; ++j) {
      for (Eigen::Index k = 0; k < ri; ++k) v(j, k) = normal(rng);
    }
    Eigen::MatrixXd a = model.u * v.transpose();
    for (Eigen::Index j = 0; j < ni; ++j) {
      const double peak = a.col(j).cwiseAbs().maxCoeff();
      if (peak > 0.0) {
        v.row(j) *= f / peak;
        a.col(j) *= f / peak;
      }
    }
    if (abs_outcomes) a = a.cwiseAbs();
    model.v.push_back(std::move(v));
    model.mean.push_back(std::move(a));
  }
  return model;
}

ObservedPanel observe(const LatentModel& model, const TreatmentGrid& treatments, std::uint64_t noise_seed) {
  if (treatments.rows() != model.m || treatments.cols() != model.n || treatments.levels() != model.levels()) {
    throw UsageError("treatment grid does not match the model shape");
  }
  PanelBuilder builder(model.m, model.n, model.levels());
  for (std::size_t i = 0; i < model.m; ++i) {
    std::mt19937_64 rng(derive_seed(noise_seed, Stream::kNoise, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t j = 0; j < model.n; ++j) {
      const double z = normal(rng);
      const int d = treatments.at(i, j);
      if (d == 0) continue;
      builder.observe(i, j, d, model.expected(i, j, d) + model.noise_sd(d) * z);
    }
  }
  return std::move(builder).build();
}

namespace {

std::uint64_t resolve_noise_seed(std::uint64_t seed, std::optional<std::uint64_t> noise_seed) {
  return noise_seed.value_or(derive_seed(seed, Stream::kNoise));
}

int sample_categorical(std::span<const double> weights, double total, double u) {
  double acc = 0.0;
  const double target = u * total;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (target < acc) return static_cast<int>(k);
  }
  // Rounding at the top end: last category with positive weight.
  for (std::size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

}  // namespace

AssignedPanel assign_mcar(const LatentModel& model, std::span<const double> probabilities, std::uint64_t seed,
                          std::optional<std::uint64_t> noise_seed) {
  if (probabilities.size() != static_cast<std::size_t>(model.levels()) + 1) {
    throw DomainError("MCAR needs " + std::to_string(model.levels() + 1) + " probabilities (level 0 first)");
  }
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("MCAR probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("MCAR probabilities must sum to 1");

  TreatmentGrid grid(model.m, model.n, model.levels());
  for (std::size_t i = 0; i < model.m; ++i) {
    std::mt19937_64 rng(derive_seed(seed, Stream::kAssignment, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t j = 0; j < model.n; ++j) grid.set(i, j, sample_categorical(probabilities, total, unif(rng)));
  }
  auto panel = observe(model, grid, resolve_noise_seed(seed, noise_seed));
  return {std::move(grid), std::move(panel)};
}

AssignedPanel assign_mnar_softmax(const LatentModel& model, double lambda, std::uint64_t seed,
                                  std::optional<std::uint64_t> noise_seed, double p0_thinning) {
  if (!std::isfinite(lambda)) throw DomainError("softmax lambda must be finite");
  if (!model.abs_outcomes) throw UsageError("softmax assignment expects a model built with absolute outcomes");
  if (!(p0_thinning >= 0.0 && p0_thinning < 1.0)) throw DomainError("p0 thinning must lie in [0, 1)");

  const auto levels = static_cast<std::size_t>(model.levels());
  TreatmentGrid grid(model.m, model.n, model.levels());
  std::vector<double> logits(levels);
  std::vector<double> weights(levels);
  for (std::size_t i = 0; i < model.m; ++i) {
    std::mt19937_64 rng(derive_seed(seed, Stream::kAssignment, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t j = 0; j < model.n; ++j) {
      const double thin = unif(rng);
      const double pick = unif(rng);
      if (thin < p0_thinning) continue;
      for (std::size_t d = 0; d < levels; ++d) logits[d] = lambda * model.mean[d](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const double top = *std::max_element(logits.begin(), logits.end());
      double total = 0.0;
      for (std::size_t d = 0; d < levels; ++d) {
        weights[d] = std::exp(logits[d] - top);
        total += weights[d];
      }
      grid.set(i, j, sample_categorical(weights, total, pick) + 1);
    }
  }
  auto panel = observe(model, grid, resolve_noise_seed(seed, noise_seed));
  return {std::move(grid), std::move(panel)};
}

void write_ground_truth_csv(const LatentModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "row_id,col_id,treatment,A_value\n";
  for (std::size_t i = 0; i < model.m; ++i) {
    for (std::size_t j = 0; j < model.n; ++j) {
      for (int d = 1; d <= model.levels(); ++d) {
        out << i << ',' << j << ',' << d << ',' << csv::format_double(model.expected(i, j, d)) << '\n';
      }
    }
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<Eigen::MatrixXd> load_ground_truth_csv(const std::string& path, std::size_t m, std::size_t n, int levels) {
  const auto lines = csv::read_lines(path);
  if (lines.empty() || csv::trim(lines.front()) != "row_id,col_id,treatment,A_value") {
    throw ParseError("header must be 'row_id,col_id,treatment,A_value'", 1);
  }
  std::vector<Eigen::MatrixXd> truth(static_cast<std::size_t>(levels),
                                     Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(m),
                                                               static_cast<Eigen::Index>(n), std::nan("")));
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (csv::trim(lines[k]).empty()) continue;
    const auto fields = csv::split_line(lines[k], k + 1);
    if (fields.size() != 4) throw ParseError("expected 4 fields", k + 1);
    const auto i = csv::parse_integer(fields[0], k + 1);
    const auto j = csv::parse_integer(fields[1], k + 1);
    const auto d = csv::parse_integer(fields[2], k + 1);
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= m || static_cast<std::size_t>(j) >= n || d < 1 ||
        d > levels) {
      throw DomainError("ground-truth entry on line " + std::to_string(k + 1) + " out of range");
    }
    truth[static_cast<std::size_t>(d - 1)](i, j) = csv::parse_double(fields[3], k + 1);
  }
  return truth;
}

}  // namespace msnn
