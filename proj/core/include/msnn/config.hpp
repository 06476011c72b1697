#pragma once

// Experiment configuration with a plain `key = value` text form. Formatting a
// config and parsing it back yields an identical config, so a run manifest can
// be fed straight back into `simulate`.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msnn/estimators.hpp"
#include "msnn/spectral.hpp"

namespace msnn {

enum class Mechanism { kMcar, kMnarSoftmax };

std::string to_string(Mechanism mechanism);

struct GeneratorConfig {
  std::size_t m = 300;
  std::size_t n = 100;
  std::size_t rank = 3;
  std::vector<double> scales{1.0, 5.0, 25.0, 625.0};
  double sigma_rel = 0.001;
  Mechanism mechanism = Mechanism::kMcar;
  // P(D = 0) first, then one entry per level.
  std::vector<double> mcar{0.115, 0.01, 0.025, 0.05, 0.8};
  double mnar_lambda = 0.05;
  double p0_thinning = 0.0;
};

struct ExperimentConfig {
  GeneratorConfig generator;
  std::vector<Estimator> estimators{Estimator::kSnn, Estimator::kMsnn};
  std::vector<int> levels{1, 2, 3};  // empty means every level
  std::size_t k = 1;
  RankRule rule = RankRule::gap(0.1);
  FeasibilityPolicy policy;
  WeightSource weights = WeightSource::kOracle;
  std::size_t replicates = 10;
  std::uint64_t seed = 0;
  bool exact_biclique = false;
  std::size_t biclique_budget = 1'000'000;
  bool strict_fallback = true;
  double ci_level = 0.95;
  bool dump_estimates = true;
  std::string out_dir = "out";

  // Throws ConfigError on any inconsistent setting.
  void validate() const;
  // Levels to estimate: `levels`, or 1..l when empty.
  std::vector<int> target_levels(int panel_levels) const;
  PipelineOptions pipeline_options() const;
};

// Lines are `key = value`; blank lines and `#` comments are ignored. Unknown
// keys and malformed values raise ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string format_config(const ExperimentConfig& config);

// Comma-separated lists as used in config values and CLI flags.
std::vector<int> parse_level_list(const std::string& text);
std::vector<double> parse_real_list(const std::string& text);
std::vector<Estimator> parse_estimator_list(const std::string& text);

}  // namespace msnn
