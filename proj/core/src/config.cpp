#include "msnn/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "msnn/csv.hpp"
#include "msnn/error.hpp"

namespace msnn {

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto trimmed = csv::trim(item);
    if (trimmed.empty()) throw ConfigError("empty item in list '" + text + "'");
    items.emplace_back(trimmed);
  }
  return items;
}

std::string join_reals(const std::vector<double>& values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k > 0) out += ",";
    out += csv::format_double(values[k]);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k > 0) out += ",";
    if constexpr (std::is_same_v<T, Estimator>) {
      out += values[k] == Estimator::kSnn ? "snn" : "msnn";
    } else {
      out += std::to_string(values[k]);
    }
  }
  return out;
}

double to_real(const std::string& value) {
  try {
    return csv::parse_double(value, 0);
  } catch (const ParseError&) {
    throw ConfigError("expected a number, got '" + value + "'");
  }
}

std::size_t to_count(const std::string& value) {
  long long parsed = 0;
  try {
    parsed = csv::parse_integer(value, 0);
  } catch (const ParseError&) {
    throw ConfigError("expected a non-negative integer, got '" + value + "'");
  }
  if (parsed < 0) throw ConfigError("expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(parsed);
}

std::uint64_t to_seed(const std::string& value) {
  std::uint64_t seed = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, seed);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected an unsigned 64-bit seed, got '" + value + "'");
  return seed;
}

bool to_bool(const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw ConfigError("expected a boolean, got '" + value + "'");
}

void apply(ExperimentConfig& config, const std::string& key, const std::string& value) {
  auto& gen = config.generator;
  if (key == "m") {
    gen.m = to_count(value);
  } else if (key == "n") {
    gen.n = to_count(value);
  } else if (key == "rank") {
    gen.rank = to_count(value);
  } else if (key == "scales") {
    gen.scales = parse_real_list(value);
  } else if (key == "sigma_rel") {
    gen.sigma_rel = to_real(value);
  } else if (key == "mechanism") {
    if (value == "mcar") {
      gen.mechanism = Mechanism::kMcar;
    } else if (value == "mnar") {
      gen.mechanism = Mechanism::kMnarSoftmax;
    } else {
      throw ConfigError("mechanism must be mcar or mnar, got '" + value + "'");
    }
  } else if (key == "mcar_probabilities") {
    gen.mcar = parse_real_list(value);
  } else if (key == "mnar_lambda") {
    gen.mnar_lambda = to_real(value);
  } else if (key == "p0_thinning") {
    gen.p0_thinning = to_real(value);
  } else if (key == "estimators") {
    config.estimators = parse_estimator_list(value);
  } else if (key == "levels") {
    config.levels = value == "all" ? std::vector<int>{} : parse_level_list(value);
  } else if (key == "k") {
    config.k = to_count(value);
  } else if (key == "rank_rule") {
    config.rule = RankRule::parse(value);
  } else if (key == "x_tol") {
    config.policy.x_residual_tol = to_real(value);
  } else if (key == "q_tol") {
    config.policy.q_residual_tol = to_real(value);
  } else if (key == "min_rows") {
    config.policy.min_rows = to_count(value);
  } else if (key == "min_cols") {
    config.policy.min_cols = to_count(value);
  } else if (key == "reject_clipped_rank") {
    config.policy.reject_clipped_rank = to_bool(value);
  } else if (key == "weights") {
    config.weights = parse_weight_source(value);
  } else if (key == "replicates") {
    config.replicates = to_count(value);
  } else if (key == "seed") {
    config.seed = to_seed(value);
  } else if (key == "exact_biclique") {
    config.exact_biclique = to_bool(value);
  } else if (key == "biclique_budget") {
    config.biclique_budget = to_count(value);
  } else if (key == "strict_fallback") {
    config.strict_fallback = to_bool(value);
  } else if (key == "ci_level") {
    config.ci_level = to_real(value);
  } else if (key == "dump_estimates") {
    config.dump_estimates = to_bool(value);
  } else if (key == "out") {
    config.out_dir = value;
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

}  // namespace

std::string to_string(Mechanism mechanism) { return mechanism == Mechanism::kMcar ? "mcar" : "mnar"; }

std::vector<int> parse_level_list(const std::string& text) {
  std::vector<int> levels;
  for (const auto& item : split_list(text)) {
    const auto value = to_count(item);
    if (value < 1 || value > static_cast<std::size_t>(kMaxLevels)) {
      throw ConfigError("level " + item + " outside 1.." + std::to_string(kMaxLevels));
    }
    levels.push_back(static_cast<int>(value));
  }
  return levels;
}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> values;
  for (const auto& item : split_list(text)) values.push_back(to_real(item));
  return values;
}

std::vector<Estimator> parse_estimator_list(const std::string& text) {
  if (text == "both") return {Estimator::kSnn, Estimator::kMsnn};
  std::vector<Estimator> out;
  for (const auto& item : split_list(text)) {
    std::string lower = item;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (lower == "snn") {
      out.push_back(Estimator::kSnn);
    } else if (lower == "msnn") {
      out.push_back(Estimator::kMsnn);
    } else {
      throw ConfigError("unknown estimator '" + item + "'");
    }
  }
  return out;
}

void ExperimentConfig::validate() const {
  const auto& gen = generator;
  if (gen.m < 2 || gen.n < 2) throw ConfigError("m and n must be at least 2");
  if (gen.rank < 1 || gen.rank > std::min(gen.m, gen.n)) throw ConfigError("rank must be in 1..min(m, n)");
  if (gen.scales.empty() || static_cast<int>(gen.scales.size()) > kMaxLevels) {
    throw ConfigError("scales must list between 1 and " + std::to_string(kMaxLevels) + " levels");
  }
  for (double f : gen.scales) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("scales must be positive");
  }
  if (!(gen.sigma_rel >= 0.0) || !std::isfinite(gen.sigma_rel)) throw ConfigError("sigma_rel must be >= 0");
  if (gen.mechanism == Mechanism::kMcar) {
    if (gen.mcar.size() != gen.scales.size() + 1) {
      throw ConfigError("mcar_probabilities needs P(D=0) plus one probability per level (" +
                        std::to_string(gen.scales.size() + 1) + " values)");
    }
    double sum = 0.0;
    for (double p : gen.mcar) {
      if (!(p >= 0.0)) throw ConfigError("mcar_probabilities must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mcar_probabilities must sum to 1");
  } else {
    if (!std::isfinite(gen.mnar_lambda)) throw ConfigError("mnar_lambda must be finite");
    if (!(gen.p0_thinning >= 0.0 && gen.p0_thinning < 1.0)) throw ConfigError("p0_thinning must be in [0, 1)");
  }
  if (estimators.empty()) throw ConfigError("select at least one estimator");
  for (int level : levels) {
    if (level < 1 || level > static_cast<int>(gen.scales.size())) {
      throw ConfigError("target level " + std::to_string(level) + " outside 1.." + std::to_string(gen.scales.size()));
    }
  }
  if (k < 1) throw ConfigError("k must be at least 1");
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must be in (0, 1)");
  if (biclique_budget < 1) throw ConfigError("biclique_budget must be positive");
  policy.validate();
}

std::vector<int> ExperimentConfig::target_levels(int panel_levels) const {
  if (!levels.empty()) return levels;
  std::vector<int> all(static_cast<std::size_t>(panel_levels));
  for (int d = 1; d <= panel_levels; ++d) all[static_cast<std::size_t>(d - 1)] = d;
  return all;
}

PipelineOptions ExperimentConfig::pipeline_options() const {
  PipelineOptions options;
  options.k = k;
  options.rule = rule;
  options.policy = policy;
  options.biclique.mode = exact_biclique ? BicliqueSearch::kExact : BicliqueSearch::kGreedy;
  options.biclique.budget = biclique_budget;
  options.ci_level = ci_level;
  options.strict_fallback = strict_fallback;
  return options;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = csv::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(csv::trim(body.substr(0, eq)));
    const std::string value(csv::trim(body.substr(eq + 1)));
    try {
      apply(config, key, value);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const ConfigError& err) {
    throw ConfigError(path + ": " + err.what());
  }
}

std::string format_config(const ExperimentConfig& config) {
  const auto& gen = config.generator;
  std::ostringstream out;
  out << "m = " << gen.m << '\n'
      << "n = " << gen.n << '\n'
      << "rank = " << gen.rank << '\n'
      << "scales = " << join_reals(gen.scales) << '\n'
      << "sigma_rel = " << csv::format_double(gen.sigma_rel) << '\n'
      << "mechanism = " << to_string(gen.mechanism) << '\n'
      << "mcar_probabilities = " << join_reals(gen.mcar) << '\n'
      << "mnar_lambda = " << csv::format_double(gen.mnar_lambda) << '\n'
      << "p0_thinning = " << csv::format_double(gen.p0_thinning) << '\n'
      << "estimators = " << join(config.estimators) << '\n'
      << "levels = " << (config.levels.empty() ? std::string("all") : join(config.levels)) << '\n'
      << "k = " << config.k << '\n'
      << "rank_rule = " << config.rule.to_string() << '\n'
      << "x_tol = " << csv::format_double(config.policy.x_residual_tol) << '\n'
      << "q_tol = " << csv::format_double(config.policy.q_residual_tol) << '\n'
      << "min_rows = " << config.policy.min_rows << '\n'
      << "min_cols = " << config.policy.min_cols << '\n'
      << "reject_clipped_rank = " << (config.policy.reject_clipped_rank ? "true" : "false") << '\n'
      << "weights = " << to_string(config.weights) << '\n'
      << "replicates = " << config.replicates << '\n'
      << "seed = " << config.seed << '\n'
      << "exact_biclique = " << (config.exact_biclique ? "true" : "false") << '\n'
      << "biclique_budget = " << config.biclique_budget << '\n'
      << "strict_fallback = " << (config.strict_fallback ? "true" : "false") << '\n'
      << "ci_level = " << csv::format_double(config.ci_level) << '\n'
      << "dump_estimates = " << (config.dump_estimates ? "true" : "false") << '\n'
      << "out = " << config.out_dir << '\n';
  return out.str();
}

}  // namespace msnn
