// Command line front end: simulate, estimate, theory, report.

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msnn/config.hpp"
#include "msnn/csv.hpp"
#include "msnn/error.hpp"
#include "msnn/harness.hpp"
#include "msnn/theory.hpp"

namespace {

// Flags shared by `simulate` and `estimate`; unset flags leave the config alone.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<std::size_t> k;
  std::optional<std::string> levels;
  std::optional<double> x_tol;
  std::optional<double> q_tol;
  std::optional<std::string> rank_rule;
  std::optional<std::string> weights;
  std::optional<std::string> estimators;
  bool exact_biclique = false;
  bool no_dump = false;
  std::optional<std::string> out;

  void attach(CLI::App& app, bool with_replicates) {
    app.add_option("--seed", seed, "Master seed");
    if (with_replicates) app.add_option("--replicates", replicates, "Number of replicates");
    app.add_option("--k", k, "Subgroups per estimate");
    app.add_option("--levels", levels, "Comma-separated target levels, or 'all'");
    app.add_option("--x-tol", x_tol, "Residual tolerance of the target column over anchor rows");
    app.add_option("--q-tol", q_tol, "Residual tolerance of the target row over anchor columns");
    app.add_option("--rank-rule", rank_rule, "fixed:N, energy:T or gap:R");
    app.add_option("--weights", weights, "Level weights")->check(CLI::IsMember({"oracle", "estimated", "unit"}));
    app.add_option("--estimators", estimators, "snn, msnn or both");
    app.add_flag("--exact-biclique", exact_biclique, "Exact (budgeted) biclique search instead of greedy");
    app.add_flag("--no-dump", no_dump, "Skip the per-entry estimates file");
    app.add_option("--out", out, "Output directory");
  }

  void apply(msnn::ExperimentConfig& config) const {
    if (seed) config.seed = *seed;
    if (replicates) config.replicates = *replicates;
    if (k) config.k = *k;
    if (levels) config.levels = *levels == "all" ? std::vector<int>{} : msnn::parse_level_list(*levels);
    if (x_tol) config.policy.x_residual_tol = *x_tol;
    if (q_tol) config.policy.q_residual_tol = *q_tol;
    if (rank_rule) config.rule = msnn::RankRule::parse(*rank_rule);
    if (weights) config.weights = msnn::parse_weight_source(*weights);
    if (estimators) config.estimators = msnn::parse_estimator_list(*estimators);
    if (exact_biclique) config.exact_biclique = true;
    if (no_dump) config.dump_estimates = false;
    if (out) config.out_dir = *out;
  }
};

std::string fixed_width(double value, int precision) {
  std::ostringstream os;
  os << std::setprecision(precision) << value;
  return os.str();
}

void print_metrics(const std::vector<msnn::MetricsRow>& rows) {
  std::cout << std::left << std::setw(6) << "est" << std::setw(7) << "level" << std::setw(22) << "FR %"
            << std::setw(26) << "MRE" << "observed %\n";
  for (const auto& row : rows) {
    std::cout << std::left << std::setw(6) << msnn::to_string(row.estimator) << std::setw(7) << row.level
              << std::setw(22) << (fixed_width(row.fr_mean, 4) + " +/- " + fixed_width(row.fr_std, 3))
              << std::setw(26) << (fixed_width(row.mre_mean, 4) + " +/- " + fixed_width(row.mre_std, 3))
              << fixed_width(row.proportion_mean, 4) << '\n';
  }
}

int run_simulate(const std::string& config_path, const Overrides& overrides) {
  auto config = config_path.empty() ? msnn::ExperimentConfig{} : msnn::load_config(config_path);
  overrides.apply(config);
  config.validate();
  const auto result = msnn::run_simulation_study(config);
  msnn::emit_report(result, config, config.out_dir);
  print_metrics(result.metrics);
  std::cout << "wrote " << config.out_dir << '\n';
  return 0;
}

int run_estimate(const std::string& panel_path, const std::string& config_path, const std::string& targets,
                 const Overrides& overrides) {
  msnn::ExperimentConfig config;
  config.levels.clear();
  config.weights = msnn::WeightSource::kEstimated;
  config.replicates = 1;
  if (!config_path.empty()) config = msnn::load_config(config_path);
  overrides.apply(config);

  const auto panel = msnn::load_panel_csv(panel_path);
  std::vector<msnn::EntryQuery> queries;
  if (targets == "all-missing" || targets == "all") {
    queries = msnn::select_targets(
        panel, targets == "all" ? msnn::TargetSelection::kAll : msnn::TargetSelection::kAllMissing,
        config.target_levels(panel.levels()));
  } else {
    queries = msnn::parse_targets(panel, targets);
  }
  const auto result = msnn::run_real_panel(panel, queries, config);
  config.dump_estimates = true;
  msnn::emit_report(result, config, config.out_dir);
  print_metrics(result.metrics);
  std::cout << "wrote " << config.out_dir << '\n';
  return 0;
}

struct TheoryArgs {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t r = 1;
  std::size_t c = 1;
  std::string p;
  int level = 1;
  std::size_t replicates = 20000;
  std::uint64_t seed = 0;
  std::size_t budget = 1'000'000;
  bool exact = false;
  std::optional<std::string> out;
};

int run_theory(const TheoryArgs& args) {
  msnn::TheoryInstance inst;
  inst.m = args.m;
  inst.n = args.n;
  inst.r = args.r;
  inst.c = args.c;
  inst.p = msnn::parse_real_list(args.p);
  inst.level = args.level;
  inst.validate();

  const auto snn = msnn::expected_k_closed_form(inst, msnn::Estimator::kSnn);
  const auto msnn_form = msnn::expected_k_closed_form(inst, msnn::Estimator::kMsnn);
  const auto ratios = msnn::efficiency_ratios(inst);
  std::cout << "gamma                 " << msnn::csv::format_double(msnn::gamma(inst.p, inst.r)) << '\n'
            << "E[K'] SNN closed form  " << msnn::csv::format_double(snn.value) << (snn.overflow ? " (overflow)" : "")
            << '\n'
            << "E[K'] MSNN closed form " << msnn::csv::format_double(msnn_form.value)
            << (msnn_form.overflow ? " (overflow)" : "") << '\n'
            << "MSNN / SNN             " << msnn::csv::format_double(ratios.msnn_over_snn) << '\n'
            << "SNN(d) / MSNN(d_max)   " << msnn::csv::format_double(ratios.snn_d_over_msnn_dmax) << '\n'
            << "MSNN(d) / MSNN(d_max)  " << msnn::csv::format_double(ratios.msnn_d_over_msnn_dmax) << '\n';

  const auto comparison = args.exact ? msnn::exact_expectations(inst)
                                     : msnn::monte_carlo_expectations(inst, args.replicates, args.seed, args.budget);
  for (const auto* report : {&comparison.snn, &comparison.msnn}) {
    std::cout << msnn::to_string(report->estimator) << " " << report->method << ": E[K'] = "
              << msnn::csv::format_double(report->k_prime.mean) << " +/- "
              << msnn::csv::format_double(report->k_prime.se) << ", P(K>=1) = "
              << msnn::csv::format_double(report->k_geq_1.mean) << '\n';
  }
  std::cout << "ratio " << msnn::csv::format_double(comparison.k_prime_ratio.mean) << " +/- "
            << msnn::csv::format_double(comparison.k_prime_ratio.se) << '\n';

  if (args.out) {
    const std::filesystem::path root(*args.out);
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) throw msnn::IoError("cannot create output directory '" + *args.out + "': " + ec.message());
    std::ofstream counts(root / "theory.csv", std::ios::binary | std::ios::trunc);
    counts << msnn::count_report_csv_header() << '\n' << msnn::count_report_csv_row(comparison) << '\n';
    std::ofstream sparsity(root / "sparsity.csv", std::ios::binary | std::ios::trunc);
    sparsity << "alpha,row_term,col_term,satisfied\n";
    for (const auto& check : msnn::sparsity_conditions(inst)) {
      sparsity << msnn::csv::format_double(check.alpha) << ',' << msnn::csv::format_double(check.row_term) << ','
               << msnn::csv::format_double(check.col_term) << ',' << (check.satisfied ? "yes" : "no") << '\n';
    }
    if (!counts || !sparsity) throw msnn::IoError("failed writing theory output under '" + *args.out + "'");
    std::cout << "wrote " << *args.out << '\n';
  }
  return 0;
}

int run_report(const std::string& dir) {
  print_metrics(msnn::rerender_report(dir));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed synthetic nearest neighbour estimation toolkit"};
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "Run a replicated simulation study");
  std::string sim_config;
  Overrides sim_overrides;
  simulate->add_option("config", sim_config, "key = value config file (defaults apply when omitted)");
  sim_overrides.attach(*simulate, true);

  auto* estimate = app.add_subcommand("estimate", "Estimate entries of an observed panel CSV");
  std::string panel_path;
  std::string est_config;
  std::string targets = "all-missing";
  Overrides est_overrides;
  estimate->add_option("panel", panel_path, "Panel CSV (row_id,col_id,treatment,outcome)")->required();
  estimate->add_option("--config", est_config, "key = value config file");
  estimate->add_option("--targets", targets, "all-missing, all, or 'row:col:level;...'");
  est_overrides.attach(*estimate, false);

  auto* theory = app.add_subcommand("theory", "Closed-form and simulated anchor counts");
  TheoryArgs theory_args;
  theory->add_option("--m", theory_args.m, "Rows")->required();
  theory->add_option("--n", theory_args.n, "Columns")->required();
  theory->add_option("--r", theory_args.r, "Anchor rows");
  theory->add_option("--c", theory_args.c, "Anchor columns");
  theory->add_option("--p", theory_args.p, "Comma-separated level probabilities")->required();
  theory->add_option("--level", theory_args.level, "Target level");
  theory->add_option("--replicates", theory_args.replicates, "Monte-Carlo draws");
  theory->add_option("--seed", theory_args.seed, "Seed");
  theory->add_option("--budget", theory_args.budget, "Enumeration budget");
  theory->add_flag("--exact", theory_args.exact, "Enumerate every assignment instead of sampling");
  theory->add_option("--out", theory_args.out, "Output directory");

  auto* report = app.add_subcommand("report", "Re-render metrics from an estimates dump");
  std::string report_dir;
  report->add_option("dir", report_dir, "Directory holding estimates.csv");
  report->add_option("--out", report_dir, "Directory holding estimates.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return msnn::exit_code_for(msnn::ErrorKind::kConfig);
  }

  try {
    if (*simulate) return run_simulate(sim_config, sim_overrides);
    if (*estimate) return run_estimate(panel_path, est_config, targets, est_overrides);
    if (*theory) return run_theory(theory_args);
    if (*report) {
      if (report_dir.empty()) throw msnn::ConfigError("report needs a directory");
      return run_report(report_dir);
    }
  } catch (const msnn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return msnn::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
