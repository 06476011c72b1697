#include "msnn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include "msnn/csv.hpp"
#include "msnn/datagen.hpp"
#include "msnn/error.hpp"
#include "msnn/random.hpp"

namespace msnn {

namespace {

// First error by entry index wins, so failures are reported deterministically.
class FirstError {
 public:
  void record(std::size_t index, const Error& err, const std::string& context) {
    const std::lock_guard lock(mutex_);
    if (!kind_ || index < index_) {
      index_ = index;
      kind_ = err.kind();
      message_ = context + ": " + err.what();
    }
  }
  void rethrow() const {
    if (kind_) throw Error(*kind_, message_);
  }

 private:
  std::mutex mutex_;
  std::size_t index_ = 0;
  std::optional<ErrorKind> kind_;
  std::string message_;
};

EntryResult flatten(const EstimateRecord& record, Estimator estimator, std::size_t replicate,
                    const ObservedPanel& panel) {
  EntryResult out;
  out.replicate = replicate;
  out.estimator = estimator;
  out.query = record.query;
  out.observed_level = panel.treatment(record.query.row, record.query.col);
  out.estimate = record.estimate;
  out.k_used = record.k_used;
  out.ci = record.ci;
  out.reason = record.reason;
  bool any_passed = false;
  for (const auto& g : record.subgroups) any_passed = any_passed || g.passed;
  bool first = true;
  for (const auto& g : record.subgroups) {
    if (any_passed && !g.passed) continue;
    out.anchor_rows += g.anchor_rows;
    if (first) {
      out.anchor_cols = g.anchor_cols;
      out.lambda_used = g.lambda_used;
      out.residual_x = g.residual_x;
      out.residual_q = g.residual_q;
      out.condition_number = g.condition_number;
      first = false;
    } else {
      out.lambda_used = std::max(out.lambda_used, g.lambda_used);
      out.residual_x = std::max(out.residual_x, g.residual_x);
      out.residual_q = std::max(out.residual_q, g.residual_q);
      out.condition_number = std::max(out.condition_number, g.condition_number);
    }
  }
  if (out.observed_level == record.query.level) {
    out.observed = panel.raw_outcome(record.query.row, record.query.col);
    if (out.estimate && *out.observed != 0.0) {
      out.validation_residual = std::abs(*out.estimate - *out.observed) / std::abs(*out.observed);
    }
  }
  return out;
}

void add_to_tally(ReplicateTally& tally, const EntryResult& entry) {
  ++tally.entries;
  if (!entry.feasible()) return;
  ++tally.feasible;
  const auto& err = entry.relative_error ? entry.relative_error : entry.validation_residual;
  if (err) {
    ++tally.scored;
    tally.relative_error_sum += *err;
  }
}

WeightFunction weights_for(const ExperimentConfig& config, const ObservedPanel& panel) {
  switch (config.weights) {
    case WeightSource::kOracle:
      return oracle_weights(config.generator.scales);
    case WeightSource::kEstimated:
      return estimate_weights(panel);
    case WeightSource::kUnit:
      return unit_weights(panel.levels());
  }
  return unit_weights(panel.levels());
}

std::vector<std::string> index_ids(std::size_t count) {
  std::vector<std::string> ids(count);
  for (std::size_t k = 0; k < count; ++k) ids[k] = std::to_string(k);
  return ids;
}

std::string estimator_tag(Estimator estimator) { return to_string(estimator); }

Estimator parse_estimator_tag(const std::string& tag, std::size_t line_no) {
  if (tag == "SNN") return Estimator::kSnn;
  if (tag == "MSNN") return Estimator::kMsnn;
  throw ParseError("unknown estimator '" + tag + "'", line_no);
}

std::string optional_real(const std::optional<double>& value) {
  return value ? csv::format_double(*value) : std::string();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

double mean_of(const std::vector<double>& values) {
  long double sum = 0.0L;
  for (double v : values) sum += v;
  return values.empty() ? std::numeric_limits<double>::quiet_NaN()
                        : static_cast<double>(sum / static_cast<long double>(values.size()));
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const long double mean = mean_of(values);
  long double ss = 0.0L;
  for (double v : values) ss += (v - mean) * (v - mean);
  return static_cast<double>(std::sqrt(ss / static_cast<long double>(values.size() - 1)));
}

}  // namespace

std::vector<MetricsRow> aggregate_metrics(const std::vector<ReplicateTally>& tallies) {
  std::map<std::pair<int, int>, std::vector<const ReplicateTally*>> groups;
  for (const auto& t : tallies) groups[{static_cast<int>(t.estimator), t.level}].push_back(&t);
  std::vector<MetricsRow> rows;
  for (const auto& [key, members] : groups) {
    MetricsRow row;
    row.estimator = static_cast<Estimator>(key.first);
    row.level = key.second;
    row.replicates = members.size();
    std::vector<double> fr;
    std::vector<double> mre;
    std::vector<double> proportion;
    for (const auto* t : members) {
      fr.push_back(t->entries ? 100.0 * static_cast<double>(t->feasible) / static_cast<double>(t->entries) : 0.0);
      proportion.push_back(100.0 * t->proportion);
      if (t->scored > 0) {
        mre.push_back(static_cast<double>(t->relative_error_sum / static_cast<long double>(t->scored)));
      }
    }
    row.fr_mean = mean_of(fr);
    row.fr_std = sample_std(fr);
    row.mre_mean = mean_of(mre);
    row.mre_std = mre.empty() ? std::numeric_limits<double>::quiet_NaN() : sample_std(mre);
    row.mre_replicates = mre.size();
    row.proportion_mean = mean_of(proportion);
    row.proportion_std = sample_std(proportion);
    rows.push_back(row);
  }
  return rows;
}

StudyResult run_simulation_study(const ExperimentConfig& config) {
  config.validate();
  const auto& gen = config.generator;
  const auto levels = config.target_levels(static_cast<int>(gen.scales.size()));
  const auto options = config.pipeline_options();
  const std::size_t cells = gen.m * gen.n;

  StudyResult result;
  result.row_ids = index_ids(gen.m);
  result.col_ids = index_ids(gen.n);

  for (std::size_t rep = 0; rep < config.replicates; ++rep) {
    const auto model = generate_model(gen.m, gen.n, gen.rank, gen.scales, gen.sigma_rel,
                                      derive_seed(config.seed, Stream::kReplicate, rep, 0),
                                      gen.mechanism == Mechanism::kMnarSoftmax);
    const auto assign_seed = derive_seed(config.seed, Stream::kReplicate, rep, 1);
    const auto noise_seed = derive_seed(config.seed, Stream::kReplicate, rep, 2);
    const auto assigned = gen.mechanism == Mechanism::kMcar
                              ? assign_mcar(model, gen.mcar, assign_seed, noise_seed)
                              : assign_mnar_softmax(model, gen.mnar_lambda, assign_seed, noise_seed, gen.p0_thinning);
    const ObservedPanel& panel = assigned.panel;
    const auto weights = weights_for(config, panel);

    for (int level : levels) {
      const double proportion = observed_fraction(panel, level);
      for (Estimator estimator : config.estimators) {
        std::vector<EntryResult> slots(cells);
        FirstError failure;
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(cells); ++t) {
          const auto idx = static_cast<std::size_t>(t);
          const EntryQuery query{idx / gen.n, idx % gen.n, level};
          try {
            const auto record = estimate_entry(panel, query, estimator, weights, options,
                                               derive_seed(config.seed, Stream::kPartition, rep, idx, level));
            auto entry = flatten(record, estimator, rep, panel);
            entry.truth = model.expected(query.row, query.col, level);
            if (entry.estimate && *entry.truth != 0.0) {
              entry.relative_error = std::abs(*entry.estimate - *entry.truth) / std::abs(*entry.truth);
            }
            slots[idx] = std::move(entry);
          } catch (const Error& err) {
            failure.record(idx, err,
                           "replicate " + std::to_string(rep) + ", entry (" + std::to_string(query.row) + ", " +
                               std::to_string(query.col) + ", " + std::to_string(level) + ")");
          }
        }
        failure.rethrow();

        ReplicateTally tally;
        tally.replicate = rep;
        tally.estimator = estimator;
        tally.level = level;
        tally.proportion = proportion;
        for (const auto& entry : slots) add_to_tally(tally, entry);
        result.tallies.push_back(tally);
        if (config.dump_estimates) {
          result.dump.insert(result.dump.end(), std::make_move_iterator(slots.begin()),
                             std::make_move_iterator(slots.end()));
        }
      }
    }
  }
  result.metrics = aggregate_metrics(result.tallies);
  return result;
}

std::vector<EntryQuery> select_targets(const ObservedPanel& panel, TargetSelection selection,
                                       const std::vector<int>& levels) {
  std::vector<EntryQuery> targets;
  for (int level : levels) {
    if (level < 1 || level > panel.levels()) {
      throw DomainError("target level " + std::to_string(level) + " outside 1.." + std::to_string(panel.levels()));
    }
    for (std::size_t i = 0; i < panel.rows(); ++i) {
      for (std::size_t j = 0; j < panel.cols(); ++j) {
        if (selection == TargetSelection::kAll || !panel.observed(i, j)) targets.push_back({i, j, level});
      }
    }
  }
  return targets;
}

std::vector<EntryQuery> parse_targets(const ObservedPanel& panel, const std::string& text) {
  std::map<std::string, std::size_t> rows;
  std::map<std::string, std::size_t> cols;
  for (std::size_t k = 0; k < panel.rows(); ++k) rows.emplace(panel.row_ids()[k], k);
  for (std::size_t k = 0; k < panel.cols(); ++k) cols.emplace(panel.col_ids()[k], k);
  std::vector<EntryQuery> targets;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto body = std::string(csv::trim(item));
    if (body.empty()) continue;
    const auto first = body.find(':');
    const auto last = body.rfind(':');
    if (first == std::string::npos || first == last) {
      throw ConfigError("target '" + body + "' must look like row_id:col_id:level");
    }
    const auto row = body.substr(0, first);
    const auto col = body.substr(first + 1, last - first - 1);
    const auto row_it = rows.find(row);
    const auto col_it = cols.find(col);
    if (row_it == rows.end()) throw ConfigError("unknown row id '" + row + "'");
    if (col_it == cols.end()) throw ConfigError("unknown column id '" + col + "'");
    const auto levels = parse_level_list(body.substr(last + 1));
    if (levels.size() != 1 || levels[0] > panel.levels()) {
      throw ConfigError("target '" + body + "' has an invalid level");
    }
    targets.push_back({row_it->second, col_it->second, levels[0]});
  }
  return targets;
}

StudyResult run_real_panel(const ObservedPanel& panel, const std::vector<EntryQuery>& targets,
                           const ExperimentConfig& config) {
  if (config.weights == WeightSource::kOracle) {
    throw ConfigError("oracle weights need known level scales; use estimated or unit weights for observed panels");
  }
  if (config.estimators.empty()) throw ConfigError("select at least one estimator");
  if (config.k < 1) throw ConfigError("k must be at least 1");
  config.policy.validate();
  const auto options = config.pipeline_options();
  const auto weights = weights_for(config, panel);

  StudyResult result;
  result.row_ids = panel.row_ids();
  result.col_ids = panel.col_ids();
  std::vector<int> level_order;
  for (const auto& q : targets) {
    panel.check_query(q);
    if (std::find(level_order.begin(), level_order.end(), q.level) == level_order.end()) level_order.push_back(q.level);
  }

  for (Estimator estimator : config.estimators) {
    std::vector<EntryResult> slots(targets.size());
    FirstError failure;
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(targets.size()); ++t) {
      const auto idx = static_cast<std::size_t>(t);
      const auto& query = targets[idx];
      try {
        if (observed_fraction(panel, query.level) == 0.0) {
          EstimateRecord empty;
          empty.query = query;
          empty.mode = estimator == Estimator::kSnn ? AnchorMode::kStrict : AnchorMode::kMixed;
          empty.reason = "level " + std::to_string(query.level) + " is never observed in the panel";
          slots[idx] = flatten(empty, estimator, 0, panel);
          continue;
        }
        const auto seed = derive_seed(config.seed, Stream::kPartition, 0, query.row * panel.cols() + query.col,
                                      static_cast<std::uint64_t>(query.level));
        slots[idx] = flatten(estimate_entry(panel, query, estimator, weights, options, seed), estimator, 0, panel);
      } catch (const Error& err) {
        failure.record(idx, err,
                       "entry (" + panel.row_ids()[query.row] + ", " + panel.col_ids()[query.col] + ", " +
                           std::to_string(query.level) + ")");
      }
    }
    failure.rethrow();

    for (int level : level_order) {
      ReplicateTally tally;
      tally.estimator = estimator;
      tally.level = level;
      tally.proportion = observed_fraction(panel, level);
      for (const auto& entry : slots) {
        if (entry.query.level == level) add_to_tally(tally, entry);
      }
      result.tallies.push_back(tally);
    }
    result.dump.insert(result.dump.end(), std::make_move_iterator(slots.begin()), std::make_move_iterator(slots.end()));
  }
  result.metrics = aggregate_metrics(result.tallies);
  return result;
}

StudyResult run_real_panel(const std::string& panel_path, TargetSelection selection, const ExperimentConfig& config) {
  const auto panel = load_panel_csv(panel_path);
  const auto targets = select_targets(panel, selection, config.target_levels(panel.levels()));
  return run_real_panel(panel, targets, config);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out =
      "estimator,level,replicates,fr_mean,fr_std,mre_mean,mre_std,mre_replicates,proportion_mean,proportion_std\n";
  for (const auto& row : rows) {
    out += estimator_tag(row.estimator) + ',' + std::to_string(row.level) + ',' + std::to_string(row.replicates) +
           ',' + csv::format_double(row.fr_mean) + ',' + csv::format_double(row.fr_std) + ',' +
           csv::format_double(row.mre_mean) + ',' + csv::format_double(row.mre_std) + ',' +
           std::to_string(row.mre_replicates) + ',' + csv::format_double(row.proportion_mean) + ',' +
           csv::format_double(row.proportion_std) + '\n';
  }
  return out;
}

std::string table_csv(const std::vector<MetricsRow>& rows) {
  std::vector<int> levels;
  std::vector<Estimator> estimators;
  for (const auto& row : rows) {
    if (std::find(levels.begin(), levels.end(), row.level) == levels.end()) levels.push_back(row.level);
    if (std::find(estimators.begin(), estimators.end(), row.estimator) == estimators.end()) {
      estimators.push_back(row.estimator);
    }
  }
  std::sort(levels.begin(), levels.end());
  std::string out = "estimator";
  for (int level : levels) {
    const auto tag = "level" + std::to_string(level);
    out += ',' + tag + "_fr_mean," + tag + "_fr_std," + tag + "_mre_mean," + tag + "_mre_std";
  }
  out += '\n';
  for (Estimator estimator : estimators) {
    out += estimator_tag(estimator);
    for (int level : levels) {
      const auto it = std::find_if(rows.begin(), rows.end(),
                                   [&](const MetricsRow& r) { return r.estimator == estimator && r.level == level; });
      if (it == rows.end()) {
        out += ",,,,";
      } else {
        out += ',' + csv::format_double(it->fr_mean) + ',' + csv::format_double(it->fr_std) + ',' +
               csv::format_double(it->mre_mean) + ',' + csv::format_double(it->mre_std);
      }
    }
    out += '\n';
  }
  return out;
}

std::string estimates_csv_header() {
  return "replicate,estimator,row_id,col_id,row,col,level,observed_level,feasible,estimate,truth,relative_error,"
         "observed,validation_residual,k_used,anchor_rows,anchor_cols,lambda_used,residual_x,residual_q,"
         "condition_number,ci_lower,ci_upper,reason";
}

void emit_report(const StudyResult& result, const ExperimentConfig& config, const std::string& dir) {
  const std::filesystem::path root(dir);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());

  write_file(root / "metrics.csv", metrics_csv(result.metrics));
  write_file(root / "table.csv", table_csv(result.metrics));
  write_file(root / "manifest.cfg", format_config(config));

  std::string ids = "axis,index,id\n";
  for (std::size_t k = 0; k < result.row_ids.size(); ++k) {
    ids += "row," + std::to_string(k) + ',' + csv::escape(result.row_ids[k]) + '\n';
  }
  for (std::size_t k = 0; k < result.col_ids.size(); ++k) {
    ids += "col," + std::to_string(k) + ',' + csv::escape(result.col_ids[k]) + '\n';
  }
  write_file(root / "ids.csv", ids);

  if (!config.dump_estimates && result.dump.empty()) return;
  const auto path = root / "estimates.csv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << estimates_csv_header() << '\n';
  auto id_of = [](const std::vector<std::string>& ids, std::size_t k) {
    return k < ids.size() ? ids[k] : std::to_string(k);
  };
  std::string line;
  for (const auto& e : result.dump) {
    line.clear();
    line += std::to_string(e.replicate) + ',' + estimator_tag(e.estimator) + ',' +
            csv::escape(id_of(result.row_ids, e.query.row)) + ',' + csv::escape(id_of(result.col_ids, e.query.col)) +
            ',' + std::to_string(e.query.row) + ',' + std::to_string(e.query.col) + ',' +
            std::to_string(e.query.level) + ',' + std::to_string(e.observed_level) + ',' +
            (e.feasible() ? "1" : "0") + ',' + optional_real(e.estimate) + ',' + optional_real(e.truth) + ',' +
            optional_real(e.relative_error) + ',' + optional_real(e.observed) + ',' +
            optional_real(e.validation_residual) + ',' + std::to_string(e.k_used) + ',' +
            std::to_string(e.anchor_rows) + ',' + std::to_string(e.anchor_cols) + ',' +
            std::to_string(e.lambda_used) + ',' + csv::format_double(e.residual_x) + ',' +
            csv::format_double(e.residual_q) + ',' + csv::format_double(e.condition_number) + ',' +
            (e.ci ? csv::format_double(e.ci->lower) : std::string()) + ',' +
            (e.ci ? csv::format_double(e.ci->upper) : std::string()) + ',' + csv::escape(e.reason) + '\n';
    out << line;
  }
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<MetricsRow> rerender_report(const std::string& dir) {
  const std::filesystem::path root(dir);
  const auto lines = csv::read_lines((root / "estimates.csv").string());
  if (lines.empty()) throw ParseError("estimates.csv is empty", 1);
  const auto header = csv::split_line(lines[0], 1);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("estimates.csv lacks column '" + name + "'", 1);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_rep = column("replicate");
  const auto c_est = column("estimator");
  const auto c_level = column("level");
  const auto c_obs_level = column("observed_level");
  const auto c_feasible = column("feasible");
  const auto c_rel = column("relative_error");
  const auto c_val = column("validation_residual");

  std::vector<ReplicateTally> tallies;
  std::vector<std::size_t> at_level;
  std::map<std::tuple<std::size_t, int, int>, std::size_t> index;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    if (lines[k].empty()) continue;
    const auto fields = csv::split_line(lines[k], k + 1);
    if (fields.size() != header.size()) throw ParseError("expected " + std::to_string(header.size()) + " fields", k + 1);
    const auto rep = static_cast<std::size_t>(csv::parse_integer(fields[c_rep], k + 1));
    const auto estimator = parse_estimator_tag(fields[c_est], k + 1);
    const auto level = static_cast<int>(csv::parse_integer(fields[c_level], k + 1));
    const auto key = std::make_tuple(rep, static_cast<int>(estimator), level);
    auto it = index.find(key);
    if (it == index.end()) {
      ReplicateTally tally;
      tally.replicate = rep;
      tally.estimator = estimator;
      tally.level = level;
      it = index.emplace(key, tallies.size()).first;
      tallies.push_back(tally);
      at_level.push_back(0);
    }
    auto& tally = tallies[it->second];
    EntryResult entry;
    if (fields[c_feasible] == "1") entry.estimate = 0.0;
    if (!fields[c_rel].empty()) entry.relative_error = csv::parse_double(fields[c_rel], k + 1);
    if (!fields[c_val].empty()) entry.validation_residual = csv::parse_double(fields[c_val], k + 1);
    add_to_tally(tally, entry);
    if (csv::parse_integer(fields[c_obs_level], k + 1) == level) ++at_level[it->second];
  }
  for (std::size_t t = 0; t < tallies.size(); ++t) {
    tallies[t].proportion =
        tallies[t].entries ? static_cast<double>(at_level[t]) / static_cast<double>(tallies[t].entries) : 0.0;
  }
  const auto rows = aggregate_metrics(tallies);
  write_file(root / "metrics.csv", metrics_csv(rows));
  write_file(root / "table.csv", table_csv(rows));
  return rows;
}

}  // namespace msnn
