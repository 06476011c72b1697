#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "msnn/anchors.hpp"
#include "msnn/datagen.hpp"
#include "msnn/estimators.hpp"
#include "msnn/spectral.hpp"

namespace {

const std::vector<double> kScales{1.0, 5.0, 25.0, 625.0};
const std::vector<double> kMcar{0.115, 0.01, 0.025, 0.05, 0.8};

const msnn::ObservedPanel& default_panel() {
  static const msnn::ObservedPanel panel = [] {
    const auto model = msnn::generate_model(300, 100, 3, kScales, 0.001, 1);
    return msnn::assign_mcar(model, kMcar, 2).panel;
  }();
  return panel;
}

void BM_BicliqueGreedy(benchmark::State& state) {
  const auto& panel = default_panel();
  const msnn::EntryQuery query{5, 7, static_cast<int>(state.range(0))};
  const auto b = msnn::IndicatorMatrix::build(panel, query, msnn::AnchorMode::kMixed);
  for (auto _ : state) benchmark::DoNotOptimize(msnn::max_biclique(b, msnn::BicliqueOptions{}));
}
BENCHMARK(BM_BicliqueGreedy)->Arg(1)->Arg(3)->Arg(4);

void BM_BicliqueExactSmall(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.6);
  const auto size = static_cast<std::size_t>(state.range(0));
  std::vector<std::uint8_t> bits(size * size);
  for (auto& v : bits) v = coin(rng) ? 1 : 0;
  const auto b = msnn::IndicatorMatrix::from_dense(size, size, bits);
  const msnn::BicliqueOptions options{1, 1, msnn::BicliqueSearch::kExact, 100'000'000};
  for (auto _ : state) benchmark::DoNotOptimize(msnn::max_biclique(b, options));
}
BENCHMARK(BM_BicliqueExactSmall)->Arg(8)->Arg(16)->Arg(24);

void BM_TruncatedBeta(benchmark::State& state) {
  const auto rows = state.range(0);
  const Eigen::MatrixXd s = Eigen::MatrixXd::Random(rows, 3) * Eigen::MatrixXd::Random(3, 40);
  const Eigen::VectorXd q = s.transpose() * Eigen::VectorXd::Random(rows);
  const auto rule = msnn::RankRule::gap(0.1);
  for (auto _ : state) benchmark::DoNotOptimize(msnn::truncated_beta(s, q, rule));
}
BENCHMARK(BM_TruncatedBeta)->Arg(10)->Arg(50)->Arg(200);

void BM_EstimateEntry(benchmark::State& state) {
  const auto& panel = default_panel();
  const auto estimator = state.range(0) == 0 ? msnn::Estimator::kSnn : msnn::Estimator::kMsnn;
  const auto weights = msnn::oracle_weights(kScales);
  const msnn::PipelineOptions options;
  std::size_t col = 0;
  for (auto _ : state) {
    const msnn::EntryQuery query{col % 300, col % 100, 3};
    benchmark::DoNotOptimize(msnn::estimate_entry(panel, query, estimator, weights, options, col));
    ++col;
  }
}
BENCHMARK(BM_EstimateEntry)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
