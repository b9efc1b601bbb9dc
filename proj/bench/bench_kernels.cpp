// Serial reference vs OpenMP paths of the data-parallel kernels.
// Arg 0 selects the path: 0 = serial, 1 = parallel.

#include <benchmark/benchmark.h>

#include "errlab/analysis.hpp"
#include "errlab/corpus.hpp"
#include "test_support.hpp"

using namespace errlab;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::parallel : Exec::serial; }

const analysis::RankTable& rank_table() {
    static const analysis::RankTable table = [] {
        Rng rng(1);
        std::vector<analysis::RankingRecord> recs;
        const std::vector<std::string> eps = {"e0", "e1", "e2", "e3", "e4", "e5", "e6", "e7"};
        for (int i = 0; i < 2000; ++i) {
            analysis::RankingRecord r{"ex" + std::to_string(i), "ann", Phase::compile, {}};
            auto ranks = testing::random_ranks(rng, eps.size());
            for (std::size_t e = 0; e < eps.size(); ++e) r.rank[eps[e]] = ranks[e];
            recs.push_back(std::move(r));
        }
        return analysis::make_rank_table(recs);
    }();
    return table;
}

void BM_Bootstrap(benchmark::State& state) {
    const auto& t = rank_table();
    for (auto _ : state) benchmark::DoNotOptimize(analysis::kernels::bootstrap_mean_ranks(t, 7, 2000, exec_of(state)));
}
BENCHMARK(BM_Bootstrap)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_WinCounts(benchmark::State& state) {
    const auto& t = rank_table();
    for (auto _ : state) benchmark::DoNotOptimize(analysis::kernels::win_counts(t, exec_of(state)));
}
BENCHMARK(BM_WinCounts)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_AC1Sums(benchmark::State& state) {
    Rng rng(2);
    std::vector<int> ones, raters;
    for (int i = 0; i < 1'000'000; ++i) {
        raters.push_back(1 + static_cast<int>(rng.uniform_below(5)));
        ones.push_back(static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(raters.back()) + 1)));
    }
    for (auto _ : state) benchmark::DoNotOptimize(analysis::kernels::ac1_sums(ones, raters, exec_of(state)));
}
BENCHMARK(BM_AC1Sums)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_CriterionCounts(benchmark::State& state) {
    Rng rng(3);
    std::vector<analysis::ScoredResponse> scores;
    std::vector<std::size_t> group;
    for (int i = 0; i < 200'000; ++i) {
        judging::RubricScores s;
        for (auto& v : s.values) v = static_cast<std::uint8_t>(rng.uniform_below(2));
        scores.push_back({"ev", "m", rng.uniform_below(4) ? Phase::compile : Phase::runtime, s});
        group.push_back(rng.uniform_below(8));
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(analysis::kernels::criterion_counts(group, scores, 8, exec_of(state)));
}
BENCHMARK(BM_CriterionCounts)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

const std::vector<ErrorEvent>& pool() {
    static const std::vector<ErrorEvent> events = [] {
        auto p = testing::synthetic_pool(5000, 4);
        for (std::size_t i = 0; i < p.size(); i += 3)
            p[i].source_code = "/* Alice Nguyen z1234567@ad.unsw.edu.au */\n" + p[i].source_code;
        return p;
    }();
    return events;
}

void BM_Redact(benchmark::State& state) {
    const auto rules = corpus::RedactionRuleSet::defaults({"Alice Nguyen", "Bob O'Neil", "Chen Wei"});
    for (auto _ : state) benchmark::DoNotOptimize(corpus::redact_all(pool(), rules, exec_of(state)));
}
BENCHMARK(BM_Redact)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_FilterOversized(benchmark::State& state) {
    for (auto _ : state)
        benchmark::DoNotOptimize(corpus::filter_oversized(pool(), 120, corpus::approx_token_count, exec_of(state)));
}
BENCHMARK(BM_FilterOversized)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
