#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errlab/annotation.hpp"
#include "errlab/exec.hpp"
#include "errlab/judging.hpp"
#include "errlab/types.hpp"

namespace errlab::analysis {

using judging::kCriteria;
using judging::RubricScores;

// ---------------------------------------------------------------------------
// Agreement

/// Binary ratings; raters may skip items.
struct RatingsMatrix {
    std::vector<std::string> items;
    std::vector<std::map<std::string, int>> ratings;  // per item: rater -> 0|1

    void add(const std::string& item, const std::string& rater, int value);
};

struct AC1Result {
    double ac1 = 0;
    double pa = 0;
    double pe = 0;
    std::size_t n_items = 0;
    std::size_t n_pairable = 0;  // items with >= 2 ratings
};

/// Gwet's AC1 for two categories, multi-rater with missing ratings:
///
///   a_i = [r1(r1-1) + r0(r0-1)] / [r(r-1)]   over items with r >= 2
///   Pa  = mean a_i
///   pi  = mean over all items of r1/r
///   Pe  = 2 pi (1 - pi)
///   AC1 = (Pa - Pe) / (1 - Pe)
///
/// Pe <= 0.5 for two categories, so the denominator never vanishes. Throws
/// InsufficientDataError when no item has two ratings, ValidationError on a
/// non-binary rating or an unrated item.
AC1Result gwet_ac1(const RatingsMatrix& matrix, Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Criterion rates

struct ScoredResponse {
    std::string event_id;
    std::string endpoint_id;
    Phase phase = Phase::compile;
    RubricScores scores;
};

struct CriterionRow {
    std::string endpoint_id;
    std::size_t n = 0;
    std::size_t n_compile = 0;
    std::size_t n_runtime = 0;
    std::array<double, kCriteria> rate{};
    std::optional<double> all_compile;  // absent without compile responses
    std::optional<double> all_runtime;
};

/// One row per endpoint, sorted by endpoint id.
std::vector<CriterionRow> criterion_rates(std::span<const ScoredResponse> scores, Exec exec = Exec::parallel);

// ---------------------------------------------------------------------------
// Rankings

struct RankingRecord {
    std::string example_id;
    std::string rater;
    Phase phase = Phase::compile;
    std::map<std::string, int> rank;  // endpoint -> 1..M, 1 = best
};

struct WinRates {
    std::vector<std::string> endpoints;                     // sorted
    std::vector<std::vector<std::size_t>> wins;             // wins[a][b]: records with rank(a) < rank(b)
    std::vector<std::vector<std::optional<double>>> rate;   // absent on the diagonal and for empty subsets
    std::size_t n_records = 0;
};

/// W[a][b] = fraction of records (optionally of one phase) ranking a above b.
/// Throws ValidationError if a record does not rank every endpoint or its
/// ranks are not a permutation of 1..M.
WinRates win_rate_matrix(std::span<const RankingRecord> rankings, std::optional<Phase> phase = std::nullopt,
                         Exec exec = Exec::parallel);

struct RankRow {
    std::string endpoint_id;
    std::size_t n = 0;
    double mean_rank = 0;
    std::optional<double> ci_low;   // absent with fewer than two records
    std::optional<double> ci_high;
    double first_place = 0;
    double last_place = 0;
};

inline constexpr std::size_t kDefaultBootstrap = 10000;

/// Mean rank, percentile-bootstrap 95% CI, first- and last-place rates.
/// Sorted by mean rank, then endpoint id. Throws ValidationError when
/// n_boot < 1000 or the records are not all strict orders over one set.
std::vector<RankRow> rank_summary(std::span<const RankingRecord> rankings, std::uint64_t seed,
                                  std::size_t n_boot = kDefaultBootstrap, Exec exec = Exec::parallel);

/// Linear interpolation between order statistics (Hyndman-Fan type 7).
/// `sorted` must be non-empty and ascending.
double percentile_type7(std::span<const double> sorted, double p);

/// Dense rank table: row r holds record r's ranks in `endpoints` order.
struct RankTable {
    std::vector<std::string> endpoints;
    std::size_t m = 0;
    std::size_t n = 0;
    std::vector<int> ranks;  // n * m, row-major
};

RankTable make_rank_table(std::span<const RankingRecord> rankings, std::optional<Phase> phase = std::nullopt);

/// Low-level kernels shared by the statistics above and the benchmarks.
/// Each has an OpenMP and a serial path with identical results: per-item
/// terms are written to arrays and reduced in order, counts are integers,
/// and bootstrap replicate b always draws from Rng::stream(seed, b).
namespace kernels {

/// Per item: (ones, raters) -> summed into Pa and pi in item order.
struct AC1Sums {
    double pa_sum = 0;
    double pi_sum = 0;
    std::size_t n_items = 0;
    std::size_t n_pairable = 0;
};
AC1Sums ac1_sums(std::span<const int> ones, std::span<const int> raters, Exec exec);

/// wins[a * m + b] over all rows.
std::vector<std::size_t> win_counts(const RankTable& table, Exec exec);

/// Per endpoint column: replicate means of resampled rows, n_boot each.
std::vector<std::vector<double>> bootstrap_mean_ranks(const RankTable& table, std::uint64_t seed, std::size_t n_boot,
                                                      Exec exec);

/// counts[g * (kCriteria + 2) + c]: criterion ones per group g, then the
/// all-criteria-true counts for compile and runtime in the last two slots.
std::vector<std::size_t> criterion_counts(std::span<const std::size_t> group, std::span<const ScoredResponse> scores,
                                          std::size_t n_groups, Exec exec);

}  // namespace kernels

// ---------------------------------------------------------------------------
// Agreement between sources

struct AgreementTable {
    std::array<AC1Result, kCriteria> per_criterion{};
    std::size_t n_joined = 0;
    std::size_t n_unmatched = 0;  // expert responses with no ensemble partner
};

/// Two-rater AC1 per criterion over responses joined on (event_id,
/// endpoint_id). Duplicate keys on either side throw ValidationError; an
/// empty join throws InsufficientDataError.
AgreementTable expert_llm_agreement(std::span<const ScoredResponse> expert, std::span<const ScoredResponse> ensemble);

/// Multi-rater AC1 per criterion; items are (event, endpoint) responses and
/// raters are annotators.
AgreementTable expert_expert_agreement(std::span<const annotation::UnblindedAnnotation> shared);

// ---------------------------------------------------------------------------
// Report

struct ReportInputs {
    std::vector<judging::EnsembleResult> ensembles;
    std::vector<annotation::UnblindedAnnotation> annotations;  // exported, unblinded
    std::uint64_t seed = 0;
    std::size_t n_boot = kDefaultBootstrap;
};

struct Report {
    std::uint64_t seed = 0;
    std::size_t n_boot = 0;
    std::vector<CriterionRow> llm_rates;
    std::vector<CriterionRow> expert_rates;
    WinRates win_compile;
    WinRates win_runtime;
    std::vector<RankRow> ranks;
    std::optional<AgreementTable> expert_expert;
    std::optional<AgreementTable> expert_llm;
    std::size_t n_expert_examples = 0;  // after shared-subset dedupe
};

/// Expert statistics use unique annotations plus one seeded pick per shared
/// example; expert/expert agreement uses every shared annotation.
Report analyze(const ReportInputs& inputs, Exec exec = Exec::parallel);

/// criterion_rates.csv, win_rates.csv, rank_summary.csv, agreement.csv and
/// report.md. CSVs keep full precision; the Markdown rounds to 2 decimals.
void write_report(const Report& report, const std::filesystem::path& dir);
std::string render_markdown(const Report& report);

}  // namespace errlab::analysis
