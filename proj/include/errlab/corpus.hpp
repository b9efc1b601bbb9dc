#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "errlab/exec.hpp"
#include "errlab/types.hpp"

namespace errlab::corpus {

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// ceil(bytes / 4).
std::size_t approx_token_count(std::string_view text);

struct RedactionRule {
    std::string name;
    std::string matcher;      // ECMAScript regular expression
    std::string replacement;  // fixed placeholder, no back-references
};

/// Ordered regex rules followed by a literal name dictionary. Construction
/// compiles every matcher and throws ConfigError on a bad one.
class RedactionRuleSet {
public:
    RedactionRuleSet(std::vector<RedactionRule> patterns, std::vector<std::string> name_dictionary = {});

    /// Email addresses, then university ids (z + 7 digits).
    static RedactionRuleSet defaults(std::vector<std::string> name_dictionary = {});

    /// {"patterns":[{"name","matcher","replacement"}], "name_dictionary":[...]}
    static RedactionRuleSet from_json(const json& doc);

    std::string apply(std::string text) const;

    /// True if any rule or dictionary entry matches.
    bool matches(std::string_view text) const;

    const std::vector<RedactionRule>& patterns() const { return patterns_; }
    const std::vector<std::string>& name_dictionary() const { return names_; }

private:
    std::vector<RedactionRule> patterns_;
    std::vector<std::string> names_;
    std::vector<std::regex> compiled_;  // patterns then names
    std::vector<std::string> replacements_;
};

inline constexpr const char* kNamePlaceholder = "[REDACTED_NAME]";

/// Rewrites source, diagnostics, runtime values/stdin and baseline response.
/// Identity, phase, period and week are never touched. Idempotent.
ErrorEvent redact(const ErrorEvent& event, const RedactionRuleSet& rules);

std::vector<ErrorEvent> redact_all(std::span<const ErrorEvent> events, const RedactionRuleSet& rules,
                                   Exec exec = Exec::parallel);

/// Keeps events whose prompt context measures <= token_cap, in order.
std::vector<ErrorEvent> filter_oversized(std::span<const ErrorEvent> events, std::size_t token_cap,
                                         const TokenCounter& counter = approx_token_count,
                                         Exec exec = Exec::parallel);

/// Keeps events whose period is listed (train/eval split by teaching period).
std::vector<ErrorEvent> filter_periods(std::span<const ErrorEvent> events, const std::set<std::string>& periods);

struct SamplingPlan {
    std::size_t cap_compile_per_week = 4500;
    std::size_t cap_runtime_per_week = 2250;
    std::size_t target_size = 40000;
    std::uint64_t seed = 0;
};

using CellKey = std::tuple<std::string, int, Phase>;  // (period, week, phase)

/// Caps every (period, week, phase) cell with a uniform subset, then draws
/// target_size events without replacement from the capped pool. One Rng(seed)
/// stream is consumed cell by cell in sorted key order, then by the final
/// draw, so output is fully determined by (input order, plan). Throws
/// SizingError when the capped pool is smaller than the target.
std::vector<ErrorEvent> stratified_sample(std::span<const ErrorEvent> events, const SamplingPlan& plan);

struct CorpusStats {
    std::size_t n_total = 0;
    std::size_t n_compile = 0;
    std::size_t n_runtime = 0;
    std::size_t ratio_compile = 0;  // reduced n_compile : n_runtime
    std::size_t ratio_runtime = 0;
    std::optional<double> ratio;    // n_compile / n_runtime
    std::size_t token_min = 0;
    std::size_t token_max = 0;
    std::optional<double> token_mean;  // absent for an empty corpus
    std::map<CellKey, std::size_t> per_week_counts;
};

CorpusStats corpus_stats(std::span<const ErrorEvent> events, const TokenCounter& counter = approx_token_count);

json to_json(const CorpusStats& stats);

}  // namespace errlab::corpus
