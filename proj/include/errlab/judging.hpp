#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errlab/inference.hpp"
#include "errlab/prompting.hpp"
#include "errlab/types.hpp"

namespace errlab::judging {

using prompting::PromptMessages;

inline constexpr std::size_t kCriteria = 8;

struct Criterion {
    std::string_view key;
    std::string_view description;
};

/// The eight binary criteria in rubric order, descriptions verbatim.
const std::array<Criterion, kCriteria>& rubric();

/// Index of a criterion key, or nullopt.
std::optional<std::size_t> criterion_index(std::string_view key);

struct RubricScores {
    std::array<std::uint8_t, kCriteria> values{};

    std::uint8_t at(std::string_view key) const;
    bool all() const;
    static RubricScores ones();

    friend bool operator==(const RubricScores&, const RubricScores&) = default;
};

/// Object keyed by criterion; from_json requires all eight keys with 0/1 values.
json to_json(const RubricScores& s);
RubricScores scores_from_json(const json& j);

struct VerdictParse {
    std::optional<RubricScores> scores;
    std::string defect;  // set iff scores is empty
};

/// Extracts the last well-formed `VERDICT:` block (eight `key: 0|1` lines).
/// Prose, markdown emphasis and code fences around the block are ignored.
/// With no well-formed block the defect names what the last block lacked:
/// "no verdict block", "missing: <key>", "non-binary: <key>", ...
VerdictParse parse_judge_verdict(std::string_view raw);

/// The two-turn grading conversation for one (event, candidate).
struct JudgePlan {
    PromptMessages turn1;         // the explanation prompt, sent as is
    PromptMessages history;       // turn1 with structure constraints stripped
    std::string turn2_user;       // candidate + rubric + verdict format
    std::string template_version;
    bool strip_warning = false;
};

/// The rubric as the judge sees it: one "- key: description" line per criterion.
std::string render_rubric();

/// Throws ValidationError on an empty candidate.
JudgePlan build_judge_turns(const ErrorEvent& event, std::string_view candidate_response,
                            const prompting::PromptTemplate& explain = prompting::PromptTemplate::default_explanation(),
                            const prompting::PromptTemplate& judge = prompting::PromptTemplate::default_judge());

/// history + the judge's own explanation as assistant turn + the grading turn.
PromptMessages turn2_messages(const JudgePlan& plan, std::string_view judge_explanation);

struct JudgeVerdict {
    std::string event_id;
    std::string endpoint_id;  // candidate
    std::string judge_id;
    std::optional<RubricScores> scores;  // empty iff the verdict did not parse
    std::string raw_judge_text;
    std::string defect;
    std::string reference_explanation;  // the judge's turn-1 reply

    bool parse_ok() const { return scores.has_value(); }
    friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

json to_json(const JudgeVerdict& v);
JudgeVerdict verdict_from_json(const json& j);
std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path);

enum class Aggregation { unanimity, majority };

struct EnsembleResult {
    std::string event_id;
    std::string endpoint_id;
    std::optional<Phase> phase;
    RubricScores scores;
    int contributing = 0;  // parseable verdicts
    int judges = 0;        // verdicts supplied

    bool degraded() const { return contributing < judges; }
    friend bool operator==(const EnsembleResult&, const EnsembleResult&) = default;
};

json to_json(const EnsembleResult& e);
EnsembleResult ensemble_from_json(const json& j);
std::vector<EnsembleResult> read_ensembles(const std::filesystem::path& path);

/// Per criterion, 1 iff every parseable verdict scored 1 (pointwise minimum).
/// `majority` instead requires more than half of the parseable verdicts.
/// Throws AggregationError with zero parseable verdicts, mixed
/// (event, endpoint) keys, or, when strict, any unparseable verdict.
EnsembleResult ensemble_unanimity(std::span<const JudgeVerdict> verdicts, bool strict = false,
                                  Aggregation rule = Aggregation::unanimity);

struct JudgeOptions {
    int parallelism = 4;
    inference::RetryPolicy retry;
    std::filesystem::path out_dir;  // verdicts.jsonl, ensemble.jsonl, failures.jsonl
    bool dry_run = false;
    bool strict = false;
    Aggregation rule = Aggregation::unanimity;
    const prompting::PromptTemplate* explain_template = nullptr;
    const prompting::PromptTemplate* judge_template = nullptr;
};

struct JudgeSummary {
    std::size_t planned = 0;        // (response, judge) pairs
    std::size_t skipped = 0;        // already in verdicts.jsonl
    std::size_t completed = 0;      // verdicts committed this run
    std::size_t parse_failures = 0; // committed this run with parse_ok=false
    std::size_t failed = 0;         // transport/protocol failures this run
    std::size_t calls = 0;          // backend invocations this run
    std::size_t ensembles = 0;
    std::size_t degraded = 0;
    std::size_t incomplete = 0;     // pairs still missing a judge's verdict
};

/// Runs every judge over every response. verdicts.jsonl is the resumable
/// journal (parse failures are committed too, so a rerun makes no calls);
/// ensemble.jsonl is rebuilt from it for pairs every judge has answered.
/// Judges always run at temperature 0 with reasoning disabled.
JudgeSummary run_judging(std::span<const ErrorEvent> events, std::span<const inference::GenerationRecord> responses,
                         std::span<const inference::ModelEndpoint> judges, const inference::BackendSet& backends,
                         const JudgeOptions& options);

}  // namespace errlab::judging
