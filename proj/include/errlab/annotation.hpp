#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errlab/inference.hpp"
#include "errlab/jsonl.hpp"
#include "errlab/judging.hpp"
#include "errlab/types.hpp"

namespace httplib {
class Server;
}

namespace errlab::annotation {

using judging::RubricScores;

struct AssignmentPlan {
    std::vector<std::string> annotators;
    std::vector<std::string> shared_examples;
    std::map<std::string, std::vector<std::string>> unique_examples;
    std::uint64_t seed = 0;

    /// Shared examples then this annotator's unique ones, in a fixed
    /// per-annotator shuffled order.
    std::vector<std::string> tasks_for(const std::string& annotator) const;
    bool assigned(const std::string& annotator, const std::string& event_id) const;
    bool is_shared(const std::string& event_id) const;
};

json to_json(const AssignmentPlan& plan);
AssignmentPlan plan_from_json(const json& j);

/// Draws a balanced shared subset and disjoint balanced unique subsets.
///
/// With shared_c = ceil(shared_n / 2), every annotator gets
/// unique_c = (shared_n + unique_n) / 2 - shared_c compile examples among its
/// unique ones, so each full set has equal compile and runtime counts. Events
/// are ordered by id before the seeded shuffle, so input order does not
/// matter. Throws SizingError when the total is odd, the split is impossible
/// or a phase pool is too small.
AssignmentPlan plan_assignments(std::span<const ErrorEvent> eval_examples, const std::vector<std::string>& annotators,
                                std::size_t shared_n, std::size_t unique_n, std::uint64_t seed);

struct PresentationOrder {
    std::string event_id;
    std::string annotator;
    std::vector<std::string> slots;  // display position i+1 -> endpoint_id

    friend bool operator==(const PresentationOrder&, const PresentationOrder&) = default;
};

json to_json(const PresentationOrder& order);
PresentationOrder order_from_json(const json& j);

/// Responses for one event keyed by endpoint_id.
using ResponseSet = std::map<std::string, std::string>;

struct Progress {
    std::size_t done = 0;
    std::size_t total = 0;
};

struct BlindTask {
    json payload;  // safe to send to the client
    PresentationOrder order;
};

/// Permutes the responses with a stream derived from (seed, annotator,
/// event_id). The payload labels responses by display position only, and any
/// endpoint id appearing inside a response text is masked. Throws
/// ValidationError when an endpoint has no response for the event.
BlindTask blind_presentation(const ErrorEvent& event, const ResponseSet& responses,
                             const std::vector<std::string>& endpoints, const std::string& annotator,
                             std::uint64_t seed, Progress progress = {});

/// One submission in display-slot terms. scores[i] and ranking[i] belong to
/// display position i+1; rank 1 is best. Rubrics may be partial in drafts.
struct Submission {
    std::string annotator;
    std::string event_id;
    bool draft = false;
    std::vector<std::map<std::string, int>> scores;
    std::vector<int> ranking;

    friend bool operator==(const Submission&, const Submission&) = default;
};

/// Parses a POST body: {"annotator", "event_id", "draft"?, "scores": [{key: 0|1}
/// per slot], "ranking": [rank per slot]}. Partial rubrics are kept so
/// validation can name what is missing; wrong JSON types throw SchemaError.
Submission submission_from_json(const json& j);
json to_json(const Submission& s);

/// Complete rubric for all m slots and a ranking that is a permutation of
/// 1..m. Throws ValidationError listing every problem found.
void validate_submission(const Submission& s, std::size_t m);

struct UnblindedAnnotation {
    std::string annotator;
    std::string event_id;
    Phase phase = Phase::compile;
    bool shared = false;
    std::map<std::string, RubricScores> scores;  // endpoint_id -> rubric
    std::map<std::string, int> ranks;            // endpoint_id -> rank

    friend bool operator==(const UnblindedAnnotation&, const UnblindedAnnotation&) = default;
};

json to_json(const UnblindedAnnotation& a);
UnblindedAnnotation unblinded_from_json(const json& j);
std::vector<UnblindedAnnotation> read_annotations(const std::filesystem::path& path);

/// Maps display slots back to endpoints through the stored order.
UnblindedAnnotation unblind(const Submission& s, const PresentationOrder& order, Phase phase, bool shared);

/// One uniformly chosen annotation per event_id. The group is ordered by
/// annotator id and the pick is Rng(splitmix64(seed ^ h)).uniform_below(k),
/// where h chains fnv1a64 over "errlab-annotation", then "dedupe" and
/// event_id, each followed by "\x1f". Output sorted by event_id.
std::vector<UnblindedAnnotation> dedupe_shared(std::span<const UnblindedAnnotation> annotations, std::uint64_t seed);

/// Everything the service needs to present tasks.
struct Campaign {
    AssignmentPlan plan;
    std::map<std::string, ErrorEvent> events;
    std::map<std::string, ResponseSet> responses;  // event_id -> responses
    std::vector<std::string> endpoints;            // sorted candidate ids
    std::uint64_t seed = 0;
    std::string token;  // shared campaign token; empty disables the check

    /// Joins a plan with events and responses. Throws ValidationError if a
    /// planned event or one of its responses is missing.
    static Campaign assemble(AssignmentPlan plan, std::span<const ErrorEvent> events,
                             std::span<const inference::GenerationRecord> responses, std::uint64_t seed,
                             std::string token = {});
};

/// Append-only JSONL log of presentation orders and submissions.
///
/// Writes are serialized; readers take an immutable snapshot and never wait
/// on a write in progress. A final submission for an (annotator, event) that
/// already has one raises ConflictError; drafts may be resaved until then.
class AnnotationStore {
public:
    struct State {
        std::map<std::pair<std::string, std::string>, PresentationOrder> orders;
        std::map<std::pair<std::string, std::string>, Submission> finals;
        std::map<std::pair<std::string, std::string>, Submission> drafts;
    };

    /// Replays an existing log.
    explicit AnnotationStore(std::filesystem::path log_path);

    std::shared_ptr<const State> snapshot() const;

    /// Returns the stored order, persisting `order` first if none exists.
    PresentationOrder ensure_order(const PresentationOrder& order);
    void record(const Submission& s);

private:
    void publish(std::shared_ptr<const State> next);

    std::filesystem::path path_;
    std::mutex write_mu_;
    mutable std::mutex snap_mu_;  // guards only the pointer swap
    std::shared_ptr<const State> state_;
    std::unique_ptr<JournalWriter> log_;
};

/// Unblinded final annotations, ordered by (annotator, event_id).
std::vector<UnblindedAnnotation> export_annotations(const Campaign& campaign, const AnnotationStore::State& state);

/// HTTP front end over a campaign and its store.
///
///   GET  /api/campaign
///   GET  /api/tasks/next?annotator=ID
///   GET  /api/tasks/{event_id}?annotator=ID
///   POST /api/annotations
///   GET  /api/export            (requires the campaign token)
///
/// The token is read from the X-Campaign-Token header or a `token` query
/// parameter. Status codes: 400 malformed body, 401 bad token, 403 event not
/// assigned to the annotator, 404 unknown event, 409 duplicate final
/// submission, 422 validation failure.
class AnnotationServer {
public:
    AnnotationServer(const Campaign& campaign, AnnotationStore& store);
    ~AnnotationServer();

    /// Binds and serves until stop(). Returns false if binding failed.
    bool listen(const std::string& host, int port);
    /// Binds an ephemeral port; call serve() afterwards.
    int bind_any_port(const std::string& host);
    bool serve();
    void stop();
    void wait_until_ready() const;

private:
    void install_routes();

    const Campaign& campaign_;
    AnnotationStore& store_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace errlab::annotation
