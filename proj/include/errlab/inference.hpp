#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errlab/prompting.hpp"
#include "errlab/types.hpp"

namespace errlab::inference {

using prompting::PromptMessages;

struct InferenceParams {
    double temperature = 0.0;
    int max_output_tokens = 1024;
    bool reasoning_enabled = false;
};

/// One chat-completions target. base_url selects the backend:
/// `http(s)://...` OpenAI-compatible server, `mock://` scripted mock,
/// `baseline://` replays the event's logged baseline response.
struct ModelEndpoint {
    std::string endpoint_id;
    std::string base_url;
    std::string model_name;
    std::string api_key_ref;  // environment variable holding the key
    InferenceParams params;
    json extra_body = json::object();  // merged into every request body
    std::string mock_script;           // mock:// only
};

/// ERRLAB_API_KEY_<ID>, with non-alphanumerics mapped to '_' and upper-cased.
std::string default_api_key_env(std::string_view endpoint_id);

/// Reads `[[endpoint]]` tables. Ids must be unique and temperature >= 0.
std::vector<ModelEndpoint> load_endpoints(const std::filesystem::path& path);
std::vector<ModelEndpoint> endpoints_from_json(const json& doc);

struct ChatRequest {
    const ModelEndpoint& endpoint;
    const PromptMessages& messages;
    const ErrorEvent* event = nullptr;
    std::string subject;  // candidate endpoint when judging, empty otherwise
};

struct ChatResponse {
    int status = 200;  // 0: no HTTP response (timeout, refused connection)
    std::string text;
    std::string error;
    std::optional<long> latency_ms;  // backend-reported; measured otherwise
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse send(const ChatRequest& request) = 0;
};

/// POST {base_url}/chat/completions. Stateless; safe to share across threads.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}
    ChatResponse send(const ChatRequest& request) override;

    /// The request body for an endpoint and transcript.
    static json request_body(const ModelEndpoint& endpoint, const PromptMessages& messages);

private:
    std::chrono::seconds timeout_;
};

/// Deterministic stand-in for a model server.
///
/// Scripted entries are matched on (event_id, endpoint_id, subject), most
/// specific first; "*" is a wildcard. Per entry, the first `fail_first` calls
/// fail with `fail_status`, then `replies` are returned in order (the last one
/// repeats). Unscripted calls get hash-derived canned text: an explanation,
/// or a verdict block when the last user turn asks for one.
class MockChatBackend : public ChatBackend {
public:
    struct Entry {
        std::string event_id = "*";
        std::string endpoint_id = "*";
        std::string subject = "*";
        std::vector<std::string> replies;
        int fail_first = 0;
        int fail_status = 500;
        bool always_fail = false;
        int delay_ms = 0;
    };

    explicit MockChatBackend(std::uint64_t seed = 0, std::vector<Entry> script = {});

    /// JSON array or JSONL of entries.
    static std::vector<Entry> load_script(const std::filesystem::path& path);

    ChatResponse send(const ChatRequest& request) override;

    std::size_t calls() const { return calls_.load(); }
    std::size_t max_in_flight() const { return max_in_flight_.load(); }

    static std::string canned_explanation(std::uint64_t seed, const std::string& event_id,
                                          const std::string& endpoint_id);
    static std::string canned_verdict(std::uint64_t seed, const std::string& event_id, const std::string& judge_id,
                                      const std::string& subject);

private:
    const Entry* match(const std::string& event_id, const std::string& endpoint_id, const std::string& subject) const;

    std::uint64_t seed_;
    std::vector<Entry> script_;
    std::mutex mu_;
    std::map<const Entry*, int> entry_calls_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
};

/// Replays ErrorEvent::baseline_response (the originally deployed tool's answer).
class BaselineBackend : public ChatBackend {
public:
    ChatResponse send(const ChatRequest& request) override;
};

/// Resolves the backend for each endpoint by its base_url scheme.
/// Forwards to another backend and counts every send, retries included.
class CountingBackend : public ChatBackend {
public:
    CountingBackend(ChatBackend& inner, std::atomic<std::size_t>& counter) : inner_(inner), counter_(counter) {}
    ChatResponse send(const ChatRequest& request) override {
        ++counter_;
        return inner_.send(request);
    }

private:
    ChatBackend& inner_;
    std::atomic<std::size_t>& counter_;
};

class BackendSet {
public:
    BackendSet(std::span<const ModelEndpoint> endpoints, std::uint64_t mock_seed);

    /// Routes every endpoint to one backend (tests).
    explicit BackendSet(std::shared_ptr<ChatBackend> all);

    ChatBackend& for_endpoint(const ModelEndpoint& endpoint) const;

private:
    std::shared_ptr<ChatBackend> all_;
    std::map<std::string, std::shared_ptr<ChatBackend>> by_id_;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds initial_delay{1000};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{30'000};
    std::function<void(std::chrono::milliseconds)> sleep;  // defaults to sleep_for

    std::chrono::milliseconds delay_before_retry(int failed_attempt) const;
};

struct Completion {
    std::string text;
    int attempts = 1;
    long latency_ms = 0;
};

/// Sends the request, retrying HTTP 429/5xx and connection failures with
/// exponential backoff. Throws CredentialError on 401/403, TransportError
/// when attempts run out or on other 4xx, ProtocolError on an empty reply.
Completion complete(ChatBackend& backend, const ChatRequest& request, const RetryPolicy& retry = {});

struct GenerationRecord {
    std::string event_id;
    std::string endpoint_id;
    std::string response_text;
    long latency_ms = 0;
    int attempt = 1;

    friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

json to_json(const GenerationRecord& r);
GenerationRecord generation_from_json(const json& j);
std::vector<GenerationRecord> read_generations(const std::filesystem::path& path);

struct FailureRecord {
    std::string event_id;
    std::string endpoint_id;
    std::string subject;  // judge runs: candidate endpoint
    std::string kind;
    int status = 0;
    std::string message;
};

json to_json(const FailureRecord& f);

struct GenerateOptions {
    int parallelism = 4;
    RetryPolicy retry;
    std::filesystem::path out;       // committed responses.jsonl (journal)
    std::filesystem::path failures;  // failure ledger; defaults next to out
    bool dry_run = false;
    const prompting::PromptTemplate* prompt_template = nullptr;
};

struct RunSummary {
    std::size_t planned = 0;    // pairs in the full plan
    std::size_t skipped = 0;    // already committed before this run
    std::size_t completed = 0;  // committed by this run
    std::size_t failed = 0;     // recorded in the failure ledger
    std::size_t calls = 0;      // backend invocations this run
};

/// One record per (event, endpoint) pair. Already committed pairs are
/// skipped, per-pair errors go to the failure ledger, and a finished run
/// rewrites the journal sorted by (event_id, endpoint_id).
RunSummary generate_responses(std::span<const ErrorEvent> events, std::span<const ModelEndpoint> endpoints,
                              const BackendSet& backends, const GenerateOptions& options);

/// Runs tasks [0, n) on `parallelism` threads (never more in flight).
void run_bounded(std::size_t n, int parallelism, const std::function<void(std::size_t)>& task);

}  // namespace errlab::inference
