#include "errlab/inference.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>
#include <thread>

#include <httplib.h>

#include "errlab/error.hpp"
#include "errlab/judging.hpp"
#include "errlab/jsonl.hpp"
#include "errlab/rng.hpp"
#include "errlab/toml_lite.hpp"

namespace errlab::inference {

using prompting::Role;

std::string default_api_key_env(std::string_view endpoint_id) {
    std::string out = "ERRLAB_API_KEY_";
    for (char c : endpoint_id)
        out += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(c)) : '_';
    return out;
}

std::vector<ModelEndpoint> endpoints_from_json(const json& doc) {
    const json* list = nullptr;
    if (doc.contains("endpoint")) list = &doc["endpoint"];
    else if (doc.contains("judge")) list = &doc["judge"];
    else if (doc.contains("endpoints")) list = &doc["endpoints"];
    if (!list || !list->is_array() || list->empty()) throw ConfigError("config defines no [[endpoint]] entries");

    std::vector<ModelEndpoint> out;
    std::set<std::string> seen;
    for (const auto& e : *list) {
        ModelEndpoint ep;
        if (!e.contains("id")) throw ConfigError("endpoint entry without id");
        ep.endpoint_id = e["id"].get<std::string>();
        if (!seen.insert(ep.endpoint_id).second) throw ConfigError("duplicate endpoint id '" + ep.endpoint_id + "'");
        ep.base_url = e.value("base_url", std::string("mock://"));
        ep.model_name = e.value("model", ep.endpoint_id);
        ep.api_key_ref = e.value("api_key_env", default_api_key_env(ep.endpoint_id));
        ep.params.temperature = e.value("temperature", 0.0);
        ep.params.max_output_tokens = e.value("max_output_tokens", 1024);
        ep.params.reasoning_enabled = e.value("reasoning", false);
        if (ep.params.temperature < 0)
            throw ConfigError("endpoint '" + ep.endpoint_id + "' has negative temperature");
        if (e.contains("extra_body")) {
            // TOML-lite has no inline tables; extra_body is a JSON string
            ep.extra_body = e["extra_body"].is_string() ? json::parse(e["extra_body"].get<std::string>()) : e["extra_body"];
        }
        ep.mock_script = e.value("mock_script", std::string());
        out.push_back(std::move(ep));
    }
    return out;
}

std::vector<ModelEndpoint> load_endpoints(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("endpoint config not found: " + path.string());
    auto eps = endpoints_from_json(load_toml_lite(path));
    for (auto& ep : eps)
        if (!ep.mock_script.empty() && std::filesystem::path(ep.mock_script).is_relative())
            ep.mock_script = (path.parent_path() / ep.mock_script).string();
    return eps;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // without trailing slash
};

ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url has no scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl p;
    p.origin = url.substr(0, path_start);
    p.path = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!p.path.empty() && p.path.back() == '/') p.path.pop_back();
    return p;
}

}  // namespace

json HttpChatBackend::request_body(const ModelEndpoint& endpoint, const PromptMessages& messages) {
    json body;
    body["model"] = endpoint.model_name;
    body["messages"] = prompting::to_json(messages);
    body["temperature"] = endpoint.params.temperature;
    body["max_tokens"] = endpoint.params.max_output_tokens;
    if (endpoint.extra_body.is_object())
        for (auto it = endpoint.extra_body.begin(); it != endpoint.extra_body.end(); ++it) body[it.key()] = it.value();
    return body;
}

ChatResponse HttpChatBackend::send(const ChatRequest& request) {
    const ModelEndpoint& ep = request.endpoint;
    ParsedUrl url = parse_url(ep.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);

    httplib::Headers headers;
    if (const char* key = std::getenv(ep.api_key_ref.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    const std::string body = request_body(ep, request.messages).dump();
    auto res = client.Post(url.path + "/chat/completions", headers, body, "application/json");

    ChatResponse out;
    if (!res) {
        out.status = 0;
        out.error = httplib::to_string(res.error());
        return out;
    }
    out.status = res->status;
    if (res->status != 200) {
        out.error = res->body.substr(0, 512);
        return out;
    }
    try {
        json doc = json::parse(res->body);
        const json& content = doc.at("choices").at(0).at("message").at("content");
        out.text = content.is_string() ? content.get<std::string>() : std::string();
    } catch (const json::exception& e) {
        // 200 with an unreadable body: surfaced as an empty completion
        out.error = std::string("unreadable completion body: ") + e.what();
        out.text.clear();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mock

MockChatBackend::MockChatBackend(std::uint64_t seed, std::vector<Entry> script)
    : seed_(seed), script_(std::move(script)) {}

std::vector<MockChatBackend::Entry> MockChatBackend::load_script(const std::filesystem::path& path) {
    std::string text = read_file(path);
    std::vector<json> rows;
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        for (auto& r : json::parse(text)) rows.push_back(r);
    } else {
        rows = read_jsonl(path);
    }
    std::vector<Entry> out;
    for (const auto& r : rows) {
        Entry e;
        e.event_id = r.value("event_id", std::string("*"));
        e.endpoint_id = r.value("endpoint_id", std::string("*"));
        e.subject = r.value("subject", std::string("*"));
        if (r.contains("reply")) e.replies.push_back(r["reply"].get<std::string>());
        if (r.contains("replies")) e.replies = r["replies"].get<std::vector<std::string>>();
        e.fail_first = r.value("fail_first", 0);
        e.fail_status = r.value("fail_status", 500);
        e.always_fail = r.value("always_fail", false);
        e.delay_ms = r.value("delay_ms", 0);
        out.push_back(std::move(e));
    }
    return out;
}

const MockChatBackend::Entry* MockChatBackend::match(const std::string& event_id, const std::string& endpoint_id,
                                                     const std::string& subject) const {
    const Entry* best = nullptr;
    int best_score = -1;
    for (const auto& e : script_) {
        auto field = [](const std::string& pattern, const std::string& value, int weight) {
            if (pattern == "*") return 0;
            return pattern == value ? weight : -1000;
        };
        int score = field(e.event_id, event_id, 4) + field(e.endpoint_id, endpoint_id, 2) + field(e.subject, subject, 1);
        if (score > best_score) {
            best = &e;
            best_score = score;
        }
    }
    return best_score >= 0 ? best : nullptr;
}

namespace {

constexpr const char* kOpeners[] = {
    "The compiler is telling you that something in your program does not fit the rules of C.",
    "This message means the program stopped because it reached a line it could not handle.",
    "The error says a name or value in your code is being used in a way C does not allow.",
    "Your program was stopped because it tried to do something it is not allowed to do.",
};
constexpr const char* kCauses[] = {
    "Look at the line the message points to and check how each variable there is declared.",
    "It may be that a value is used before it has been given a sensible starting value.",
    "Check whether the types on both sides of the expression match what you intended.",
    "A loop or index on that line might be reaching further than the data you set up.",
};
constexpr const char* kHints[] = {
    "What do you expect the value to be when that line runs, and how could you check it?",
    "Try adding a printf just before that line to see what your variables hold.",
    "Can you trace the program by hand for a small input and see where it differs?",
    "Re-read the declaration of each name on that line; does every one exist where you use it?",
};

std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
    std::uint64_t h = splitmix64(seed);
    for (auto p : parts) h = splitmix64(fnv1a64(p, h) ^ 0x5bd1e995ULL);
    return h;
}

}  // namespace

std::string MockChatBackend::canned_explanation(std::uint64_t seed, const std::string& event_id,
                                                const std::string& endpoint_id) {
    std::uint64_t h = mix(seed, {"explain", event_id, endpoint_id});
    char tag[17];
    std::snprintf(tag, sizeof tag, "%016llx", static_cast<unsigned long long>(h));
    return std::string("# Error Message\n") + kOpeners[h % 4] + "\n\n# Potential Causes\n" + kCauses[(h >> 8) % 4] +
           "\n\n# Hints/Guidance\n" + kHints[(h >> 16) % 4] + "\n\n(ref " + std::string(tag, 8) + ")";
}

std::string MockChatBackend::canned_verdict(std::uint64_t seed, const std::string& event_id,
                                            const std::string& judge_id, const std::string& subject) {
    std::string out = "Comparing the candidate with my own explanation.\n\nVERDICT:\n";
    for (const auto& c : judging::rubric()) {
        std::uint64_t h = mix(seed, {"verdict", event_id, judge_id, subject, c.key});
        out += std::string(c.key) + ": " + ((h % 4) != 0 ? "1" : "0") + "\n";
    }
    return out;
}

ChatResponse MockChatBackend::send(const ChatRequest& request) {
    calls_++;
    int now = ++in_flight_;
    std::size_t prev = max_in_flight_.load();
    while (static_cast<std::size_t>(now) > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    struct Leave {
        std::atomic<int>& c;
        ~Leave() { --c; }
    } leave{in_flight_};

    const std::string event_id = request.event ? request.event->event_id : std::string();
    const std::string& endpoint_id = request.endpoint.endpoint_id;
    ChatResponse out;
    out.latency_ms = 0;

    const Entry* entry = match(event_id, endpoint_id, request.subject);
    int call_index = 0;
    if (entry) {
        std::lock_guard lock(mu_);
        call_index = entry_calls_[entry]++;
    }
    if (entry && entry->delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(entry->delay_ms));
    if (entry && (entry->always_fail || call_index < entry->fail_first)) {
        out.status = entry->fail_status;
        out.error = "scripted failure";
        return out;
    }
    if (entry && !entry->replies.empty()) {
        std::size_t k = std::min<std::size_t>(call_index - entry->fail_first, entry->replies.size() - 1);
        out.text = entry->replies[k];
        return out;
    }

    const auto& msgs = request.messages.messages;
    const bool wants_verdict = !msgs.empty() && msgs.back().role == Role::user &&
                               msgs.back().content.find("VERDICT:") != std::string::npos;
    out.text = wants_verdict ? canned_verdict(seed_, event_id, endpoint_id, request.subject)
                             : canned_explanation(seed_, event_id, endpoint_id);
    return out;
}

ChatResponse BaselineBackend::send(const ChatRequest& request) {
    ChatResponse out;
    out.latency_ms = 0;
    if (!request.event || !request.event->baseline_response || request.event->baseline_response->empty()) {
        out.status = 200;
        out.text.clear();
        out.error = "event has no baseline response";
        return out;
    }
    out.text = *request.event->baseline_response;
    return out;
}

BackendSet::BackendSet(std::span<const ModelEndpoint> endpoints, std::uint64_t mock_seed) {
    auto http = std::make_shared<HttpChatBackend>();
    auto baseline = std::make_shared<BaselineBackend>();
    std::shared_ptr<MockChatBackend> plain_mock;
    for (const auto& ep : endpoints) {
        if (ep.base_url.rfind("mock://", 0) == 0) {
            if (!ep.mock_script.empty()) {
                by_id_[ep.endpoint_id] =
                    std::make_shared<MockChatBackend>(mock_seed, MockChatBackend::load_script(ep.mock_script));
            } else {
                if (!plain_mock) plain_mock = std::make_shared<MockChatBackend>(mock_seed);
                by_id_[ep.endpoint_id] = plain_mock;
            }
        } else if (ep.base_url.rfind("baseline://", 0) == 0) {
            by_id_[ep.endpoint_id] = baseline;
        } else if (ep.base_url.rfind("http://", 0) == 0 || ep.base_url.rfind("https://", 0) == 0) {
            by_id_[ep.endpoint_id] = http;
        } else {
            throw ConfigError("endpoint '" + ep.endpoint_id + "' has unsupported base_url " + ep.base_url);
        }
    }
}

BackendSet::BackendSet(std::shared_ptr<ChatBackend> all) : all_(std::move(all)) {}

ChatBackend& BackendSet::for_endpoint(const ModelEndpoint& endpoint) const {
    if (all_) return *all_;
    auto it = by_id_.find(endpoint.endpoint_id);
    if (it == by_id_.end()) throw ConfigError("no backend for endpoint '" + endpoint.endpoint_id + "'");
    return *it->second;
}

// ---------------------------------------------------------------------------
// Retry

std::chrono::milliseconds RetryPolicy::delay_before_retry(int failed_attempt) const {
    double d = static_cast<double>(initial_delay.count()) * std::pow(multiplier, failed_attempt - 1);
    d = std::min(d, static_cast<double>(max_delay.count()));
    return std::chrono::milliseconds(static_cast<long long>(d));
}

namespace {

bool is_retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

}  // namespace

Completion complete(ChatBackend& backend, const ChatRequest& request, const RetryPolicy& retry) {
    const int cap = std::max(1, retry.max_attempts);
    int last_status = 0;
    std::string last_error;
    for (int attempt = 1; attempt <= cap; ++attempt) {
        auto start = std::chrono::steady_clock::now();
        ChatResponse res = backend.send(request);
        long measured = static_cast<long>(
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count());
        if (res.status == 200) {
            if (res.text.empty())
                throw ProtocolError("empty completion from '" + request.endpoint.endpoint_id + "'" +
                                    (res.error.empty() ? "" : ": " + res.error));
            return {std::move(res.text), attempt, res.latency_ms.value_or(measured)};
        }
        if (res.status == 401 || res.status == 403)
            throw CredentialError("endpoint '" + request.endpoint.endpoint_id + "' rejected credentials (HTTP " +
                                  std::to_string(res.status) + ", key from $" + request.endpoint.api_key_ref + ")");
        last_status = res.status;
        last_error = res.error;
        if (!is_retryable(res.status))
            throw TransportError(res.status, "endpoint '" + request.endpoint.endpoint_id + "' returned HTTP " +
                                                 std::to_string(res.status) + ": " + res.error);
        if (attempt < cap) {
            auto delay = retry.delay_before_retry(attempt);
            if (retry.sleep) retry.sleep(delay);
            else std::this_thread::sleep_for(delay);
        }
    }
    throw TransportError(last_status, "endpoint '" + request.endpoint.endpoint_id + "' failed after " +
                                          std::to_string(cap) + " attempts (last status " +
                                          std::to_string(last_status) + "): " + last_error);
}

// ---------------------------------------------------------------------------
// Batch generation

json to_json(const GenerationRecord& r) {
    return {{"event_id", r.event_id},
            {"endpoint_id", r.endpoint_id},
            {"response_text", r.response_text},
            {"latency_ms", r.latency_ms},
            {"attempt", r.attempt}};
}

GenerationRecord generation_from_json(const json& j) {
    GenerationRecord r;
    r.event_id = j.at("event_id").get<std::string>();
    r.endpoint_id = j.at("endpoint_id").get<std::string>();
    r.response_text = j.at("response_text").get<std::string>();
    r.latency_ms = j.value("latency_ms", 0L);
    r.attempt = j.value("attempt", 1);
    return r;
}

std::vector<GenerationRecord> read_generations(const std::filesystem::path& path) {
    std::vector<GenerationRecord> out;
    for (const auto& row : read_jsonl(path)) out.push_back(generation_from_json(row));
    return out;
}

json to_json(const FailureRecord& f) {
    json j = {{"event_id", f.event_id}, {"endpoint_id", f.endpoint_id}, {"kind", f.kind},
              {"status", f.status},     {"message", f.message}};
    if (!f.subject.empty()) j["subject"] = f.subject;
    return j;
}

void run_bounded(std::size_t n, int parallelism, const std::function<void(std::size_t)>& task) {
    const int workers = static_cast<int>(std::min<std::size_t>(std::max(1, parallelism), std::max<std::size_t>(n, 1)));
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) task(i);
        });
}

namespace {

void sort_journal(const std::filesystem::path& path, const std::vector<std::string>& key_fields) {
    auto rows = read_jsonl(path);
    std::stable_sort(rows.begin(), rows.end(), [&](const json& a, const json& b) {
        for (const auto& k : key_fields) {
            const auto& x = a.at(k).get_ref<const std::string&>();
            const auto& y = b.at(k).get_ref<const std::string&>();
            if (x != y) return x < y;
        }
        return false;
    });
    write_jsonl(path, rows);
}

}  // namespace

RunSummary generate_responses(std::span<const ErrorEvent> events, std::span<const ModelEndpoint> endpoints,
                              const BackendSet& backends, const GenerateOptions& options) {
    if (options.parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (options.out.empty()) throw ConfigError("generate_responses needs an output path");

    std::set<std::pair<std::string, std::string>> committed;
    for (const auto& row : read_jsonl(options.out))
        committed.emplace(row.at("event_id").get<std::string>(), row.at("endpoint_id").get<std::string>());

    struct Pair {
        const ErrorEvent* event;
        const ModelEndpoint* endpoint;
    };
    RunSummary summary;
    std::vector<Pair> pending;
    for (const auto& ev : events)
        for (const auto& ep : endpoints) {
            ++summary.planned;
            if (committed.count({ev.event_id, ep.endpoint_id})) ++summary.skipped;
            else pending.push_back({&ev, &ep});
        }
    if (options.dry_run) return summary;

    auto failures_path = options.failures;
    if (failures_path.empty()) {
        failures_path = options.out;
        failures_path += ".failures.jsonl";
    }
    std::filesystem::remove(failures_path);
    JournalWriter journal(options.out);
    std::unique_ptr<JournalWriter> ledger;
    std::mutex ledger_mu;
    std::atomic<std::size_t> completed{0}, failed{0}, calls{0};

    const auto& tmpl = options.prompt_template ? *options.prompt_template
                                               : prompting::PromptTemplate::default_explanation();

    run_bounded(pending.size(), options.parallelism, [&](std::size_t i) {
        const Pair& p = pending[i];
        PromptMessages messages = prompting::build_explanation_prompt(*p.event, tmpl);
        ChatRequest req{*p.endpoint, messages, p.event, {}};
        try {
            CountingBackend backend(backends.for_endpoint(*p.endpoint), calls);
            Completion c = complete(backend, req, options.retry);
            journal.append(to_json(GenerationRecord{p.event->event_id, p.endpoint->endpoint_id, std::move(c.text),
                                                    c.latency_ms, c.attempts}));
            ++completed;
        } catch (const Error& e) {
            ++failed;
            FailureRecord f{p.event->event_id, p.endpoint->endpoint_id, {}, to_string(e.kind()), 0, e.what()};
            if (auto* te = dynamic_cast<const TransportError*>(&e)) f.status = te->status();
            std::lock_guard lock(ledger_mu);
            if (!ledger) ledger = std::make_unique<JournalWriter>(failures_path);
            ledger->append(to_json(f));
        }
    });

    summary.completed = completed;
    summary.failed = failed;
    summary.calls = calls;
    sort_journal(options.out, {"event_id", "endpoint_id"});
    if (std::filesystem::exists(failures_path)) sort_journal(failures_path, {"event_id", "endpoint_id"});
    return summary;
}

}  // namespace errlab::inference
