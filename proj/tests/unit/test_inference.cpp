#include <doctest.h>

#include <cstdlib>
#include <set>
#include <thread>

#include <httplib.h>

#include "errlab/error.hpp"
#include "errlab/inference.hpp"
#include "errlab/jsonl.hpp"
#include "test_support.hpp"

using namespace errlab;
using namespace errlab::inference;
using errlab::testing::TempDir;
using errlab::testing::compile_event;
using errlab::testing::runtime_event;

namespace {

ModelEndpoint mock_endpoint(const std::string& id) {
    ModelEndpoint ep;
    ep.endpoint_id = id;
    ep.base_url = "mock://";
    ep.model_name = id;
    ep.api_key_ref = default_api_key_env(id);
    return ep;
}

RetryPolicy no_sleep(int attempts) {
    RetryPolicy r;
    r.max_attempts = attempts;
    r.sleep = [](std::chrono::milliseconds) {};
    return r;
}

std::vector<ErrorEvent> events(std::size_t n) {
    std::vector<ErrorEvent> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(i % 4 == 3 ? runtime_event(i) : compile_event(i));
    return out;
}

std::vector<ModelEndpoint> endpoints(std::size_t m) {
    std::vector<ModelEndpoint> out;
    for (std::size_t i = 0; i < m; ++i) out.push_back(mock_endpoint("model-" + std::to_string(i)));
    return out;
}

const prompting::PromptMessages& hello() {
    static const prompting::PromptMessages p{{{prompting::Role::user, "hello"}}};
    return p;
}

/// Minimal OpenAI-compatible server on an ephemeral port.
class FakeOpenAI {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&, int call)>;

    explicit FakeOpenAI(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            int n;
            {
                std::lock_guard lock(mu_);
                n = ++calls_;
                last_auth_ = req.get_header_value("Authorization");
                last_body_ = json::parse(req.body);
            }
            handler_(req, res, n);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeOpenAI() {
        server_.stop();
        thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int calls() {
        std::lock_guard lock(mu_);
        return calls_;
    }
    std::string last_auth() {
        std::lock_guard lock(mu_);
        return last_auth_;
    }
    json last_body() {
        std::lock_guard lock(mu_);
        return last_body_;
    }

    static void reply(httplib::Response& res, const std::string& text) {
        json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}};
        res.set_content(body.dump(), "application/json");
    }

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mu_;
    int calls_ = 0;
    std::string last_auth_;
    json last_body_;
};

}  // namespace

TEST_CASE("mock with a canned reply") {
    MockChatBackend mock(0, {{.replies = {"ok"}}});
    auto ep = mock_endpoint("m");
    auto c = complete(mock, {ep, hello()});
    CHECK(c.text == "ok");
    CHECK(c.attempts == 1);
}

TEST_CASE("mock failing twice then succeeding needs three attempts") {
    MockChatBackend mock(0, {{.replies = {"ok"}, .fail_first = 2}});
    auto ep = mock_endpoint("m");
    auto c = complete(mock, {ep, hello()}, no_sleep(5));
    CHECK(c.text == "ok");
    CHECK(c.attempts == 3);
    CHECK(mock.calls() == 3);
}

TEST_CASE("always-500 mock with cap 3 is a transport error after 3 attempts") {
    MockChatBackend mock(0, {{.always_fail = true}});
    auto ep = mock_endpoint("m");
    try {
        complete(mock, {ep, hello()}, no_sleep(3));
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.status() == 500);
        CHECK(e.exit_code() == 2);
    }
    CHECK(mock.calls() == 3);
}

TEST_CASE("backoff doubles and is capped") {
    RetryPolicy r;
    r.initial_delay = std::chrono::milliseconds(100);
    r.multiplier = 2;
    r.max_delay = std::chrono::milliseconds(700);
    CHECK(r.delay_before_retry(1).count() == 100);
    CHECK(r.delay_before_retry(2).count() == 200);
    CHECK(r.delay_before_retry(3).count() == 400);
    CHECK(r.delay_before_retry(4).count() == 700);

    std::vector<long> slept;
    r.max_attempts = 4;
    r.sleep = [&](std::chrono::milliseconds d) { slept.push_back(static_cast<long>(d.count())); };
    MockChatBackend mock(0, {{.fail_status = 503, .always_fail = true}});
    auto ep = mock_endpoint("m");
    CHECK_THROWS_AS(complete(mock, {ep, hello()}, r), TransportError);
    CHECK(slept == std::vector<long>{100, 200, 400});
}

TEST_CASE("scripted replies are selected by event, endpoint and subject") {
    MockChatBackend mock(0, {{.replies = {"generic"}},
                             {.endpoint_id = "judge-a", .replies = {"for judge a"}},
                             {.event_id = "ev-1", .endpoint_id = "judge-a", .replies = {"ev-1 judge a"}},
                             {.endpoint_id = "judge-a", .subject = "cand", .replies = {"subject"}}});
    auto a = mock_endpoint("judge-a");
    auto b = mock_endpoint("judge-b");
    auto ev1 = compile_event(1);
    ev1.event_id = "ev-1";
    auto ev2 = compile_event(2);
    CHECK(complete(mock, {b, hello(), &ev2}).text == "generic");
    CHECK(complete(mock, {a, hello(), &ev2}).text == "for judge a");
    CHECK(complete(mock, {a, hello(), &ev1}).text == "ev-1 judge a");
    CHECK(complete(mock, {a, hello(), &ev2, "cand"}).text == "subject");
}

TEST_CASE("HTTP backend against a fake OpenAI server") {
    HttpChatBackend http(std::chrono::seconds(5));
    ModelEndpoint ep;
    ep.endpoint_id = "gpt-test";
    ep.model_name = "gpt-test-model";
    ep.api_key_ref = "ERRLAB_API_KEY_GPT_TEST";
    ep.params.max_output_tokens = 256;
    ep.extra_body = {{"reasoning_effort", "none"}};

    SUBCASE("request shape and bearer token from the environment") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int) { FakeOpenAI::reply(res, "hi"); });
        ep.base_url = server.base_url();
        ::setenv("ERRLAB_API_KEY_GPT_TEST", "sk-test-123", 1);
        auto c = complete(http, {ep, hello()}, no_sleep(1));
        ::unsetenv("ERRLAB_API_KEY_GPT_TEST");
        CHECK(c.text == "hi");
        CHECK(server.last_auth() == "Bearer sk-test-123");
        auto body = server.last_body();
        CHECK(body["model"] == "gpt-test-model");
        CHECK(body["temperature"] == 0.0);
        CHECK(body["max_tokens"] == 256);
        CHECK(body["reasoning_effort"] == "none");
        CHECK(body["messages"][0]["role"] == "user");
        CHECK(body["messages"][0]["content"] == "hello");
    }
    SUBCASE("no key in the environment sends no Authorization header") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int) { FakeOpenAI::reply(res, "x"); });
        ep.base_url = server.base_url();
        ::unsetenv("ERRLAB_API_KEY_GPT_TEST");
        complete(http, {ep, hello()}, no_sleep(1));
        CHECK(server.last_auth().empty());
    }
    SUBCASE("429 then 200 is retried") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int n) {
            if (n == 1) res.status = 429;
            else FakeOpenAI::reply(res, "after backoff");
        });
        ep.base_url = server.base_url();
        auto c = complete(http, {ep, hello()}, no_sleep(3));
        CHECK(c.text == "after backoff");
        CHECK(c.attempts == 2);
        CHECK(server.calls() == 2);
    }
    SUBCASE("401 is a credential error without retry") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int) { res.status = 401; });
        ep.base_url = server.base_url();
        CHECK_THROWS_AS(complete(http, {ep, hello()}, no_sleep(5)), CredentialError);
        CHECK(server.calls() == 1);
    }
    SUBCASE("persistent 500 exhausts the attempt cap") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int) { res.status = 500; });
        ep.base_url = server.base_url();
        CHECK_THROWS_AS(complete(http, {ep, hello()}, no_sleep(3)), TransportError);
        CHECK(server.calls() == 3);
    }
    SUBCASE("400 is not retried") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int) { res.status = 400; });
        ep.base_url = server.base_url();
        CHECK_THROWS_AS(complete(http, {ep, hello()}, no_sleep(3)), TransportError);
        CHECK(server.calls() == 1);
    }
    SUBCASE("200 with empty content is a protocol error") {
        FakeOpenAI server([](const httplib::Request&, httplib::Response& res, int) { FakeOpenAI::reply(res, ""); });
        ep.base_url = server.base_url();
        CHECK_THROWS_AS(complete(http, {ep, hello()}, no_sleep(3)), ProtocolError);
    }
    SUBCASE("refused connection maps to a retryable transport failure") {
        ep.base_url = "http://127.0.0.1:1/v1";
        try {
            complete(http, {ep, hello()}, no_sleep(2));
            FAIL("expected TransportError");
        } catch (const TransportError& e) {
            CHECK(e.status() == 0);
        }
    }
}

TEST_CASE("100 events x 8 mock endpoints give 800 records") {
    TempDir tmp;
    auto evs = events(100);
    auto eps = endpoints(8);
    BackendSet backends(eps, 42);
    GenerateOptions opts;
    opts.out = tmp / "responses.jsonl";
    opts.parallelism = 8;
    auto s = generate_responses(evs, eps, backends, opts);
    CHECK(s.planned == 800);
    CHECK(s.completed == 800);
    CHECK(s.calls == 800);
    auto records = read_generations(opts.out);
    REQUIRE(records.size() == 800);
    std::set<std::pair<std::string, std::string>> keys;
    for (const auto& r : records) {
        keys.emplace(r.event_id, r.endpoint_id);
        CHECK_FALSE(r.response_text.empty());
    }
    CHECK(keys.size() == 800);
    CHECK(std::is_sorted(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.event_id, a.endpoint_id) < std::tie(b.event_id, b.endpoint_id);
    }));
    CHECK_FALSE(std::filesystem::exists(tmp / "responses.jsonl.failures.jsonl"));

    SUBCASE("rerun makes no calls and output is byte-identical") {
        auto before = read_file(opts.out);
        auto again = generate_responses(evs, eps, backends, opts);
        CHECK(again.skipped == 800);
        CHECK(again.calls == 0);
        CHECK(read_file(opts.out) == before);
    }
}

TEST_CASE("restart after half the pairs only runs the rest") {
    TempDir tmp;
    auto evs = events(20);
    auto eps = endpoints(4);
    auto mock = std::make_shared<MockChatBackend>(1);
    BackendSet backends(mock);
    GenerateOptions opts;
    opts.out = tmp / "responses.jsonl";

    std::vector<ErrorEvent> first_half(evs.begin(), evs.begin() + 10);
    generate_responses(first_half, eps, backends, opts);
    CHECK(mock->calls() == 40);

    // an interrupted append leaves a torn last line
    {
        std::ofstream out(opts.out, std::ios::app);
        out << R"({"event_id":"ev-c-00019","endp)";
    }
    auto s = generate_responses(evs, eps, backends, opts);
    CHECK(s.skipped == 40);
    CHECK(s.completed == 40);
    CHECK(mock->calls() == 80);
    CHECK(read_generations(opts.out).size() == 80);
}

TEST_CASE("an endpoint failing every call produces a full failure ledger") {
    TempDir tmp;
    auto evs = events(12);
    auto eps = endpoints(3);
    auto mock = std::make_shared<MockChatBackend>(
        0, std::vector<MockChatBackend::Entry>{{.endpoint_id = "model-1", .always_fail = true}, {}});
    BackendSet backends(mock);
    GenerateOptions opts;
    opts.out = tmp / "responses.jsonl";
    opts.retry = no_sleep(2);
    auto s = generate_responses(evs, eps, backends, opts);
    CHECK(s.failed == 12);
    CHECK(s.completed == 24);
    CHECK(s.calls == 24 + 12 * 2);
    for (const auto& r : read_generations(opts.out)) CHECK(r.endpoint_id != "model-1");
    auto ledger = read_jsonl(tmp / "responses.jsonl.failures.jsonl");
    REQUIRE(ledger.size() == 12);
    for (const auto& f : ledger) {
        CHECK(f["endpoint_id"] == "model-1");
        CHECK(f["kind"] == "transport error");
        CHECK(f["status"] == 500);
    }
}

TEST_CASE("parallelism bounds in-flight requests") {
    TempDir tmp;
    auto evs = events(24);
    auto eps = endpoints(2);
    auto mock = std::make_shared<MockChatBackend>(0, std::vector<MockChatBackend::Entry>{{.delay_ms = 5}});
    BackendSet backends(mock);
    GenerateOptions opts;
    opts.out = tmp / "responses.jsonl";
    opts.parallelism = 3;
    generate_responses(evs, eps, backends, opts);
    CHECK(mock->max_in_flight() <= 3);
    CHECK(mock->max_in_flight() >= 1);
}

TEST_CASE("dry run plans without calling") {
    TempDir tmp;
    auto evs = events(5);
    auto eps = endpoints(2);
    auto mock = std::make_shared<MockChatBackend>(0);
    BackendSet backends(mock);
    GenerateOptions opts;
    opts.out = tmp / "responses.jsonl";
    opts.dry_run = true;
    auto s = generate_responses(evs, eps, backends, opts);
    CHECK(s.planned == 10);
    CHECK(mock->calls() == 0);
    CHECK_FALSE(std::filesystem::exists(opts.out));
}

TEST_CASE("baseline endpoint replays the captured tool response") {
    auto ev = compile_event(1);
    ev.baseline_response = "dcc says: you forgot a semicolon";
    ModelEndpoint ep;
    ep.endpoint_id = "dcc-help";
    ep.base_url = "baseline://";
    BaselineBackend b;
    CHECK(complete(b, {ep, hello(), &ev}).text == "dcc says: you forgot a semicolon");
    auto bare = compile_event(2);
    CHECK_THROWS_AS(complete(b, {ep, hello(), &bare}), ProtocolError);
}

TEST_CASE("endpoint configuration") {
    TempDir tmp;
    write_file_atomic(tmp / "endpoints.toml", R"(# candidates
[[endpoint]]
id = "gpt-4.1"
base_url = "https://api.openai.com/v1"
model = "gpt-4.1-2025-04-14"
temperature = 0.0
max_output_tokens = 800

[[endpoint]]
id = "qwen3-4b"
base_url = "http://localhost:8000/v1"
model = "Qwen/Qwen3-4B"
api_key_env = "LOCAL_KEY"
reasoning = false
extra_body = '{"chat_template_kwargs": {"enable_thinking": false}}'

[[endpoint]]
id = "scripted"
base_url = "mock://"
mock_script = "script.jsonl"
)");
    auto eps = load_endpoints(tmp / "endpoints.toml");
    REQUIRE(eps.size() == 3);
    CHECK(eps[0].endpoint_id == "gpt-4.1");
    CHECK(eps[0].api_key_ref == default_api_key_env("gpt-4.1"));
    CHECK(eps[0].params.max_output_tokens == 800);
    CHECK(eps[1].api_key_ref == "LOCAL_KEY");
    CHECK(eps[1].extra_body["chat_template_kwargs"]["enable_thinking"] == false);
    CHECK(eps[2].mock_script == (tmp / "script.jsonl").string());

    CHECK_THROWS_AS(endpoints_from_json(json::parse(R"({"endpoint":[{"id":"a"},{"id":"a"}]})")), ConfigError);
    CHECK_THROWS_AS(endpoints_from_json(json::parse(R"({"endpoint":[{"id":"a","temperature":-1}]})")), ConfigError);
    CHECK_THROWS_AS(load_endpoints(tmp / "missing.toml"), ConfigError);
}

TEST_CASE("api key variable names") {
    CHECK(default_api_key_env("gpt-4.1") == "ERRLAB_API_KEY_GPT_4_1");
    CHECK(default_api_key_env("qwen3-4b") == "ERRLAB_API_KEY_QWEN3_4B");
}
