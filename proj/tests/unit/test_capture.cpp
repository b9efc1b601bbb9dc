#include <doctest.h>

#include "errlab/capture.hpp"
#include "errlab/error.hpp"
#include "errlab/jsonl.hpp"
#include "test_support.hpp"

using namespace errlab;
using namespace errlab::capture;
using errlab::testing::TempDir;
using errlab::testing::data_dir;

TEST_CASE("single clang line parses into one diagnostic") {
    auto d = parse_compiler_diagnostics("main.c:3:5: error: use of undeclared identifier 'x'");
    REQUIRE(d.size() == 1);
    CHECK(d[0].file == "main.c");
    CHECK(d[0].line == 3);
    CHECK(d[0].column == 5);
    CHECK(d[0].severity == Severity::error);
    CHECK(d[0].message == "use of undeclared identifier 'x'");
    CHECK_FALSE(d[0].snippet.has_value());
}

TEST_CASE("empty stderr yields no diagnostics") { CHECK(parse_compiler_diagnostics("").empty()); }

TEST_CASE("two clang errors with a note: the note folds into the first") {
    auto d = parse_compiler_diagnostics(read_file(data_dir() / "fixtures/clang_two_errors.txt"));
    REQUIRE(d.size() == 2);

    // Hand-parsed from the fixture.
    CHECK(d[0].file == "main.c");
    CHECK(d[0].line == 4);
    CHECK(d[0].column == 5);
    CHECK(d[0].severity == Severity::error);
    CHECK(d[0].message ==
          "use of undeclared identifier 'count'; did you mean 'counts'?\n"
          "main.c:3:9: note: 'counts' declared here");
    CHECK(d[0].snippet ==
          std::optional<std::string>("    count = 0;\n    ^~~~~\n    counts\n    int counts[10];\n        ^"));

    CHECK(d[1].line == 7);
    CHECK(d[1].column == 12);
    CHECK(d[1].message ==
          "returning 'char *' from a function with result type 'int' makes integer from pointer without a cast "
          "[-Wint-conversion]");
    CHECK(d[1].snippet == std::optional<std::string>("    return name;\n           ^~~~"));
}

TEST_CASE("gcc gutter snippets, colour codes and context lines") {
    const std::string raw =
        "main.c: In function 'main':\n"
        "\x1b[01m\x1b[Kmain.c:4:18:\x1b[m\x1b[K \x1b[01;31m\x1b[Kerror: \x1b[m\x1b[Kexpected ';' before 'printf'\n"
        "    4 |     int total = 3\n"
        "      |                  ^\n"
        "      |                  ;\n"
        "    5 |     printf(\"%d\\n\", total);\n"
        "      |     ~~~~~~\n"
        "compilation terminated.\n";
    auto d = parse_compiler_diagnostics(raw);
    REQUIRE(d.size() == 1);
    CHECK(d[0].line == 4);
    CHECK(d[0].column == 18);
    CHECK(d[0].message == "expected ';' before 'printf'");
    REQUIRE(d[0].snippet);
    CHECK(d[0].snippet->find("int total = 3") != std::string::npos);
    CHECK(d[0].snippet->find("~~~~~~") != std::string::npos);
}

TEST_CASE("linker lines become errors; context lines are dropped") {
    auto d = parse_compiler_diagnostics(
        "/usr/bin/ld: /tmp/ccX.o: in function `main':\n"
        "main.c:(.text+0x13): undefined reference to `sqrt'\n"
        "collect2: error: ld returned 1 exit status\n");
    REQUIRE(d.size() == 2);
    CHECK(d[0].file == "main.c");
    CHECK(d[0].message == "undefined reference to `sqrt'");
    CHECK(d[1].file == "collect2");
    CHECK(d[1].severity == Severity::error);
    CHECK(d[1].message == "collect2: error: ld returned 1 exit status");
}

TEST_CASE("fatal error severity") {
    auto d = parse_compiler_diagnostics("main.c:1:10: fatal error: 'missing.h' file not found");
    REQUIRE(d.size() == 1);
    CHECK(d[0].severity == Severity::fatal);
}

TEST_CASE("run_compile on real programs") {
    TempDir tmp;
    SUBCASE("well-formed program compiles without events") {
        auto r = run_compile("cc -o {out} {src}", data_dir() / "fixtures/c/ok.c");
        CHECK(r.exit_status == 0);
        CHECK(r.events.empty());
        std::filesystem::remove(r.binary);
    }
    SUBCASE("missing semicolon yields one compile event") {
        auto r = run_compile("cc -fsyntax-only {src}", data_dir() / "fixtures/c/missing_semicolon.c",
                             {"2024T1", 3, std::nullopt});
        CHECK(r.exit_status != 0);
        REQUIRE(r.events.size() == 1);
        const auto& ev = r.events[0];
        CHECK(ev.phase == Phase::compile);
        CHECK(ev.period == "2024T1");
        CHECK(ev.week == 3);
        REQUIRE_FALSE(ev.diagnostics.empty());
        CHECK(ev.diagnostics[0].severity == Severity::error);
        // gcc points at the next token, clang at the end of line 4
        CHECK((ev.diagnostics[0].line == 4 || ev.diagnostics[0].line == 5));
        CHECK(ev.event_id.rfind("ev-", 0) == 0);
        CHECK_NOTHROW(validate(ev));
    }
    SUBCASE("template without placeholder is a configuration error") {
        CHECK_THROWS_AS(run_compile("cc -o prog main.c", data_dir() / "fixtures/c/ok.c"), ConfigError);
    }
}

namespace {

json sample_report() {
    return json::parse(R"({
      "signal": "SIGSEGV",
      "call_stack": [{"function": "read_at", "file": "main.c", "line": 4},
                     {"function": "main", "file": "main.c", "line": 9}],
      "variables": [{"frame": 0, "name": "values", "type": "int *", "value": "0x0"},
                    {"frame": 0, "name": "index", "type": "int", "value": "3"},
                    {"frame": 1, "name": "values", "type": "int *", "value": "0x0"}]
    })");
}

}  // namespace

TEST_CASE("ingest maps a runtime report onto an event") {
    auto ev = ingest_runtime_report(sample_report(), "int main(void){}", {"2024T1", 5, std::nullopt});
    CHECK(ev.phase == Phase::runtime);
    REQUIRE(ev.runtime);
    CHECK(ev.runtime->signal_or_cause == "SIGSEGV");
    CHECK(ev.runtime->call_stack.size() == 2);
    CHECK(ev.runtime->variable_state.size() == 3);
    CHECK(ev.week == 5);
    CHECK_NOTHROW(validate(ev));
}

TEST_CASE("ingest names the missing field") {
    json doc = sample_report();
    doc.erase("call_stack");
    try {
        ingest_runtime_report(doc, "");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.field() == "call_stack");
    }
    json empty_stack = sample_report();
    empty_stack["call_stack"] = json::array();
    CHECK_THROWS_AS(ingest_runtime_report(empty_stack, ""), SchemaError);
}

TEST_CASE("ingest then serialize round-trips 20 random reports") {
    Rng rng(20240301);
    const char* signals[] = {"SIGSEGV", "SIGFPE", "SIGABRT", "stack overflow"};
    for (int t = 0; t < 20; ++t) {
        json doc;
        doc["signal"] = signals[rng.uniform_below(4)];
        doc["call_stack"] = json::array();
        const auto frames = 1 + rng.uniform_below(6);
        for (std::uint64_t f = 0; f < frames; ++f)
            doc["call_stack"].push_back({{"function", "fn" + std::to_string(rng.uniform_below(100))},
                                         {"file", "main.c"},
                                         {"line", 1 + static_cast<int>(rng.uniform_below(200))}});
        doc["variables"] = json::array();
        const auto vars = rng.uniform_below(5);
        for (std::uint64_t v = 0; v < vars; ++v)
            doc["variables"].push_back({{"frame", static_cast<int>(rng.uniform_below(frames))},
                                        {"name", "v" + std::to_string(v)},
                                        {"type", "int"},
                                        {"value", std::to_string(rng.next() % 1000)}});
        if (rng.uniform_below(2)) doc["stdin"] = "42\n";
        auto ev = ingest_runtime_report(doc, "int main(void){}");
        CHECK(serialize_runtime_report(*ev.runtime) == doc);
    }
}

TEST_CASE("run_program captures an instrumented crash") {
    TempDir tmp;
    auto compiled = run_compile("cc -o {out} {src}", data_dir() / "fixtures/c/crash_with_report.c", {},
                                {.output_binary = tmp / "crash"});
    REQUIRE(compiled.exit_status == 0);
    RunOptions opts;
    opts.stdin_data = "5\n";
    auto ev = run_program(compiled.binary, data_dir() / "fixtures/c/crash_with_report.c", {"2024T1", 2, {}}, opts);
    REQUIRE(ev);
    CHECK(ev->phase == Phase::runtime);
    CHECK(ev->runtime->signal_or_cause == "SIGSEGV");
    CHECK(ev->runtime->call_stack.size() == 2);
    CHECK(ev->runtime->variable_state[1].value == "5");
    CHECK(ev->runtime->stdin_excerpt == std::optional<std::string>("5\n"));
}

TEST_CASE("run_program without a report") {
    TempDir tmp;
    SUBCASE("clean exit yields no event") {
        auto c = run_compile("cc -o {out} {src}", data_dir() / "fixtures/c/ok.c", {}, {.output_binary = tmp / "ok"});
        CHECK_FALSE(run_program(c.binary, data_dir() / "fixtures/c/ok.c").has_value());
    }
    SUBCASE("a crash without a report is a capture error") {
        auto c = run_compile("cc -o {out} {src}", data_dir() / "fixtures/c/crash_no_report.c", {},
                             {.output_binary = tmp / "crash"});
        CHECK_THROWS_AS(run_program(c.binary, data_dir() / "fixtures/c/crash_no_report.c"), CaptureError);
    }
}

TEST_CASE("event ids are content hashes") {
    auto a = errlab::testing::compile_event(1);
    auto b = a;
    CHECK(make_event_id(a) == make_event_id(b));
    b.source_code += " ";
    CHECK(make_event_id(a) != make_event_id(b));
}
