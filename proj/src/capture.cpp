#include "errlab/capture.hpp"

#include <atomic>
#include <cstdio>
#include <regex>

#include "errlab/digest.hpp"
#include "errlab/error.hpp"
#include "errlab/jsonl.hpp"
#include "errlab/subprocess.hpp"

#include <unistd.h>

namespace errlab::capture {

namespace {

std::string strip_ansi(std::string_view line) {
    std::string out;
    out.reserve(line.size());
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\x1b' && i + 1 < line.size() && line[i + 1] == '[') {
            i += 2;
            while (i < line.size() && !(line[i] >= '@' && line[i] <= '~')) ++i;
            continue;
        }
        out += line[i];
    }
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return out;
}

// file:line:col: severity: message
const std::regex& located_line() {
    static const std::regex re(R"(^(.+?):(\d+):(\d+): (fatal error|[A-Za-z]+): (.*)$)");
    return re;
}

// Lines carrying a known severity tag but no usable location, e.g.
// "collect2: error: ld returned 1 exit status".
const std::regex& unlocated_line() {
    static const std::regex re(R"(^([^:]*)(?::.*?)?: (fatal error|error|warning|note): )");
    return re;
}

// Summary and context lines that belong to no diagnostic.
const std::regex& context_line() {
    static const std::regex re(
        R"(^(\d+ (errors?|warnings?)( and \d+ (errors?|warnings?))? generated\.)"
        R"(|compilation terminated\.)"
        R"(|.*: [Ii]n (function|member function|instantiation of) .*:)"
        R"(|In file included from .*|\s+from .+:\d+[:,])$)");
    return re;
}

// ld: "main.c:(.text+0x13): undefined reference to `sqrt'"
const std::regex& linker_line() {
    static const std::regex re(R"(^(.+?):\(\.[^)]*\): (.*)$)");
    return re;
}

bool is_gutter_line(std::string_view line) {
    // gcc: "    3 |   int x = y" and "      |       ^~~"
    std::size_t i = 0;
    while (i < line.size() && line[i] == ' ') ++i;
    if (i == 0) return false;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    while (i < line.size() && line[i] == ' ') ++i;
    return i < line.size() && line[i] == '|';
}

bool is_caret_line(std::string_view line) {
    bool caret = false;
    for (char c : line) {
        if (c == '^') caret = true;
        else if (c != ' ' && c != '\t' && c != '~' && c != '|') return false;
    }
    return caret;
}

int parse_positive(const std::string& digits) {
    if (digits.size() > 9) return 0;
    return std::stoi(digits);
}

void append_line(std::string& target, const std::string& line) {
    if (!target.empty()) target += '\n';
    target += line;
}

void append_snippet(Diagnostic& d, const std::string& line) {
    if (!d.snippet) d.snippet = std::string();
    append_line(*d.snippet, line);
}

}  // namespace

std::vector<Diagnostic> parse_compiler_diagnostics(std::string_view raw_stderr, ParseOptions options) {
    std::vector<std::string> lines;
    {
        std::size_t start = 0;
        while (start <= raw_stderr.size()) {
            std::size_t nl = raw_stderr.find('\n', start);
            if (nl == std::string_view::npos) nl = raw_stderr.size();
            lines.push_back(strip_ansi(raw_stderr.substr(start, nl - start)));
            start = nl + 1;
        }
        if (!lines.empty() && lines.back().empty()) lines.pop_back();
    }

    std::vector<Diagnostic> out;
    bool in_snippet = false;  // previous line belonged to a snippet
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (std::regex_match(line, context_line())) {
            in_snippet = false;
            continue;
        }
        std::smatch m;
        std::optional<Diagnostic> parsed;
        bool is_note = false;

        if (std::regex_match(line, m, located_line())) {
            Diagnostic d;
            d.file = m[1].str();
            d.line = parse_positive(m[2].str());
            d.column = parse_positive(m[3].str());
            auto sev = parse_severity(m[4].str());
            d.severity = sev ? *sev : (options.nonzero_exit ? Severity::error : Severity::note);
            d.message = m[5].str();
            if (d.line < 1 || d.column < 1) {
                d.line = 1;
                d.column = 1;
                d.message = line;
            }
            is_note = sev == Severity::note;
            parsed = std::move(d);
        } else if (std::regex_match(line, m, linker_line())) {
            Diagnostic d;
            d.file = m[1].str();
            d.severity = Severity::error;
            d.message = m[2].str();
            parsed = std::move(d);
        } else if (std::regex_search(line, m, unlocated_line())) {
            Diagnostic d;
            d.file = m[1].str();
            d.severity = *parse_severity(m[2].str());
            d.message = line;
            is_note = d.severity == Severity::note;
            parsed = std::move(d);
        }

        if (parsed) {
            in_snippet = false;
            if (is_note && !out.empty()) {
                append_line(out.back().message, line);
                in_snippet = true;  // the note's own snippet joins the parent
                continue;
            }
            out.push_back(std::move(*parsed));
            continue;
        }

        if (out.empty()) continue;
        Diagnostic& last = out.back();
        const bool next_is_caret = i + 1 < lines.size() && is_caret_line(lines[i + 1]);
        const bool indented = !line.empty() && (line[0] == ' ' || line[0] == '\t');
        if (is_gutter_line(line) || is_caret_line(line) || next_is_caret || (in_snippet && indented)) {
            append_snippet(last, line);
            in_snippet = true;
        } else {
            append_line(last.message, line);
            in_snippet = false;
        }
    }
    return out;
}

namespace {

std::string substitute(const std::string& word, const std::string& key, const std::string& value) {
    std::string out = word;
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
        out.replace(pos, key.size(), value);
    return out;
}

std::filesystem::path temp_path(const std::string& stem) {
    static std::atomic<unsigned> counter{0};
    return std::filesystem::temp_directory_path() /
           (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
}

}  // namespace

std::string make_event_id(const ErrorEvent& event) {
    json j = to_json(event);
    j.erase("event_id");
    return "ev-" + sha256_hex(j.dump()).substr(0, 20);
}

CompileResult run_compile(const std::string& compiler_template, const std::filesystem::path& source_path,
                          const EventMeta& meta, const CompileOptions& options) {
    if (compiler_template.find("{src}") == std::string::npos)
        throw ConfigError("compiler template has no {src} placeholder: " + compiler_template);
    std::string source = read_file(source_path);

    CompileResult result;
    const bool wants_out = compiler_template.find("{out}") != std::string::npos;
    if (wants_out) result.binary = options.output_binary.empty() ? temp_path("errlab-bin") : options.output_binary;

    std::vector<std::string> argv;
    for (auto& word : split_command_line(compiler_template)) {
        word = substitute(word, "{src}", source_path.string());
        if (wants_out) word = substitute(word, "{out}", result.binary.string());
        argv.push_back(std::move(word));
    }

    ProcessOptions popts;
    popts.timeout = options.timeout;
    popts.max_capture_bytes = options.max_stderr_bytes;
    ProcessResult proc = run_process(argv, popts);
    if (proc.timed_out)
        throw CaptureError("compiler timed out after " + std::to_string(options.timeout.count()) + " ms",
                           proc.stderr_data);

    result.exit_status = proc.exit_status;
    if (proc.exit_status == 0) return result;

    ErrorEvent ev;
    ev.phase = Phase::compile;
    ev.source_code = std::move(source);
    ev.diagnostics = parse_compiler_diagnostics(proc.stderr_data, {.nonzero_exit = true});
    if (ev.diagnostics.empty()) {
        // a failing compiler that printed nothing parseable still yields an event
        Diagnostic d;
        d.file = source_path.filename().string();
        d.severity = Severity::error;
        d.message = proc.stderr_data.empty() ? "compiler exited with status " + std::to_string(proc.exit_status)
                                             : proc.stderr_data;
        ev.diagnostics.push_back(std::move(d));
    }
    ev.period = meta.period;
    ev.week = meta.week;
    ev.captured_at = utc_timestamp_now();
    ev.baseline_response = meta.baseline_response;
    ev.event_id = make_event_id(ev);
    result.events.push_back(std::move(ev));
    return result;
}

ErrorEvent ingest_runtime_report(const json& doc, const std::string& source_code, const EventMeta& meta) {
    ErrorEvent ev;
    ev.phase = Phase::runtime;
    ev.runtime = runtime_from_json(doc);
    if (ev.runtime->call_stack.empty())
        throw SchemaError("call_stack", "runtime report has an empty call_stack");
    for (const auto& f : ev.runtime->call_stack)
        if (f.line < 1) throw SchemaError("call_stack", "call_stack frame with line < 1");
    ev.source_code = source_code;
    ev.period = meta.period;
    ev.week = meta.week;
    ev.baseline_response = meta.baseline_response;
    ev.captured_at = utc_timestamp_now();
    ev.event_id = make_event_id(ev);
    return ev;
}

json serialize_runtime_report(const RuntimeContext& runtime) { return to_json(runtime); }

std::optional<ErrorEvent> run_program(const std::filesystem::path& binary, const std::filesystem::path& source_path,
                                      const EventMeta& meta, const RunOptions& options) {
    std::filesystem::path report = options.report_path.empty() ? temp_path("errlab-report") : options.report_path;
    std::filesystem::remove(report);

    ProcessOptions popts;
    popts.timeout = options.timeout;
    popts.stdin_data = options.stdin_data;
    popts.extra_env.emplace_back(kRuntimeReportEnv, report.string());
    ProcessResult proc = run_process({binary.string()}, popts);
    if (proc.timed_out)
        throw CaptureError("program timed out after " + std::to_string(options.timeout.count()) + " ms",
                           proc.stderr_data);

    if (std::filesystem::exists(report)) {
        json doc;
        try {
            doc = json::parse(read_file(report));
        } catch (const json::parse_error& e) {
            throw SchemaError("signal", std::string("runtime report is not valid JSON: ") + e.what());
        }
        std::filesystem::remove(report);
        if (options.stdin_data && !doc.contains("stdin")) doc["stdin"] = *options.stdin_data;
        return ingest_runtime_report(doc, read_file(source_path), meta);
    }
    if (proc.signaled)
        throw CaptureError("program terminated by " + signal_name(proc.signal) +
                               " without writing a runtime report to $" + kRuntimeReportEnv,
                           proc.stderr_data);
    return std::nullopt;
}

}  // namespace errlab::capture
