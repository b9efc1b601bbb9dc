#include "errlab/types.hpp"

#include <chrono>
#include <ctime>

#include "errlab/error.hpp"

namespace errlab {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "configuration error";
        case ErrorKind::capture: return "capture error";
        case ErrorKind::schema: return "schema error";
        case ErrorKind::sizing: return "sizing error";
        case ErrorKind::validation: return "validation error";
        case ErrorKind::conflict: return "conflict";
        case ErrorKind::transport: return "transport error";
        case ErrorKind::credential: return "credential error";
        case ErrorKind::protocol: return "protocol error";
        case ErrorKind::aggregation: return "aggregation error";
        case ErrorKind::insufficient_data: return "insufficient data";
    }
    return "error";
}

int Error::exit_code() const noexcept {
    switch (kind_) {
        case ErrorKind::transport:
        case ErrorKind::credential:
        case ErrorKind::protocol:
            return 2;
        default:
            return 1;
    }
}

const char* to_string(Phase phase) {
    return phase == Phase::compile ? "compile" : "runtime";
}

const char* to_string(Severity severity) {
    switch (severity) {
        case Severity::error: return "error";
        case Severity::warning: return "warning";
        case Severity::note: return "note";
        case Severity::fatal: return "fatal";
    }
    return "error";
}

Phase parse_phase(std::string_view text) {
    if (text == "compile") return Phase::compile;
    if (text == "runtime") return Phase::runtime;
    throw SchemaError("phase", "unknown phase '" + std::string(text) + "'");
}

std::optional<Severity> parse_severity(std::string_view text) {
    if (text == "error") return Severity::error;
    if (text == "warning") return Severity::warning;
    if (text == "note") return Severity::note;
    if (text == "fatal" || text == "fatal error") return Severity::fatal;
    return std::nullopt;
}

void validate(const ErrorEvent& event, WeekBounds bounds) {
    if (event.event_id.empty()) throw ValidationError("event_id is empty");
    if (event.phase == Phase::compile && event.diagnostics.empty())
        throw ValidationError("compile event " + event.event_id + " has no diagnostics");
    if (event.phase == Phase::runtime) {
        if (!event.runtime)
            throw ValidationError("runtime event " + event.event_id + " has no runtime context");
        if (event.runtime->call_stack.empty())
            throw ValidationError("runtime event " + event.event_id + " has an empty call stack");
        for (const auto& f : event.runtime->call_stack)
            if (f.line < 1)
                throw ValidationError("runtime event " + event.event_id + " has a frame with line < 1");
    }
    if (event.week < bounds.first || event.week > bounds.last)
        throw ValidationError("event " + event.event_id + " week " + std::to_string(event.week) +
                              " outside [" + std::to_string(bounds.first) + ", " +
                              std::to_string(bounds.last) + "]");
}

json to_json(const Diagnostic& d) {
    json j = {{"file", d.file},
              {"line", d.line},
              {"column", d.column},
              {"severity", to_string(d.severity)},
              {"message", d.message}};
    if (d.snippet) j["snippet"] = *d.snippet;
    return j;
}

json to_json(const RuntimeContext& r) {
    json j;
    j["signal"] = r.signal_or_cause;
    if (r.stdin_excerpt) j["stdin"] = *r.stdin_excerpt;
    j["call_stack"] = json::array();
    for (const auto& f : r.call_stack)
        j["call_stack"].push_back({{"function", f.function}, {"file", f.file}, {"line", f.line}});
    j["variables"] = json::array();
    for (const auto& v : r.variable_state)
        j["variables"].push_back(
            {{"frame", v.frame}, {"name", v.name}, {"type", v.type}, {"value", v.value}});
    return j;
}

json to_json(const ErrorEvent& e) {
    json j;
    j["event_id"] = e.event_id;
    j["phase"] = to_string(e.phase);
    j["period"] = e.period;
    j["week"] = e.week;
    j["captured_at"] = e.captured_at;
    j["source_code"] = e.source_code;
    j["diagnostics"] = json::array();
    for (const auto& d : e.diagnostics) j["diagnostics"].push_back(to_json(d));
    if (e.runtime) j["runtime"] = to_json(*e.runtime);
    if (e.baseline_response) j["baseline_response"] = *e.baseline_response;
    return j;
}

namespace {

const json& require(const json& j, const char* field) {
    if (!j.is_object() || !j.contains(field))
        throw SchemaError(field, std::string("missing required field: ") + field);
    return j.at(field);
}

template <typename T>
T require_as(const json& j, const char* field) {
    const json& v = require(j, field);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw SchemaError(field, std::string("field has the wrong type: ") + field);
    }
}

}  // namespace

Diagnostic diagnostic_from_json(const json& j) {
    Diagnostic d;
    d.file = require_as<std::string>(j, "file");
    d.line = require_as<int>(j, "line");
    d.column = require_as<int>(j, "column");
    auto sev = parse_severity(require_as<std::string>(j, "severity"));
    if (!sev) throw SchemaError("severity", "unknown severity");
    d.severity = *sev;
    d.message = require_as<std::string>(j, "message");
    if (j.contains("snippet") && !j["snippet"].is_null()) d.snippet = j["snippet"].get<std::string>();
    return d;
}

RuntimeContext runtime_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("signal", "runtime report must be a JSON object");
    RuntimeContext r;
    r.signal_or_cause = require_as<std::string>(j, "signal");
    const json& stack = require(j, "call_stack");
    if (!stack.is_array()) throw SchemaError("call_stack", "call_stack must be an array");
    for (const auto& f : stack) {
        StackFrame frame;
        frame.function = require_as<std::string>(f, "function");
        frame.file = require_as<std::string>(f, "file");
        frame.line = require_as<int>(f, "line");
        r.call_stack.push_back(std::move(frame));
    }
    if (j.contains("variables")) {
        if (!j["variables"].is_array()) throw SchemaError("variables", "variables must be an array");
        for (const auto& v : j["variables"]) {
            VariableValue var;
            var.frame = require_as<int>(v, "frame");
            var.name = require_as<std::string>(v, "name");
            var.type = require_as<std::string>(v, "type");
            var.value = require_as<std::string>(v, "value");
            r.variable_state.push_back(std::move(var));
        }
    }
    if (j.contains("stdin") && !j["stdin"].is_null()) r.stdin_excerpt = j["stdin"].get<std::string>();
    return r;
}

ErrorEvent event_from_json(const json& j) {
    ErrorEvent e;
    e.event_id = require_as<std::string>(j, "event_id");
    e.phase = parse_phase(require_as<std::string>(j, "phase"));
    e.period = require_as<std::string>(j, "period");
    e.week = require_as<int>(j, "week");
    e.source_code = require_as<std::string>(j, "source_code");
    if (j.contains("captured_at")) e.captured_at = j["captured_at"].get<std::string>();
    if (j.contains("diagnostics"))
        for (const auto& d : j["diagnostics"]) e.diagnostics.push_back(diagnostic_from_json(d));
    if (j.contains("runtime") && !j["runtime"].is_null()) e.runtime = runtime_from_json(j["runtime"]);
    if (j.contains("baseline_response") && !j["baseline_response"].is_null())
        e.baseline_response = j["baseline_response"].get<std::string>();
    return e;
}

std::string render_diagnostics(const std::vector<Diagnostic>& diagnostics) {
    std::string out;
    for (const auto& d : diagnostics) {
        out += d.file + ":" + std::to_string(d.line) + ":" + std::to_string(d.column) + ": " +
               (d.severity == Severity::fatal ? "fatal error" : to_string(d.severity)) + ": " +
               d.message + "\n";
        if (d.snippet) {
            out += *d.snippet;
            if (!d.snippet->empty() && d.snippet->back() != '\n') out += '\n';
        }
    }
    return out;
}

std::string render_original_error(const ErrorEvent& event) {
    if (event.phase == Phase::compile || !event.runtime) return render_diagnostics(event.diagnostics);
    std::string out = "Runtime error: " + event.runtime->signal_or_cause + "\n";
    if (!event.runtime->call_stack.empty()) {
        const auto& top = event.runtime->call_stack.front();
        out += "Location: " + top.file + ":" + std::to_string(top.line) + " in " + top.function + "\n";
    }
    if (event.runtime->stdin_excerpt && !event.runtime->stdin_excerpt->empty())
        out += "Program input (stdin):\n" + *event.runtime->stdin_excerpt +
               (event.runtime->stdin_excerpt->back() == '\n' ? "" : "\n");
    if (!event.diagnostics.empty()) out += render_diagnostics(event.diagnostics);
    return out;
}

std::string render_call_stack(const RuntimeContext& runtime) {
    std::string out;
    for (std::size_t i = 0; i < runtime.call_stack.size(); ++i) {
        const auto& f = runtime.call_stack[i];
        out += "#" + std::to_string(i) + " " + f.function + " at " + f.file + ":" + std::to_string(f.line) + "\n";
    }
    return out;
}

std::string render_variables(const RuntimeContext& runtime) {
    std::string out;
    for (std::size_t i = 0; i < runtime.call_stack.size(); ++i) {
        bool header = false;
        for (const auto& v : runtime.variable_state) {
            if (v.frame != static_cast<int>(i)) continue;
            if (!header) {
                out += "#" + std::to_string(i) + " " + runtime.call_stack[i].function + ":\n";
                header = true;
            }
            out += "    " + v.type + " " + v.name + " = " + v.value + "\n";
        }
    }
    // variables naming a frame outside the stack still reach the model
    for (const auto& v : runtime.variable_state)
        if (v.frame < 0 || v.frame >= static_cast<int>(runtime.call_stack.size()))
            out += "    " + v.type + " " + v.name + " = " + v.value + "\n";
    return out;
}

std::string prompt_context_text(const ErrorEvent& event) {
    std::string out = event.source_code;
    out += '\n';
    out += render_original_error(event);
    if (event.phase == Phase::runtime && event.runtime) {
        out += render_variables(*event.runtime);
        out += render_call_stack(*event.runtime);
    }
    return out;
}

std::string utc_timestamp_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace errlab
