#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace errlab {

using json = nlohmann::json;

enum class Phase { compile, runtime };
enum class Severity { error, warning, note, fatal };

const char* to_string(Phase phase);
const char* to_string(Severity severity);
Phase parse_phase(std::string_view text);
std::optional<Severity> parse_severity(std::string_view text);

struct Diagnostic {
    std::string file;
    int line = 1;
    int column = 1;
    Severity severity = Severity::error;
    std::string message;
    std::optional<std::string> snippet;

    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

struct StackFrame {
    std::string function;
    std::string file;
    int line = 1;

    friend bool operator==(const StackFrame&, const StackFrame&) = default;
};

struct VariableValue {
    int frame = 0;  // index into call_stack, 0 = innermost
    std::string name;
    std::string type;
    std::string value;

    friend bool operator==(const VariableValue&, const VariableValue&) = default;
};

struct RuntimeContext {
    std::string signal_or_cause;
    std::vector<StackFrame> call_stack;  // innermost first
    std::vector<VariableValue> variable_state;
    std::optional<std::string> stdin_excerpt;

    friend bool operator==(const RuntimeContext&, const RuntimeContext&) = default;
};

struct ErrorEvent {
    std::string event_id;
    Phase phase = Phase::compile;
    std::string source_code;
    std::vector<Diagnostic> diagnostics;
    std::optional<RuntimeContext> runtime;
    std::string period;
    int week = 1;
    std::string captured_at;  // ISO-8601 UTC
    std::optional<std::string> baseline_response;

    friend bool operator==(const ErrorEvent&, const ErrorEvent&) = default;
};

/// Teaching-session week bounds; events outside them fail validation.
struct WeekBounds {
    int first = 1;
    int last = 11;
};

/// Throws ValidationError when the phase/payload or week invariants are broken.
void validate(const ErrorEvent& event, WeekBounds bounds = {});

json to_json(const Diagnostic& d);
json to_json(const RuntimeContext& r);
json to_json(const ErrorEvent& e);
Diagnostic diagnostic_from_json(const json& j);
RuntimeContext runtime_from_json(const json& j);
ErrorEvent event_from_json(const json& j);

/// Text renderings embedded in prompts and measured by token counters.
std::string render_diagnostics(const std::vector<Diagnostic>& diagnostics);
std::string render_original_error(const ErrorEvent& event);
std::string render_call_stack(const RuntimeContext& runtime);
std::string render_variables(const RuntimeContext& runtime);

/// Concatenation of every piece of event context a prompt embeds.
std::string prompt_context_text(const ErrorEvent& event);

std::string utc_timestamp_now();

}  // namespace errlab
