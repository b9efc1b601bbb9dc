#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "errlab/types.hpp"

namespace errlab::capture {

struct ParseOptions {
    /// Decides the severity of a location line whose severity word is not
    /// recognised: error when the compiler failed, note otherwise.
    bool nonzero_exit = true;
};

/// Parses GNU/Clang `file:line:col: severity: message` diagnostics.
///
/// One Diagnostic per error/warning/fatal line, in input order. Source and
/// caret lines become the preceding Diagnostic's snippet. `note:` lines are
/// continuations: their text is appended to the preceding Diagnostic's
/// message (a note with nothing before it stands alone). Other lines are
/// appended to the preceding message, or dropped when there is none.
/// Never throws.
std::vector<Diagnostic> parse_compiler_diagnostics(std::string_view raw_stderr,
                                                   ParseOptions options = {});

/// Metadata stamped onto every captured event.
struct EventMeta {
    std::string period = "unspecified";
    int week = 1;
    std::optional<std::string> baseline_response;
};

struct CompileOptions {
    std::chrono::milliseconds timeout{30'000};
    std::size_t max_stderr_bytes = 256 * 1024;
    /// Substituted for `{out}` in the template; a temp path when empty.
    std::filesystem::path output_binary;
};

struct CompileResult {
    int exit_status = 0;
    std::vector<ErrorEvent> events;
    std::filesystem::path binary;  // where `{out}` pointed, if present
};

/// Template placeholders: `{src}` (required) and `{out}` (optional).
/// Throws ConfigError for a template without `{src}` or a missing
/// executable, CaptureError on timeout (partial stderr retained).
CompileResult run_compile(const std::string& compiler_template, const std::filesystem::path& source_path,
                          const EventMeta& meta = {}, const CompileOptions& options = {});

/// Environment variable naming the file an instrumented binary writes its
/// runtime report to.
inline constexpr const char* kRuntimeReportEnv = "ERRLAB_RUNTIME_REPORT";

struct RunOptions {
    std::chrono::milliseconds timeout{30'000};
    std::optional<std::string> stdin_data;
    std::filesystem::path report_path;  // temp path when empty
};

/// Runs a compiled program. Returns a runtime event when the program left a
/// runtime report behind; nullopt when it exited without one. A signal death
/// with no report is a CaptureError (no debugger introspection is done).
std::optional<ErrorEvent> run_program(const std::filesystem::path& binary,
                                      const std::filesystem::path& source_path, const EventMeta& meta = {},
                                      const RunOptions& options = {});

/// Maps a runtime-report document (see README) onto an event. Missing
/// `signal` or `call_stack` raises SchemaError naming the field; unknown
/// fields are ignored.
ErrorEvent ingest_runtime_report(const json& doc, const std::string& source_code, const EventMeta& meta = {});

/// Inverse of the runtime half of ingest_runtime_report.
json serialize_runtime_report(const RuntimeContext& runtime);

/// Content-derived opaque id.
std::string make_event_id(const ErrorEvent& event);

}  // namespace errlab::capture
