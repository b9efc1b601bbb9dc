#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace errlab {

struct ProcessOptions {
    std::chrono::milliseconds timeout{30'000};
    std::optional<std::string> stdin_data;
    std::size_t max_capture_bytes = 256 * 1024;
    std::vector<std::pair<std::string, std::string>> extra_env;
};

struct ProcessResult {
    int exit_status = 0;  // valid when !signaled
    bool signaled = false;
    int signal = 0;
    bool timed_out = false;
    std::string stdout_data;
    std::string stderr_data;
    bool stderr_truncated = false;
};

/// Spawns argv[0] (PATH lookup, no shell) and collects both streams.
/// Throws ConfigError if the executable cannot be found or executed.
ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options = {});

/// "SIGSEGV" style name for a signal number.
std::string signal_name(int signal);

/// Shell-like word splitting (single/double quotes, backslash escapes).
std::vector<std::string> split_command_line(const std::string& command);

}  // namespace errlab
