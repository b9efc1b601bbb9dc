#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errlab/types.hpp"

namespace errlab {

inline constexpr const char* kToolVersion = "0.1.0";

/// Sidecar manifest written next to every stage output.
struct Provenance {
    std::string stage;
    std::string tool_version = kToolVersion;
    std::string template_version;
    std::optional<std::uint64_t> seed;
    std::map<std::string, std::string> input_digests;  // path -> sha256
    std::vector<std::string> argv;

    /// Records the SHA-256 of a file (or of every regular file in a directory).
    void add_input(const std::filesystem::path& path);
};

json to_json(const Provenance& p);

/// `<out>.provenance.json` for a file, `<out>/provenance.json` for a directory.
std::filesystem::path provenance_path(const std::filesystem::path& output);
void write_provenance(const std::filesystem::path& output, const Provenance& p);

}  // namespace errlab
