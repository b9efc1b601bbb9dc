#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "errlab/types.hpp"

namespace errlab {

std::string read_file(const std::filesystem::path& path);

/// Writes to `path.tmp` then renames, so readers never see a half file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Missing file reads as empty. Blank lines are skipped; a malformed line
/// raises SchemaError naming the line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

/// Lines are written with compact dump(), one object per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

std::vector<ErrorEvent> read_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, const std::vector<ErrorEvent>& events);

/// Append-only line writer. Each append is flushed before returning; calls
/// are serialized internally.
class JournalWriter {
public:
    explicit JournalWriter(const std::filesystem::path& path);

    void append(const json& row);

private:
    std::mutex mu_;
    std::ofstream out_;
};

}  // namespace errlab
