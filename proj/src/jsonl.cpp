#include "errlab/jsonl.hpp"

#include <sstream>

#include "errlab/error.hpp"

namespace errlab {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw ConfigError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::vector<json> rows;
    std::ifstream in(path, std::ios::binary);
    if (!in) return rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            // a torn final line from an interrupted append is dropped
            if (in.peek() == std::char_traits<char>::eof()) break;
            throw SchemaError("line " + std::to_string(lineno),
                              path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += r.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<ErrorEvent> read_events(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("events file not found: " + path.string());
    std::vector<ErrorEvent> events;
    for (const auto& row : read_jsonl(path)) events.push_back(event_from_json(row));
    return events;
}

void write_events(const std::filesystem::path& path, const std::vector<ErrorEvent>& events) {
    std::vector<json> rows;
    rows.reserve(events.size());
    for (const auto& e : events) rows.push_back(to_json(e));
    write_jsonl(path, rows);
}

JournalWriter::JournalWriter(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // drop a torn tail so the next append starts on a fresh line
    if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
        std::string text = read_file(path);
        if (text.back() != '\n') {
            auto keep = text.rfind('\n');
            std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
        }
    }
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw ConfigError("cannot open journal " + path.string());
}

void JournalWriter::append(const json& row) {
    std::lock_guard lock(mu_);
    out_ << row.dump() << '\n';
    out_.flush();
}

}  // namespace errlab
