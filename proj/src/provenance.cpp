#include "errlab/provenance.hpp"

#include <algorithm>

#include "errlab/digest.hpp"
#include "errlab/jsonl.hpp"

namespace errlab {

void Provenance::add_input(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path))
            if (entry.is_regular_file() && entry.path().filename() != "provenance.json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) input_digests[f.string()] = sha256_file_hex(f);
        return;
    }
    input_digests[path.string()] = sha256_file_hex(path);
}

json to_json(const Provenance& p) {
    json j = {{"stage", p.stage}, {"tool_version", p.tool_version}};
    j["template_version"] = p.template_version.empty() ? json(nullptr) : json(p.template_version);
    j["seed"] = p.seed ? json(*p.seed) : json(nullptr);
    j["inputs"] = p.input_digests;
    j["argv"] = p.argv;
    return j;
}

std::filesystem::path provenance_path(const std::filesystem::path& output) {
    if (std::filesystem::is_directory(output)) return output / "provenance.json";
    auto p = output;
    p += ".provenance.json";
    return p;
}

void write_provenance(const std::filesystem::path& output, const Provenance& p) {
    write_file_atomic(provenance_path(output), to_json(p).dump(2) + "\n");
}

}  // namespace errlab
