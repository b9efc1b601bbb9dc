#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errlab/types.hpp"

namespace errlab::prompting {

enum class Role { system, user, assistant };

const char* to_string(Role role);
Role parse_role(std::string_view text);

struct Message {
    Role role;
    std::string content;

    friend bool operator==(const Message&, const Message&) = default;
};

/// Ordered chat transcript. The first message is system; user and assistant
/// alternate after it.
struct PromptMessages {
    std::vector<Message> messages;

    friend bool operator==(const PromptMessages&, const PromptMessages&) = default;
};

/// Throws ValidationError if the role ordering invariant is broken.
void validate(const PromptMessages& messages);

json to_json(const PromptMessages& messages);
PromptMessages messages_from_json(const json& array);

/// A versioned prompt template file.
///
/// File layout: `key: value` header lines (at least `version:`), a `---`
/// line, then `@@system` / `@@user` sections. Inside a section,
/// `{{name}}` substitutes a value and `{{#flag}}...{{/flag}}` keeps its body
/// only when the flag is set. Substituted values are never re-scanned.
class PromptTemplate {
public:
    static PromptTemplate parse(std::string_view text);
    static PromptTemplate load(const std::filesystem::path& path);

    /// The shipped explanation and judge templates.
    static const PromptTemplate& default_explanation();
    static const PromptTemplate& default_judge();

    const std::string& version() const { return version_; }
    const std::string& section(std::string_view name) const;
    bool has_section(std::string_view name) const;

    std::string render(std::string_view section, const std::map<std::string, std::string>& values,
                       const std::map<std::string, bool>& flags) const;

private:
    std::string version_;
    std::map<std::string, std::string, std::less<>> sections_;
};

/// Builds the generation prompt for one event: system role, then the source,
/// original error and (runtime only) variable and call stacks, followed by
/// the three-step output instruction and detail constraints. Byte-for-byte
/// deterministic for a given event and template.
PromptMessages build_explanation_prompt(const ErrorEvent& event,
                                        const PromptTemplate& tmpl = PromptTemplate::default_explanation());

struct StripResult {
    PromptMessages messages;
    bool warning = false;  // no structure markers were found
};

/// Removes the output-structure and formatting-detail blocks (delimited by
/// template markers) from every user message. Idempotent: a stripped prompt
/// keeps a `<!-- stripped:... -->` sentinel and is returned unchanged. A
/// prompt with neither markers nor sentinels is returned unchanged with
/// warning set.
StripResult strip_structure_constraints(const PromptMessages& messages);

struct SftRecord {
    PromptMessages messages;  // ends with one non-empty assistant message
    std::string event_id;
    Phase phase = Phase::compile;
    std::string template_version;

    friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

json to_json(const SftRecord& record);
SftRecord sft_record_from_json(const json& j);

struct TrainManifest {
    int epochs = 1;
    double learning_rate = 2e-5;
    std::string adapter_method = "qlora";
    std::string quantization = "4-bit";
    std::string base_model = "Qwen/Qwen3-4B";
};

void validate(const TrainManifest& manifest);
json to_json(const TrainManifest& manifest);

struct SftExport {
    std::vector<SftRecord> records;
    std::vector<std::string> excluded_event_ids;  // empty responses
};

/// One record per (event, response) pair with a non-empty response.
SftExport export_sft(std::span<const std::pair<ErrorEvent, std::string>> pairs,
                     const PromptTemplate& tmpl = PromptTemplate::default_explanation());

}  // namespace errlab::prompting
