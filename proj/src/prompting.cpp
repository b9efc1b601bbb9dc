#include "errlab/prompting.hpp"

#include <array>

#include "errlab/error.hpp"
#include "errlab/jsonl.hpp"

namespace errlab::prompting {

// generated from templates/*.tmpl
extern const char* const kExplainTemplateText;
extern const char* const kJudgeTemplateText;

const char* to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view text) {
    if (text == "system") return Role::system;
    if (text == "user") return Role::user;
    if (text == "assistant") return Role::assistant;
    throw SchemaError("role", "unknown role '" + std::string(text) + "'");
}

void validate(const PromptMessages& pm) {
    const auto& m = pm.messages;
    if (m.empty() || m.front().role != Role::system) throw ValidationError("first message must be system");
    for (std::size_t i = 1; i < m.size(); ++i) {
        Role expected = (i % 2 == 1) ? Role::user : Role::assistant;
        if (m[i].role != expected)
            throw ValidationError("message " + std::to_string(i) + " should be " + to_string(expected));
    }
}

json to_json(const PromptMessages& pm) {
    json arr = json::array();
    for (const auto& m : pm.messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return arr;
}

PromptMessages messages_from_json(const json& array) {
    if (!array.is_array()) throw SchemaError("messages", "messages must be an array");
    PromptMessages pm;
    for (const auto& m : array)
        pm.messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    return pm;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

std::string trim_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

std::string render_text(std::string_view text, const std::map<std::string, std::string>& values,
                        const std::map<std::string, bool>& flags) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t open = text.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, open - pos));
        std::size_t close = text.find("}}", open + 2);
        if (close == std::string_view::npos) throw ConfigError("unterminated {{ in template");
        std::string tag(text.substr(open + 2, close - open - 2));
        pos = close + 2;
        if (!tag.empty() && tag[0] == '#') {
            std::string flag = tag.substr(1);
            std::string end_tag = "{{/" + flag + "}}";
            std::size_t end = text.find(end_tag, pos);
            if (end == std::string_view::npos) throw ConfigError("template block {{#" + flag + "}} is not closed");
            auto it = flags.find(flag);
            if (it != flags.end() && it->second) out += render_text(text.substr(pos, end - pos), values, flags);
            pos = end + end_tag.size();
        } else {
            auto it = values.find(tag);
            if (it == values.end()) throw ConfigError("template references unknown value {{" + tag + "}}");
            out += it->second;
        }
    }
    return out;
}

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
    PromptTemplate t;
    std::size_t pos = 0;
    bool in_header = true;
    std::string current;
    std::string body;
    auto flush = [&] {
        if (!current.empty()) t.sections_[current] = trim_trailing_newlines(body);
        body.clear();
    };
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (in_header) {
            if (line == "---") {
                in_header = false;
                continue;
            }
            if (line.substr(0, 8) == "version:") {
                auto v = line.substr(8);
                while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
                t.version_ = std::string(v);
            }
            continue;
        }
        if (line.substr(0, 2) == "@@") {
            flush();
            current = std::string(line.substr(2));
            continue;
        }
        if (!current.empty()) {
            body.append(line);
            body += '\n';
        }
        if (nl == text.size()) break;
    }
    flush();
    if (t.version_.empty()) throw ConfigError("prompt template has no version: header");
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const PromptTemplate& PromptTemplate::default_explanation() {
    static const PromptTemplate t = parse(kExplainTemplateText);
    return t;
}

const PromptTemplate& PromptTemplate::default_judge() {
    static const PromptTemplate t = parse(kJudgeTemplateText);
    return t;
}

const std::string& PromptTemplate::section(std::string_view name) const {
    auto it = sections_.find(name);
    if (it == sections_.end())
        throw ConfigError("template " + version_ + " has no @@" + std::string(name) + " section");
    return it->second;
}

bool PromptTemplate::has_section(std::string_view name) const { return sections_.find(name) != sections_.end(); }

std::string PromptTemplate::render(std::string_view name, const std::map<std::string, std::string>& values,
                                   const std::map<std::string, bool>& flags) const {
    return render_text(section(name), values, flags);
}

// ---------------------------------------------------------------------------

PromptMessages build_explanation_prompt(const ErrorEvent& event, const PromptTemplate& tmpl) {
    const bool runtime = event.phase == Phase::runtime && event.runtime.has_value();
    std::map<std::string, std::string> values{
        {"source_code", trim_trailing_newlines(event.source_code)},
        {"original_error", trim_trailing_newlines(render_original_error(event))},
        {"variables_stack", runtime ? trim_trailing_newlines(render_variables(*event.runtime)) : ""},
        {"call_stack", runtime ? trim_trailing_newlines(render_call_stack(*event.runtime)) : ""},
    };
    if (runtime && values["variables_stack"].empty()) values["variables_stack"] = "(no variables recorded)";
    std::map<std::string, bool> flags{{"runtime", runtime}, {"compile", !runtime}};

    PromptMessages pm;
    pm.messages.push_back({Role::system, tmpl.render("system", values, flags)});
    pm.messages.push_back({Role::user, tmpl.render("user", values, flags)});
    return pm;
}

namespace {

constexpr std::array<std::string_view, 2> kStructureBlocks = {"output-structure", "format-details"};

}  // namespace

StripResult strip_structure_constraints(const PromptMessages& messages) {
    StripResult result{messages, false};
    bool any_marker = false;
    for (auto& m : result.messages.messages) {
        if (m.role != Role::user) continue;
        for (std::string_view block : kStructureBlocks) {
            const std::string begin = "<!-- begin:" + std::string(block) + " -->";
            const std::string end = "<!-- end:" + std::string(block) + " -->";
            const std::string stripped = "<!-- stripped:" + std::string(block) + " -->";
            if (m.content.find(stripped) != std::string::npos) any_marker = true;
            std::size_t b = m.content.find(begin);
            while (b != std::string::npos) {
                std::size_t e = m.content.find(end, b);
                if (e == std::string::npos) break;
                m.content.replace(b, e + end.size() - b, stripped);
                any_marker = true;
                b = m.content.find(begin, b + stripped.size());
            }
        }
    }
    result.warning = !any_marker;
    return result;
}

// ---------------------------------------------------------------------------

json to_json(const SftRecord& r) {
    return {{"messages", to_json(r.messages)},
            {"meta", {{"event_id", r.event_id}, {"phase", to_string(r.phase)}, {"template_version", r.template_version}}}};
}

SftRecord sft_record_from_json(const json& j) {
    SftRecord r;
    r.messages = messages_from_json(j.at("messages"));
    const json& meta = j.at("meta");
    r.event_id = meta.at("event_id").get<std::string>();
    r.phase = parse_phase(meta.at("phase").get<std::string>());
    r.template_version = meta.value("template_version", std::string());
    return r;
}

void validate(const TrainManifest& m) {
    if (m.epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(m.learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
}

json to_json(const TrainManifest& m) {
    return {{"epochs", m.epochs},
            {"learning_rate", m.learning_rate},
            {"adapter_method", m.adapter_method},
            {"quantization", m.quantization},
            {"base_model", m.base_model}};
}

SftExport export_sft(std::span<const std::pair<ErrorEvent, std::string>> pairs, const PromptTemplate& tmpl) {
    SftExport out;
    for (const auto& [event, response] : pairs) {
        if (response.find_first_not_of(" \t\r\n") == std::string::npos) {
            out.excluded_event_ids.push_back(event.event_id);
            continue;
        }
        SftRecord r;
        r.messages = build_explanation_prompt(event, tmpl);
        r.messages.messages.push_back({Role::assistant, response});
        r.event_id = event.event_id;
        r.phase = event.phase;
        r.template_version = tmpl.version();
        out.records.push_back(std::move(r));
    }
    return out;
}

}  // namespace errlab::prompting
