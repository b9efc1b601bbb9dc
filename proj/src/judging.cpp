#include "errlab/judging.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <mutex>
#include <set>
#include <tuple>

#include "errlab/error.hpp"
#include "errlab/jsonl.hpp"

namespace errlab::judging {

using prompting::Role;

const std::array<Criterion, kCriteria>& rubric() {
    static const std::array<Criterion, kCriteria> r{{
        {"correctness", "The explanation is technically correct."},
        {"selectivity", "Contains no incorrect/irrelevant information."},
        {"completeness", "Contains all information critical to understand the error."},
        {"clarity", "Clear, easy to understand, presented in a readable format, using an economy of words."},
        {"novice_appropriate", "Accessible for novices, avoiding technical jargon and advanced knowledge assumptions."},
        {"no_solution", "Does not directly provide the full solution, either in code or prose."},
        {"no_overhelp", "Avoids over-direction, leaving room for problem solving and critical thinking."},
        {"socratic",
         "Provides guidance to solve the error, and includes at least one relevant guiding question or statement."},
    }};
    return r;
}

std::optional<std::size_t> criterion_index(std::string_view key) {
    const auto& r = rubric();
    for (std::size_t i = 0; i < r.size(); ++i)
        if (r[i].key == key) return i;
    return std::nullopt;
}

std::uint8_t RubricScores::at(std::string_view key) const {
    auto i = criterion_index(key);
    if (!i) throw SchemaError("scores", "unknown criterion '" + std::string(key) + "'");
    return values[*i];
}

bool RubricScores::all() const {
    return std::all_of(values.begin(), values.end(), [](std::uint8_t v) { return v == 1; });
}

RubricScores RubricScores::ones() {
    RubricScores s;
    s.values.fill(1);
    return s;
}

json to_json(const RubricScores& s) {
    json j = json::object();
    const auto& r = rubric();
    for (std::size_t i = 0; i < kCriteria; ++i) j[std::string(r[i].key)] = static_cast<int>(s.values[i]);
    return j;
}

RubricScores scores_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("scores", "rubric scores must be an object");
    RubricScores s;
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < kCriteria; ++i) {
        std::string key(rubric()[i].key);
        if (!j.contains(key)) {
            missing.push_back(key);
            continue;
        }
        const json& v = j[key];
        if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
            throw SchemaError("scores." + key, "criterion '" + key + "' must be 0 or 1");
        s.values[i] = static_cast<std::uint8_t>(v.get<int>());
    }
    if (!missing.empty()) {
        std::string msg = "missing criteria:";
        for (const auto& m : missing) msg += " " + m;
        throw SchemaError("scores", msg);
    }
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!criterion_index(it.key())) throw SchemaError("scores", "unknown criterion '" + it.key() + "'");
    return s;
}

// ---------------------------------------------------------------------------
// Verdict parsing

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Drops markdown decoration: list bullets, emphasis, inline code, quotes.
std::string normalize_line(std::string_view line) {
    line = trim(line);
    while (!line.empty() && (line.front() == '*' || line.front() == '-' || line.front() == '>' ||
                             line.front() == '#' || line.front() == '`' || line.front() == '_' ||
                             std::isspace(static_cast<unsigned char>(line.front()))))
        line.remove_prefix(1);
    std::string out;
    for (char c : line)
        if (c != '*' && c != '`') out += c;
    return std::string(trim(out));
}

bool is_fence(std::string_view line) { return trim(line).substr(0, 3) == "```"; }

bool is_verdict_header(const std::string& norm) {
    if (norm.size() < 7) return false;
    std::string lower;
    for (char c : norm) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return lower == "verdict:" || lower == "verdict :" || lower == "verdict";
}

struct KeyValue {
    std::string key;
    std::string value;
};

std::optional<KeyValue> split_key_value(const std::string& norm) {
    auto colon = norm.find(':');
    if (colon == std::string::npos || colon == 0) return std::nullopt;
    std::string key(trim(std::string_view(norm).substr(0, colon)));
    for (char& c : key) {
        if (c == ' ' || c == '-') c = '_';
        else if (std::isalpha(static_cast<unsigned char>(c))) c = static_cast<char>(std::tolower(c));
        else if (c != '_') return std::nullopt;
    }
    return KeyValue{key, std::string(trim(std::string_view(norm).substr(colon + 1)))};
}

VerdictParse check_block(const std::vector<KeyValue>& entries) {
    VerdictParse out;
    RubricScores scores;
    std::array<bool, kCriteria> seen{};
    for (const auto& e : entries) {
        auto i = criterion_index(e.key);
        if (!i) {
            out.defect = "unknown: " + e.key;
            return out;
        }
        if (seen[*i]) {
            out.defect = "duplicate: " + e.key;
            return out;
        }
        if (e.value != "0" && e.value != "1") {
            out.defect = "non-binary: " + e.key;
            return out;
        }
        seen[*i] = true;
        scores.values[*i] = e.value == "1" ? 1 : 0;
    }
    for (std::size_t i = 0; i < kCriteria; ++i)
        if (!seen[i]) {
            out.defect = "missing: " + std::string(rubric()[i].key);
            return out;
        }
    out.scores = scores;
    return out;
}

}  // namespace

VerdictParse parse_judge_verdict(std::string_view raw) {
    std::vector<std::string_view> lines;
    for (std::size_t pos = 0; pos <= raw.size();) {
        std::size_t nl = raw.find('\n', pos);
        if (nl == std::string_view::npos) nl = raw.size();
        lines.push_back(raw.substr(pos, nl - pos));
        pos = nl + 1;
    }

    std::optional<VerdictParse> last_good;
    std::optional<VerdictParse> last_any;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (!is_verdict_header(normalize_line(lines[i]))) continue;
        std::vector<KeyValue> entries;
        for (std::size_t k = i + 1; k < lines.size(); ++k) {
            if (trim(lines[k]).empty() || (is_fence(lines[k]) && entries.empty())) continue;
            auto kv = split_key_value(normalize_line(lines[k]));
            if (!kv) break;
            entries.push_back(std::move(*kv));
        }
        VerdictParse p = entries.empty() ? VerdictParse{std::nullopt, "empty verdict block"} : check_block(entries);
        if (p.scores) last_good = p;
        last_any = std::move(p);
    }
    if (last_good) return *last_good;
    if (last_any) return *last_any;
    return {std::nullopt, "no verdict block"};
}

// ---------------------------------------------------------------------------
// Two-turn plan

std::string render_rubric() {
    std::string out;
    for (const auto& c : rubric()) {
        out += "- ";
        out += c.key;
        out += ": ";
        out += c.description;
        out += '\n';
    }
    out.pop_back();
    return out;
}

JudgePlan build_judge_turns(const ErrorEvent& event, std::string_view candidate_response,
                            const prompting::PromptTemplate& explain, const prompting::PromptTemplate& judge) {
    if (trim(candidate_response).empty())
        throw ValidationError("candidate response for " + event.event_id + " is empty");
    JudgePlan plan;
    plan.turn1 = prompting::build_explanation_prompt(event, explain);
    auto stripped = prompting::strip_structure_constraints(plan.turn1);
    plan.history = std::move(stripped.messages);
    plan.strip_warning = stripped.warning;
    std::string candidate(candidate_response);
    while (!candidate.empty() && (candidate.back() == '\n' || candidate.back() == '\r')) candidate.pop_back();
    plan.turn2_user = judge.render("user", {{"candidate_response", candidate}, {"rubric", render_rubric()}}, {});
    plan.template_version = judge.version();
    return plan;
}

PromptMessages turn2_messages(const JudgePlan& plan, std::string_view judge_explanation) {
    PromptMessages out = plan.history;
    out.messages.push_back({Role::assistant, std::string(judge_explanation)});
    out.messages.push_back({Role::user, plan.turn2_user});
    return out;
}

// ---------------------------------------------------------------------------
// Records

json to_json(const JudgeVerdict& v) {
    json j = {{"event_id", v.event_id},
              {"endpoint_id", v.endpoint_id},
              {"judge_id", v.judge_id},
              {"parse_ok", v.parse_ok()},
              {"scores", v.scores ? to_json(*v.scores) : json(nullptr)}};
    if (!v.defect.empty()) j["defect"] = v.defect;
    j["raw_judge_text"] = v.raw_judge_text;
    j["reference_explanation"] = v.reference_explanation;
    return j;
}

JudgeVerdict verdict_from_json(const json& j) {
    JudgeVerdict v;
    v.event_id = j.at("event_id").get<std::string>();
    v.endpoint_id = j.at("endpoint_id").get<std::string>();
    v.judge_id = j.at("judge_id").get<std::string>();
    if (j.value("parse_ok", false)) v.scores = scores_from_json(j.at("scores"));
    v.defect = j.value("defect", std::string());
    v.raw_judge_text = j.value("raw_judge_text", std::string());
    v.reference_explanation = j.value("reference_explanation", std::string());
    return v;
}

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path) {
    std::vector<JudgeVerdict> out;
    for (const auto& row : read_jsonl(path)) out.push_back(verdict_from_json(row));
    return out;
}

json to_json(const EnsembleResult& e) {
    json j = {{"event_id", e.event_id}, {"endpoint_id", e.endpoint_id}};
    j["phase"] = e.phase ? json(to_string(*e.phase)) : json(nullptr);
    j["scores"] = to_json(e.scores);
    j["contributing"] = e.contributing;
    j["judges"] = e.judges;
    j["degraded"] = e.degraded();
    return j;
}

EnsembleResult ensemble_from_json(const json& j) {
    EnsembleResult e;
    e.event_id = j.at("event_id").get<std::string>();
    e.endpoint_id = j.at("endpoint_id").get<std::string>();
    if (j.contains("phase") && j["phase"].is_string()) e.phase = parse_phase(j["phase"].get<std::string>());
    e.scores = scores_from_json(j.at("scores"));
    e.contributing = j.value("contributing", 0);
    e.judges = j.value("judges", e.contributing);
    return e;
}

std::vector<EnsembleResult> read_ensembles(const std::filesystem::path& path) {
    std::vector<EnsembleResult> out;
    for (const auto& row : read_jsonl(path)) out.push_back(ensemble_from_json(row));
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

EnsembleResult ensemble_unanimity(std::span<const JudgeVerdict> verdicts, bool strict, Aggregation rule) {
    if (verdicts.empty()) throw AggregationError("no verdicts to aggregate");
    EnsembleResult out;
    out.event_id = verdicts.front().event_id;
    out.endpoint_id = verdicts.front().endpoint_id;
    out.judges = static_cast<int>(verdicts.size());
    std::array<int, kCriteria> ones{};
    for (const auto& v : verdicts) {
        if (v.event_id != out.event_id || v.endpoint_id != out.endpoint_id)
            throw AggregationError("verdicts for different responses cannot be aggregated together");
        if (!v.parse_ok()) {
            if (strict)
                throw AggregationError("judge '" + v.judge_id + "' verdict for " + v.event_id + "/" + v.endpoint_id +
                                       " did not parse (" + v.defect + ")");
            continue;
        }
        ++out.contributing;
        for (std::size_t i = 0; i < kCriteria; ++i) ones[i] += v.scores->values[i];
    }
    if (out.contributing == 0)
        throw AggregationError("no parseable verdict for " + out.event_id + "/" + out.endpoint_id);
    for (std::size_t i = 0; i < kCriteria; ++i) {
        bool pass = rule == Aggregation::unanimity ? ones[i] == out.contributing : 2 * ones[i] > out.contributing;
        out.scores.values[i] = pass ? 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch judging

namespace {

using Key3 = std::tuple<std::string, std::string, std::string>;

inference::ModelEndpoint judging_endpoint(const inference::ModelEndpoint& ep) {
    inference::ModelEndpoint out = ep;
    out.params.temperature = 0.0;
    out.params.reasoning_enabled = false;
    return out;
}

}  // namespace

JudgeSummary run_judging(std::span<const ErrorEvent> events, std::span<const inference::GenerationRecord> responses,
                         std::span<const inference::ModelEndpoint> judges, const inference::BackendSet& backends,
                         const JudgeOptions& options) {
    if (judges.empty()) throw ConfigError("no judges configured");
    if (options.parallelism < 1) throw ConfigError("parallelism must be >= 1");

    std::map<std::string, const ErrorEvent*> by_id;
    for (const auto& e : events) by_id[e.event_id] = &e;
    for (const auto& r : responses)
        if (!by_id.count(r.event_id))
            throw ConfigError("response for unknown event '" + r.event_id + "' (pass the events it was generated from)");

    const auto verdicts_path = options.out_dir / "verdicts.jsonl";
    const auto ensemble_path = options.out_dir / "ensemble.jsonl";
    const auto failures_path = options.out_dir / "failures.jsonl";

    std::set<Key3> committed;
    for (const auto& row : read_jsonl(verdicts_path))
        committed.emplace(row.at("event_id").get<std::string>(), row.at("endpoint_id").get<std::string>(),
                          row.at("judge_id").get<std::string>());

    struct Task {
        const inference::GenerationRecord* response;
        inference::ModelEndpoint judge;
    };
    JudgeSummary summary;
    std::vector<Task> pending;
    for (const auto& r : responses)
        for (const auto& j : judges) {
            ++summary.planned;
            if (committed.count({r.event_id, r.endpoint_id, j.endpoint_id})) ++summary.skipped;
            else pending.push_back({&r, judging_endpoint(j)});
        }
    if (options.dry_run) return summary;

    std::filesystem::create_directories(options.out_dir);
    std::filesystem::remove(failures_path);
    JournalWriter journal(verdicts_path);
    std::mutex ledger_mu;
    std::unique_ptr<JournalWriter> ledger;
    auto record_failure = [&](inference::FailureRecord f) {
        std::lock_guard lock(ledger_mu);
        if (!ledger) ledger = std::make_unique<JournalWriter>(failures_path);
        ledger->append(inference::to_json(f));
    };

    const auto& explain_tmpl =
        options.explain_template ? *options.explain_template : prompting::PromptTemplate::default_explanation();
    const auto& judge_tmpl =
        options.judge_template ? *options.judge_template : prompting::PromptTemplate::default_judge();

    std::atomic<std::size_t> completed{0}, parse_failures{0}, failed{0}, calls{0};
    inference::run_bounded(pending.size(), options.parallelism, [&](std::size_t i) {
        const Task& t = pending[i];
        const auto& r = *t.response;
        const ErrorEvent& event = *by_id.at(r.event_id);
        try {
            JudgePlan plan = build_judge_turns(event, r.response_text, explain_tmpl, judge_tmpl);
            inference::CountingBackend backend(backends.for_endpoint(t.judge), calls);

            inference::ChatRequest first{t.judge, plan.turn1, &event, r.endpoint_id};
            auto reference = inference::complete(backend, first, options.retry);

            PromptMessages second_msgs = turn2_messages(plan, reference.text);
            inference::ChatRequest second{t.judge, second_msgs, &event, r.endpoint_id};
            auto graded = inference::complete(backend, second, options.retry);

            VerdictParse parsed = parse_judge_verdict(graded.text);
            JudgeVerdict v{r.event_id,    r.endpoint_id, t.judge.endpoint_id,     parsed.scores,
                           graded.text,   parsed.defect, std::move(reference.text)};
            if (!v.parse_ok()) ++parse_failures;
            journal.append(to_json(v));
            ++completed;
        } catch (const Error& e) {
            ++failed;
            inference::FailureRecord f{r.event_id, t.judge.endpoint_id, r.endpoint_id, to_string(e.kind()), 0,
                                       e.what()};
            if (auto* te = dynamic_cast<const TransportError*>(&e)) f.status = te->status();
            record_failure(std::move(f));
        }
    });
    summary.completed = completed;
    summary.parse_failures = parse_failures;
    summary.failed = failed;
    summary.calls = calls;

    // Canonical order makes the journal byte-identical across runs.
    auto verdicts = read_verdicts(verdicts_path);
    std::stable_sort(verdicts.begin(), verdicts.end(), [](const JudgeVerdict& a, const JudgeVerdict& b) {
        return std::tie(a.event_id, a.endpoint_id, a.judge_id) < std::tie(b.event_id, b.endpoint_id, b.judge_id);
    });
    {
        std::vector<json> rows;
        rows.reserve(verdicts.size());
        for (const auto& v : verdicts) rows.push_back(to_json(v));
        write_jsonl(verdicts_path, rows);
    }

    std::set<std::string> judge_ids;
    for (const auto& j : judges) judge_ids.insert(j.endpoint_id);
    std::set<std::pair<std::string, std::string>> wanted;
    for (const auto& r : responses) wanted.emplace(r.event_id, r.endpoint_id);

    std::map<std::pair<std::string, std::string>, std::vector<JudgeVerdict>> groups;
    for (auto& v : verdicts)
        if (judge_ids.count(v.judge_id) && wanted.count({v.event_id, v.endpoint_id}))
            groups[{v.event_id, v.endpoint_id}].push_back(std::move(v));

    std::vector<json> ensemble_rows;
    for (const auto& key : wanted) {
        auto it = groups.find(key);
        if (it == groups.end() || it->second.size() < judge_ids.size()) {
            ++summary.incomplete;
            continue;
        }
        try {
            EnsembleResult e = ensemble_unanimity(it->second, options.strict, options.rule);
            e.phase = by_id.at(key.first)->phase;
            if (e.degraded()) ++summary.degraded;
            ensemble_rows.push_back(to_json(e));
        } catch (const AggregationError& err) {
            record_failure({key.first, "", key.second, to_string(err.kind()), 0, err.what()});
        }
    }
    write_jsonl(ensemble_path, ensemble_rows);
    summary.ensembles = ensemble_rows.size();
    return summary;
}

}  // namespace errlab::judging
