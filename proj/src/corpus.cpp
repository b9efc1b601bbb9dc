#include "errlab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

#include <omp.h>

#include "errlab/error.hpp"
#include "errlab/rng.hpp"

namespace errlab {

int parallel_threads() { return omp_get_max_threads(); }

}  // namespace errlab

namespace errlab::corpus {

std::size_t approx_token_count(std::string_view text) { return (text.size() + 3) / 4; }

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string regex_escape(std::string_view literal) {
    static const std::string special = R"(\^$.|?*+()[]{}/)";
    std::string out;
    for (char c : literal) {
        if (special.find(c) != std::string::npos) out += '\\';
        out += c;
    }
    return out;
}

}  // namespace

RedactionRuleSet::RedactionRuleSet(std::vector<RedactionRule> patterns, std::vector<std::string> name_dictionary)
    : patterns_(std::move(patterns)), names_(std::move(name_dictionary)) {
    for (const auto& rule : patterns_) {
        if (rule.replacement.find('$') != std::string::npos)
            throw ConfigError("redaction rule '" + rule.name + "' replacement must be a fixed placeholder");
        try {
            compiled_.emplace_back(rule.matcher, std::regex::ECMAScript | std::regex::optimize);
        } catch (const std::regex_error& e) {
            throw ConfigError("redaction rule '" + rule.name + "' does not compile: " + e.what());
        }
        replacements_.push_back(rule.replacement);
    }
    for (const auto& name : names_) {
        if (name.empty()) continue;
        std::string re = regex_escape(name);
        if (is_word_char(name.front())) re = "\\b" + re;
        if (is_word_char(name.back())) re += "\\b";
        compiled_.emplace_back(re, std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
        replacements_.emplace_back(kNamePlaceholder);
    }
}

RedactionRuleSet RedactionRuleSet::defaults(std::vector<std::string> name_dictionary) {
    return RedactionRuleSet(
        {
            {"email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)+)", "[REDACTED_EMAIL]"},
            {"student_id", R"(\bz[0-9]{7}\b)", "[REDACTED_ID]"},
        },
        std::move(name_dictionary));
}

RedactionRuleSet RedactionRuleSet::from_json(const json& doc) {
    std::vector<RedactionRule> patterns;
    if (doc.contains("patterns"))
        for (const auto& p : doc["patterns"])
            patterns.push_back({p.value("name", std::string("rule")), p.at("matcher").get<std::string>(),
                                p.at("replacement").get<std::string>()});
    std::vector<std::string> names;
    if (doc.contains("name_dictionary")) names = doc["name_dictionary"].get<std::vector<std::string>>();
    return RedactionRuleSet(std::move(patterns), std::move(names));
}

std::string RedactionRuleSet::apply(std::string text) const {
    for (std::size_t i = 0; i < compiled_.size(); ++i)
        text = std::regex_replace(text, compiled_[i], replacements_[i]);
    return text;
}

bool RedactionRuleSet::matches(std::string_view text) const {
    return std::any_of(compiled_.begin(), compiled_.end(), [&](const std::regex& re) {
        return std::regex_search(text.begin(), text.end(), re);
    });
}

ErrorEvent redact(const ErrorEvent& event, const RedactionRuleSet& rules) {
    ErrorEvent out = event;
    out.source_code = rules.apply(std::move(out.source_code));
    for (auto& d : out.diagnostics) {
        d.message = rules.apply(std::move(d.message));
        d.file = rules.apply(std::move(d.file));
        if (d.snippet) d.snippet = rules.apply(std::move(*d.snippet));
    }
    if (out.runtime) {
        out.runtime->signal_or_cause = rules.apply(std::move(out.runtime->signal_or_cause));
        for (auto& f : out.runtime->call_stack) f.file = rules.apply(std::move(f.file));
        for (auto& v : out.runtime->variable_state) v.value = rules.apply(std::move(v.value));
        if (out.runtime->stdin_excerpt) out.runtime->stdin_excerpt = rules.apply(std::move(*out.runtime->stdin_excerpt));
    }
    if (out.baseline_response) out.baseline_response = rules.apply(std::move(*out.baseline_response));
    return out;
}

std::vector<ErrorEvent> redact_all(std::span<const ErrorEvent> events, const RedactionRuleSet& rules, Exec exec) {
    std::vector<ErrorEvent> out(events.size());
    const auto n = static_cast<std::ptrdiff_t>(events.size());
    if (exec == Exec::serial) {
        for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = redact(events[i], rules);
        return out;
    }
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = redact(events[i], rules);
    return out;
}

std::vector<ErrorEvent> filter_oversized(std::span<const ErrorEvent> events, std::size_t token_cap,
                                         const TokenCounter& counter, Exec exec) {
    std::vector<std::size_t> measure(events.size());
    const auto n = static_cast<std::ptrdiff_t>(events.size());
    if (exec == Exec::serial) {
        for (std::ptrdiff_t i = 0; i < n; ++i) measure[i] = counter(prompt_context_text(events[i]));
    } else {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t i = 0; i < n; ++i) measure[i] = counter(prompt_context_text(events[i]));
    }
    std::vector<ErrorEvent> kept;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (measure[i] <= token_cap) kept.push_back(events[i]);
    return kept;
}

std::vector<ErrorEvent> filter_periods(std::span<const ErrorEvent> events, const std::set<std::string>& periods) {
    std::vector<ErrorEvent> kept;
    for (const auto& e : events)
        if (periods.count(e.period)) kept.push_back(e);
    return kept;
}

std::vector<ErrorEvent> stratified_sample(std::span<const ErrorEvent> events, const SamplingPlan& plan) {
    if (plan.cap_compile_per_week == 0 || plan.cap_runtime_per_week == 0 || plan.target_size == 0)
        throw SizingError("sampling caps and target must be positive");

    std::map<CellKey, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < events.size(); ++i)
        cells[{events[i].period, events[i].week, events[i].phase}].push_back(i);

    Rng rng(plan.seed);
    std::vector<std::size_t> pool;
    for (const auto& [key, members] : cells) {
        const std::size_t cap =
            std::get<2>(key) == Phase::compile ? plan.cap_compile_per_week : plan.cap_runtime_per_week;
        if (members.size() <= cap) {
            pool.insert(pool.end(), members.begin(), members.end());
            continue;
        }
        for (std::size_t k : rng.sample_indices(members.size(), cap)) pool.push_back(members[k]);
    }

    if (pool.size() < plan.target_size)
        throw SizingError("capped pool has " + std::to_string(pool.size()) + " events but target size is " +
                          std::to_string(plan.target_size));

    std::vector<ErrorEvent> out;
    out.reserve(plan.target_size);
    for (std::size_t k : rng.sample_indices(pool.size(), plan.target_size)) out.push_back(events[pool[k]]);
    return out;
}

CorpusStats corpus_stats(std::span<const ErrorEvent> events, const TokenCounter& counter) {
    CorpusStats s;
    s.n_total = events.size();
    std::size_t total_tokens = 0;
    s.token_min = std::numeric_limits<std::size_t>::max();
    for (const auto& e : events) {
        (e.phase == Phase::compile ? s.n_compile : s.n_runtime)++;
        std::size_t t = counter(prompt_context_text(e));
        s.token_min = std::min(s.token_min, t);
        s.token_max = std::max(s.token_max, t);
        total_tokens += t;
        s.per_week_counts[{e.period, e.week, e.phase}]++;
    }
    if (s.n_total == 0) {
        s.token_min = 0;
    } else {
        s.token_mean = static_cast<double>(total_tokens) / static_cast<double>(s.n_total);
    }
    std::size_t g = std::gcd(s.n_compile, s.n_runtime);
    if (g > 0) {
        s.ratio_compile = s.n_compile / g;
        s.ratio_runtime = s.n_runtime / g;
    }
    if (s.n_runtime > 0) s.ratio = static_cast<double>(s.n_compile) / static_cast<double>(s.n_runtime);
    return s;
}

namespace {

json round2(std::optional<double> v) {
    if (!v) return nullptr;
    return std::round(*v * 100.0) / 100.0;
}

}  // namespace

json to_json(const CorpusStats& s) {
    json j;
    j["n_total"] = s.n_total;
    j["n_compile"] = s.n_compile;
    j["n_runtime"] = s.n_runtime;
    j["compile_runtime_ratio"] = std::to_string(s.ratio_compile) + ":" + std::to_string(s.ratio_runtime);
    j["compile_runtime_ratio_real"] = round2(s.ratio);
    j["tokens"] = {{"min", s.token_min}, {"max", s.token_max}, {"mean", round2(s.token_mean)},
                   {"mean_defined", s.token_mean.has_value()}};
    j["per_week_counts"] = json::array();
    for (const auto& [key, count] : s.per_week_counts)
        j["per_week_counts"].push_back({{"period", std::get<0>(key)},
                                        {"week", std::get<1>(key)},
                                        {"phase", to_string(std::get<2>(key))},
                                        {"count", count}});
    return j;
}

}  // namespace errlab::corpus
