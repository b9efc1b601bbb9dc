// Acceptance suite: one PASS/FAIL line per primary criterion. Tolerances and
// time budgets are fixed here; exit status is non-zero if any line fails.

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <thread>

#include "errlab/analysis.hpp"
#include "errlab/annotation.hpp"
#include "errlab/corpus.hpp"
#include "errlab/error.hpp"
#include "errlab/inference.hpp"
#include "errlab/judging.hpp"
#include "errlab/jsonl.hpp"
#include "errlab/prompting.hpp"
#include "recount.hpp"
#include "test_support.hpp"

using namespace errlab;
using errlab::testing::TempDir;

namespace {

constexpr double kAc1Tolerance = 1e-9;
constexpr double kHandExample = 0.52941;
constexpr double kHandTolerance = 1e-5;
constexpr double kFirstPlaceTolerance = 1e-12;
constexpr double kStatsBudgetS = 10;
constexpr double kRankBudgetS = 30;
constexpr double kSamplingBudgetS = 20;
constexpr double kPipelineBudgetS = 120;
constexpr std::uint64_t kSeed = 20250101;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const std::vector<std::string> kEndpoints = {"dcc-help",   "gpt-4.1",      "gpt-4.1-mini", "qwen3-4b",
                                             "qwen3-4b-sft", "qwen3-8b", "qwen3-8b-sft", "qwen3-32b"};
const std::vector<std::string> kAnnotators = {"ann-1", "ann-2", "ann-3", "ann-4"};

// ---------------------------------------------------------------------------

Outcome statistics_oracle() {
    const auto t0 = Clock::now();
    Rng rng(kSeed);
    double worst = 0;
    for (int i = 0; i < 500; ++i) {
        auto m = testing::random_matrix(rng);
        worst = std::max(worst, std::abs(analysis::gwet_ac1(m).ac1 - testing::brute_force_ac1(m)));
    }
    analysis::RatingsMatrix hand;
    const int pairs[4][2] = {{1, 1}, {1, 0}, {0, 0}, {1, 1}};
    for (int i = 0; i < 4; ++i) {
        hand.add("i" + std::to_string(i), "a", pairs[i][0]);
        hand.add("i" + std::to_string(i), "b", pairs[i][1]);
    }
    const double ac1 = analysis::gwet_ac1(hand).ac1;
    const double s = seconds_since(t0);
    return {worst <= kAc1Tolerance && std::abs(ac1 - kHandExample) <= kHandTolerance && s < kStatsBudgetS,
            fmt("max |AC1 - brute force| = %.2e over 500 matrices; hand example %.5f; %.2f s", worst, ac1, s)};
}

Outcome win_rank() {
    const auto t0 = Clock::now();
    Rng rng(kSeed + 1);
    std::vector<analysis::RankingRecord> recs;
    for (int i = 0; i < 1000; ++i) {
        analysis::RankingRecord r{"ex" + std::to_string(i), "ann", rng.uniform_below(2) ? Phase::compile : Phase::runtime,
                                  {}};
        auto ranks = testing::random_ranks(rng, kEndpoints.size());
        for (std::size_t e = 0; e < kEndpoints.size(); ++e) r.rank[kEndpoints[e]] = ranks[e];
        recs.push_back(std::move(r));
    }
    std::size_t bad_pairs = 0, checked_pairs = 0;
    for (auto phase : {std::optional<Phase>{}, std::optional<Phase>(Phase::compile), std::optional<Phase>(Phase::runtime)}) {
        auto w = analysis::win_rate_matrix(recs, phase);
        for (std::size_t a = 0; a < w.endpoints.size(); ++a)
            for (std::size_t b = 0; b < w.endpoints.size(); ++b) {
                if (a == b) continue;
                ++checked_pairs;
                if (!w.rate[a][b] || !w.rate[b][a] || *w.rate[a][b] + *w.rate[b][a] != 1.0) ++bad_pairs;
            }
    }
    auto rows = analysis::rank_summary(recs, kSeed, analysis::kDefaultBootstrap);
    auto again = analysis::rank_summary(recs, kSeed, analysis::kDefaultBootstrap);
    double first = 0;
    bool means_ok = true, reproducible = rows.size() == again.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        first += rows[i].first_place;
        means_ok = means_ok && rows[i].mean_rank >= 1.0 && rows[i].mean_rank <= 8.0;
        reproducible = reproducible && rows[i].endpoint_id == again[i].endpoint_id &&
                       rows[i].ci_low == again[i].ci_low && rows[i].ci_high == again[i].ci_high &&
                       rows[i].mean_rank == again[i].mean_rank;
    }
    const double s = seconds_since(t0);
    return {bad_pairs == 0 && means_ok && std::abs(first - 1.0) <= kFirstPlaceTolerance && reproducible &&
                s < kRankBudgetS,
            fmt("%zu/%zu pairs with W[a][b]+W[b][a] != 1; means in [1,8]: %s; sum of first-place rates %.15f; "
                "bootstrap CI reproducible: %s; %.2f s",
                bad_pairs, checked_pairs, means_ok ? "yes" : "no", first, reproducible ? "yes" : "no", s)};
}

Outcome unanimity() {
    using judging::JudgeVerdict;
    using judging::RubricScores;
    std::size_t cases = 0, mismatches = 0;
    auto check = [&](const std::array<RubricScores, 3>& s, unsigned fail_mask) {
        std::vector<JudgeVerdict> v;
        for (int j = 0; j < 3; ++j) {
            JudgeVerdict x{"ev", "cand", std::string(1, static_cast<char>('a' + j)), std::nullopt, "", "", ""};
            if ((fail_mask >> j) & 1u) x.defect = "no verdict block";
            else x.scores = s[j];
            v.push_back(std::move(x));
        }
        ++cases;
        if (fail_mask == 7) {
            try {
                judging::ensemble_unanimity(v);
                ++mismatches;
            } catch (const AggregationError&) {
            }
            return;
        }
        auto e = judging::ensemble_unanimity(v);
        for (std::size_t c = 0; c < judging::kCriteria; ++c) {
            int expected = 1;
            for (int j = 0; j < 3; ++j)
                if (!((fail_mask >> j) & 1u)) expected = std::min(expected, static_cast<int>(s[j].values[c]));
            if (e.scores.values[c] != expected) {
                ++mismatches;
                return;
            }
        }
    };
    // Every criterion sees all 8 three-judge patterns (shifted per criterion so
    // patterns mix), under every parse-failure subset.
    for (unsigned fail_mask = 0; fail_mask < 8; ++fail_mask)
        for (unsigned shift = 0; shift < 8; ++shift) {
            std::array<RubricScores, 3> s;
            for (std::size_t c = 0; c < judging::kCriteria; ++c)
                for (int j = 0; j < 3; ++j) s[j].values[c] = (((shift + c) % 8) >> j) & 1u;
            check(s, fail_mask);
        }
    // A uniform sample of the full 2^24 space under every subset.
    Rng rng(kSeed + 3);
    for (int t = 0; t < 20000; ++t) {
        std::array<RubricScores, 3> s;
        for (auto& x : s)
            for (auto& b : x.values) b = static_cast<std::uint8_t>(rng.uniform_below(2));
        check(s, static_cast<unsigned>(t % 8));
    }
    return {mismatches == 0, fmt("%zu mismatches over %zu verdict triples", mismatches, cases)};
}

std::vector<ErrorEvent> sampling_pool() {
    // Two periods x two weeks concentrates 50,000 events into 8 cells, so
    // both cap sets bind in every cell.
    Rng rng(kSeed + 4);
    std::vector<ErrorEvent> pool;
    pool.reserve(50000);
    for (std::size_t i = 0; i < 50000; ++i) {
        const char* period = rng.uniform_below(2) ? "2023T1" : "2023T2";
        const int week = 1 + static_cast<int>(rng.uniform_below(2));
        pool.push_back(rng.uniform_below(4) ? testing::compile_event(i, period, week)
                                            : testing::runtime_event(i, period, week));
    }
    return pool;
}

Outcome sampling() {
    const auto t0 = Clock::now();
    auto pool = sampling_pool();
    std::string detail;
    bool pass = true;
    for (auto [cap_c, cap_r, target] : {std::tuple<std::size_t, std::size_t, std::size_t>{4500, 2250, 25000},
                                        std::tuple<std::size_t, std::size_t, std::size_t>{3000, 1500, 16000}}) {
        corpus::SamplingPlan plan{cap_c, cap_r, target, kSeed};
        auto a = corpus::stratified_sample(pool, plan);
        auto b = corpus::stratified_sample(pool, plan);
        std::map<corpus::CellKey, std::size_t> cells, available;
        for (const auto& e : a) ++cells[{e.period, e.week, e.phase}];
        for (const auto& e : pool) ++available[{e.period, e.week, e.phase}];
        std::size_t over = 0, binding = 0;
        for (const auto& [key, n] : cells) over += n > (std::get<2>(key) == Phase::compile ? cap_c : cap_r);
        for (const auto& [key, n] : available) binding += n > (std::get<2>(key) == Phase::compile ? cap_c : cap_r);
        std::string bytes_a, bytes_b;
        for (const auto& e : a) bytes_a += to_json(e).dump() + "\n";
        for (const auto& e : b) bytes_b += to_json(e).dump() + "\n";
        const bool ok = over == 0 && a.size() == target && bytes_a == bytes_b;
        pass = pass && ok;
        detail += fmt("caps %zu/%zu: %zu of %zu, %zu cells over cap, %zu/%zu cells capped, identical: %s; ", cap_c,
                      cap_r, a.size(), target, over, binding, available.size(), bytes_a == bytes_b ? "yes" : "no");
    }
    const double s = seconds_since(t0);
    return {pass && s < kSamplingBudgetS, detail + fmt("%.2f s", s)};
}

Outcome prompt_goldens() {
    auto fixture = [](const char* name) {
        return event_from_json(json::parse(read_file(testing::data_dir() / "fixtures" / name)));
    };
    auto golden = [](const char* name) { return json::parse(read_file(testing::data_dir() / "golden" / name)); };
    auto judge = [](const ErrorEvent& ev, const testing::JudgeFixture& f) {
        auto plan = judging::build_judge_turns(ev, f.candidate);
        return json{{"turn1", to_json(plan.turn1)},
                    {"turn2", to_json(judging::turn2_messages(plan, f.judge_own))},
                    {"template_version", plan.template_version}};
    };
    const auto compile = fixture("compile_event.json");
    const auto runtime = fixture("runtime_event.json");
    int matched = 0;
    matched += to_json(prompting::build_explanation_prompt(compile)) == golden("explain_compile.json");
    matched += to_json(prompting::build_explanation_prompt(runtime)) == golden("explain_runtime.json");
    matched += judge(compile, testing::kCompileJudge) == golden("judge_compile.json");
    matched += judge(runtime, testing::kRuntimeJudge) == golden("judge_runtime.json");

    bool strip_ok = true;
    for (const auto& ev : {compile, runtime}) {
        auto once = prompting::strip_structure_constraints(prompting::build_explanation_prompt(ev));
        auto twice = prompting::strip_structure_constraints(once.messages);
        for (const auto& m : once.messages.messages)
            for (const char* heading : {"1. Error Message Clarification", "2. Potential Causes", "3. Guidance"})
                strip_ok = strip_ok && m.content.find(heading) == std::string::npos;
        strip_ok = strip_ok && !once.warning && twice.messages == once.messages;
    }
    return {matched == 4 && strip_ok,
            fmt("%d/4 golden transcripts match; strip removes the numbered block and is idempotent: %s", matched,
                strip_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// End-to-end pipeline

std::vector<ErrorEvent> pipeline_events() {
    std::vector<ErrorEvent> out;
    for (std::size_t i = 0; i < 50; ++i) {
        out.push_back(testing::compile_event(i, "2024T1", 1 + static_cast<int>(i % 10)));
        out.push_back(testing::runtime_event(i, "2024T1", 1 + static_cast<int>(i % 10)));
    }
    return out;
}

std::vector<inference::ModelEndpoint> mock_endpoints(const std::vector<std::string>& ids) {
    std::vector<inference::ModelEndpoint> out;
    for (const auto& id : ids) {
        inference::ModelEndpoint ep;
        ep.endpoint_id = id;
        ep.base_url = "mock://";
        ep.model_name = id;
        out.push_back(ep);
    }
    return out;
}

/// A simulated expert: ranks by a per-endpoint latent quality plus noise and
/// scores each criterion with a quality-dependent chance, so statistics are
/// neither degenerate nor uniform.
annotation::Submission simulated_submission(const std::string& annotator, const std::string& event_id,
                                            const std::vector<std::string>& slots) {
    Rng rng(splitmix64(fnv1a64(annotator + "/" + event_id)));
    std::vector<std::pair<double, std::size_t>> keyed;
    annotation::Submission s{annotator, event_id, false, {}, std::vector<int>(slots.size())};
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double quality =
            static_cast<double>(std::find(kEndpoints.begin(), kEndpoints.end(), slots[i]) - kEndpoints.begin());
        keyed.emplace_back(quality + static_cast<double>(rng.uniform_below(1000)) / 250.0, i);
        std::map<std::string, int> slot;
        for (const auto& c : judging::rubric())
            slot[std::string(c.key)] = rng.uniform_below(16) < 6 + static_cast<std::uint64_t>(quality) ? 1 : 0;
        s.scores.push_back(slot);
    }
    std::sort(keyed.rbegin(), keyed.rend());
    for (std::size_t r = 0; r < keyed.size(); ++r) s.ranking[keyed[r].second] = static_cast<int>(r + 1);
    return s;
}

Outcome pipeline() {
    const auto t0 = Clock::now();
    TempDir tmp;
    std::vector<std::string> problems;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    };

    write_events(tmp / "events.jsonl", pipeline_events());
    auto sampled = corpus::stratified_sample(read_events(tmp / "events.jsonl"), {4500, 2250, 100, kSeed});
    write_events(tmp / "sample.jsonl", sampled);
    expect(sampled.size() == 100, "sample size " + std::to_string(sampled.size()));

    auto endpoints = mock_endpoints(kEndpoints);
    inference::BackendSet backends(endpoints, kSeed);
    inference::GenerateOptions gen;
    gen.parallelism = 8;
    gen.out = tmp / "responses.jsonl";
    auto g = inference::generate_responses(sampled, endpoints, backends, gen);
    auto responses = inference::read_generations(gen.out);
    expect(g.failed == 0 && responses.size() == 800, "responses " + std::to_string(responses.size()));

    auto judges = mock_endpoints({"judge-a", "judge-b", "judge-c"});
    inference::BackendSet judge_backends(judges, kSeed);
    judging::JudgeOptions jopts;
    jopts.parallelism = 8;
    jopts.out_dir = tmp / "judged";
    auto j = judging::run_judging(sampled, responses, judges, judge_backends, jopts);
    const auto n_verdicts = read_jsonl(tmp / "judged" / "verdicts.jsonl").size();
    const auto ensembles = judging::read_ensembles(tmp / "judged" / "ensemble.jsonl");
    expect(j.failed == 0 && n_verdicts == 2400, "verdicts " + std::to_string(n_verdicts));
    expect(ensembles.size() == 800, "ensembles " + std::to_string(ensembles.size()));

    auto plan = annotation::plan_assignments(sampled, kAnnotators, 20, 20, kSeed);
    auto campaign = annotation::Campaign::assemble(plan, sampled, responses, kSeed);
    annotation::AnnotationStore store(tmp / "annotation_log.jsonl");
    for (const auto& a : kAnnotators)
        for (const auto& id : plan.tasks_for(a)) {
            auto task = annotation::blind_presentation(campaign.events.at(id), campaign.responses.at(id),
                                                       campaign.endpoints, a, kSeed);
            auto order = store.ensure_order(task.order);
            store.record(simulated_submission(a, id, order.slots));
        }
    std::string exported;
    for (const auto& u : annotation::export_annotations(campaign, *store.snapshot())) exported += to_json(u).dump() + "\n";
    write_file_atomic(tmp / "annotations.jsonl", exported);

    analysis::ReportInputs in;
    in.ensembles = judging::read_ensembles(tmp / "judged" / "ensemble.jsonl");
    in.annotations = annotation::read_annotations(tmp / "annotations.jsonl");
    in.seed = kSeed;
    in.n_boot = analysis::kDefaultBootstrap;
    expect(in.annotations.size() == 160, "annotations " + std::to_string(in.annotations.size()));
    analysis::write_report(analysis::analyze(in), tmp / "report");

    auto actual = recount::parse_report(read_file(tmp / "report" / "report.md"));
    auto expected = recount::recount({tmp / "sample.jsonl", tmp / "judged" / "verdicts.jsonl",
                                      tmp / "annotations.jsonl", 3, kSeed, analysis::kDefaultBootstrap});
    std::size_t differing = 0;
    for (const auto& [key, value] : expected) {
        auto it = actual.find(key);
        if (it == actual.end() || it->second != value) {
            if (++differing <= 3)
                problems.push_back(key + ": report '" + (it == actual.end() ? "<missing>" : it->second) +
                                   "' vs recount '" + value + "'");
        }
    }
    for (const auto& [key, value] : actual)
        if (!expected.count(key) && ++differing <= 3) problems.push_back(key + ": not in recount");

    const double s = seconds_since(t0);
    expect(s < kPipelineBudgetS, "over time budget");
    std::string detail = fmt("800 responses, %zu verdicts, %zu ensembles; %zu report cells, %zu differ from the "
                             "recount; %.2f s",
                             n_verdicts, ensembles.size(), expected.size(), differing, s);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty() && differing == 0, detail};
}

// ---------------------------------------------------------------------------
// Blinding over the HTTP service

Outcome blinding() {
    TempDir tmp;
    auto events = pipeline_events();
    // Response texts carry a private marker per endpoint so the simulated
    // client can tell which slot is which without seeing an endpoint id. Some
    // texts also name their own endpoint, which the service must mask.
    std::map<std::string, std::string> marker_to_endpoint;
    std::vector<inference::GenerationRecord> responses;
    for (std::size_t e = 0; e < kEndpoints.size(); ++e) {
        const std::string marker = "marker-" + std::to_string(7919 * (e + 1));
        marker_to_endpoint[marker] = kEndpoints[e];
        for (const auto& ev : events)
            responses.push_back({ev.event_id, kEndpoints[e],
                                 "[" + marker + "] " + (e % 2 ? "As " + kEndpoints[e] + ", " : std::string()) +
                                     "look at the line the compiler names.",
                                 0, 1});
    }
    auto plan = annotation::plan_assignments(events, kAnnotators, 20, 20, kSeed);
    auto campaign = annotation::Campaign::assemble(plan, events, responses, kSeed, "campaign-token");
    annotation::AnnotationStore store(tmp / "annotations.jsonl");
    annotation::AnnotationServer server(campaign, store);
    const int port = server.bind_any_port("127.0.0.1");
    std::thread serving([&] { server.serve(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    const httplib::Headers auth = {{"X-Campaign-Token", "campaign-token"}};
    std::size_t payloads = 0, leaks = 0, http_errors = 0, submitted = 0;
    auto scan = [&](const std::string& body) {
        ++payloads;
        for (const auto& ep : kEndpoints)
            if (body.find(ep) != std::string::npos) ++leaks;
    };
    // Intended attribution: rank = position of the endpoint in a per-task
    // rotation; socratic = 1 only for the top-ranked endpoint.
    std::map<std::pair<std::string, std::string>, std::map<std::string, int>> intended;
    if (auto c = cli.Get("/api/campaign", auth)) scan(c->body);
    for (const auto& a : kAnnotators) {
        for (int step = 0; step < 41; ++step) {
            auto res = cli.Get(("/api/tasks/next?annotator=" + a).c_str(), auth);
            if (!res || res->status != 200) {
                ++http_errors;
                break;
            }
            scan(res->body);
            auto task = json::parse(res->body);
            if (task.value("complete", false)) break;
            const std::string id = task["event_id"];
            // Reopening a task must present the same blinded payload.
            auto reopened = cli.Get(("/api/tasks/" + id + "?annotator=" + a).c_str(), auth);
            if (!reopened || json::parse(reopened->body)["responses"] != task["responses"]) ++http_errors;
            const std::size_t rot = std::hash<std::string>{}(a + id) % kEndpoints.size();
            json scores = json::array(), ranking = json::array();
            for (const auto& item : task["responses"]) {
                const std::string text = item["text"];
                const std::string marker = text.substr(1, text.find(']') - 1);
                const std::string& ep = marker_to_endpoint.at(marker);
                const auto idx = static_cast<std::size_t>(std::find(kEndpoints.begin(), kEndpoints.end(), ep) -
                                                          kEndpoints.begin());
                const int rank = static_cast<int>((idx + rot) % kEndpoints.size()) + 1;
                intended[{a, id}][ep] = rank;
                json slot = json::object();
                for (const auto& c : judging::rubric()) slot[std::string(c.key)] = 1;
                slot["socratic"] = rank == 1 ? 1 : 0;
                scores.push_back(slot);
                ranking.push_back(rank);
            }
            json body = {{"annotator", a}, {"event_id", id}, {"scores", scores}, {"ranking", ranking}};
            auto post = cli.Post("/api/annotations", auth, body.dump(), "application/json");
            if (!post || post->status != 200) ++http_errors;
            else ++submitted;
        }
    }
    auto exported = cli.Get("/api/export", auth);
    server.stop();
    serving.join();

    std::vector<annotation::UnblindedAnnotation> anns;
    std::size_t misattributed = 0;
    if (exported && exported->status == 200) {
        std::istringstream lines(exported->body);
        for (std::string line; std::getline(lines, line);)
            if (!line.empty()) anns.push_back(annotation::unblinded_from_json(json::parse(line)));
    }
    std::vector<annotation::UnblindedAnnotation> shared;
    for (const auto& u : anns) {
        const auto& want = intended[{u.annotator, u.event_id}];
        bool ok = u.ranks == want && u.shared == plan.is_shared(u.event_id);
        for (const auto& [ep, rank] : want) ok = ok && u.scores.at(ep).at("socratic") == (rank == 1 ? 1 : 0);
        misattributed += !ok;
        if (u.shared) shared.push_back(u);
    }
    auto d1 = annotation::dedupe_shared(shared, kSeed);
    auto reversed = shared;
    std::reverse(reversed.begin(), reversed.end());
    auto d2 = annotation::dedupe_shared(reversed, kSeed);
    const bool dedupe_ok = d1.size() == 20 && d1 == d2;

    return {leaks == 0 && http_errors == 0 && submitted == 160 && anns.size() == 160 && misattributed == 0 &&
                dedupe_ok,
            fmt("%zu payloads, %zu endpoint ids leaked; %zu submissions, %zu exported, %zu misattributed; "
                "%zu HTTP errors; dedupe kept %zu of %zu shared annotations, deterministic: %s",
                payloads, leaks, submitted, anns.size(), misattributed, http_errors, d1.size(), shared.size(),
                d1 == d2 ? "yes" : "no")};
}

Outcome sft_export() {
    TempDir tmp;
    std::vector<ErrorEvent> events;
    for (std::size_t i = 0; i < 20; ++i) {
        events.push_back(testing::compile_event(i));
        events.push_back(testing::runtime_event(i));
    }
    auto teacher = mock_endpoints({"teacher"});
    inference::BackendSet backends(teacher, kSeed);
    inference::GenerateOptions gen;
    gen.out = tmp / "responses.jsonl";
    inference::generate_responses(events, teacher, backends, gen);
    std::map<std::string, std::string> text;
    for (const auto& r : inference::read_generations(gen.out)) text[r.event_id] = r.response_text;
    std::vector<std::pair<ErrorEvent, std::string>> pairs;
    for (const auto& e : events) pairs.emplace_back(e, text[e.event_id]);

    auto out = prompting::export_sft(pairs);
    std::string body;
    for (const auto& r : out.records) body += to_json(r).dump() + "\n";
    write_file_atomic(tmp / "train.jsonl", body);
    std::size_t ending_in_assistant = 0;
    for (const auto& row : read_jsonl(tmp / "train.jsonl")) {
        const auto& msgs = row.at("messages");
        ending_in_assistant += !msgs.empty() && msgs.back().at("role") == "assistant" &&
                               !msgs.back().at("content").get<std::string>().empty();
    }
    prompting::TrainManifest manifest;
    const json m = to_json(manifest);
    const bool manifest_ok = m.at("epochs") == 1 && m.at("learning_rate").get<double>() == 2e-5;
    return {pairs.size() == 40 && ending_in_assistant == 40 && manifest_ok,
            fmt("%zu pairs -> %zu records ending in an assistant turn; manifest epochs=%d learning_rate=%g",
                pairs.size(), ending_in_assistant, m.at("epochs").get<int>(), m.at("learning_rate").get<double>())};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"statistics oracle", statistics_oracle},
        {"win-rate and rank summary", win_rank},
        {"unanimity ensemble", unanimity},
        {"stratified sampling", sampling},
        {"prompt goldens", prompt_goldens},
        {"end-to-end mock pipeline", pipeline},
        {"annotation blinding", blinding},
        {"SFT export", sft_export},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
