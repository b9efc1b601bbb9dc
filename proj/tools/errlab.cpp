// errlab: command-line front end for the error-explanation evaluation pipeline.

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "errlab/analysis.hpp"
#include "errlab/annotation.hpp"
#include "errlab/capture.hpp"
#include "errlab/corpus.hpp"
#include "errlab/error.hpp"
#include "errlab/inference.hpp"
#include "errlab/judging.hpp"
#include "errlab/jsonl.hpp"
#include "errlab/prompting.hpp"
#include "errlab/provenance.hpp"

namespace fs = std::filesystem;
using namespace errlab;

namespace {

std::vector<std::string> g_argv;

bool color_enabled() { return std::getenv("NO_COLOR") == nullptr && isatty(STDERR_FILENO); }

void report_error(const std::string& kind, const std::string& message) {
    if (color_enabled()) std::cerr << "\033[31merrlab: " << kind << ":\033[0m " << message << '\n';
    else std::cerr << "errlab: " << kind << ": " << message << '\n';
}

void info(const std::string& message) { std::cerr << message << '\n'; }

Provenance provenance(const std::string& stage) {
    Provenance p;
    p.stage = stage;
    p.argv = g_argv;
    return p;
}

void require_file(const fs::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string(what) + " path is required");
    if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const prompting::PromptTemplate& explain_template(const std::string& path, prompting::PromptTemplate& storage) {
    if (path.empty()) return prompting::PromptTemplate::default_explanation();
    storage = prompting::PromptTemplate::load(path);
    return storage;
}

// ---------------------------------------------------------------------------

struct CaptureArgs {
    std::string cc = "cc -Wall -o {out} {src}";
    fs::path src, input, out;
    bool run = false;
    std::string period = "unspecified";
    int week = 1;
    int timeout_ms = 30000;
    bool dry_run = false;
};

int cmd_capture(const CaptureArgs& a) {
    require_file(a.src, "source");
    if (a.out.empty()) throw ConfigError("--out is required");
    if (a.run && a.cc.find("{out}") == std::string::npos)
        throw ConfigError("--run needs a compiler template with an {out} placeholder");
    if (a.dry_run) {
        info("capture: would compile " + a.src.string() + " with \"" + a.cc + "\"" +
             (a.run ? " and run the binary" : "") + ", appending events to " + a.out.string());
        return 0;
    }
    capture::EventMeta meta{a.period, a.week, std::nullopt};
    capture::CompileOptions copts;
    copts.timeout = std::chrono::milliseconds(a.timeout_ms);
    auto compiled = capture::run_compile(a.cc, a.src, meta, copts);
    std::vector<ErrorEvent> events = compiled.events;
    if (events.empty() && a.run) {
        capture::RunOptions ropts;
        ropts.timeout = std::chrono::milliseconds(a.timeout_ms);
        if (!a.input.empty()) ropts.stdin_data = read_file(a.input);
        if (auto ev = capture::run_program(compiled.binary, a.src, meta, ropts)) events.push_back(std::move(*ev));
        std::error_code ec;
        fs::remove(compiled.binary, ec);
    }
    JournalWriter out(a.out);
    for (const auto& e : events) out.append(to_json(e));
    auto p = provenance("capture");
    p.add_input(a.src);
    write_provenance(a.out, p);
    info("capture: compiler exit " + std::to_string(compiled.exit_status) + ", " + std::to_string(events.size()) +
         " event(s) appended to " + a.out.string());
    return 0;
}

struct IngestArgs {
    fs::path report, src, out;
    std::string period = "unspecified";
    int week = 1;
    bool dry_run = false;
};

int cmd_ingest(const IngestArgs& a) {
    require_file(a.report, "runtime report");
    require_file(a.src, "source");
    if (a.out.empty()) throw ConfigError("--out is required");
    auto ev = capture::ingest_runtime_report(json::parse(read_file(a.report)), read_file(a.src),
                                             {a.period, a.week, std::nullopt});
    validate(ev);
    if (a.dry_run) {
        info("ingest: report is valid (" + ev.runtime->signal_or_cause + ", " +
             std::to_string(ev.runtime->call_stack.size()) + " frames); would append to " + a.out.string());
        return 0;
    }
    JournalWriter(a.out).append(to_json(ev));
    auto p = provenance("ingest");
    p.add_input(a.report);
    p.add_input(a.src);
    write_provenance(a.out, p);
    info("ingest: appended " + ev.event_id + " to " + a.out.string());
    return 0;
}

struct RedactArgs {
    fs::path in, rules, names, out;
    std::size_t max_tokens = 4000;
    bool dry_run = false;
};

int cmd_redact(const RedactArgs& a) {
    require_file(a.in, "events");
    if (a.out.empty()) throw ConfigError("--out is required");
    std::vector<std::string> names;
    if (!a.names.empty()) {
        std::stringstream ss(read_file(a.names));
        for (std::string line; std::getline(ss, line);)
            if (!line.empty()) names.push_back(line);
    }
    auto rules = a.rules.empty() ? corpus::RedactionRuleSet::defaults(names)
                                 : corpus::RedactionRuleSet::from_json(json::parse(read_file(a.rules)));
    auto events = read_events(a.in);
    auto redacted = corpus::redact_all(events, rules);
    auto kept = corpus::filter_oversized(redacted, a.max_tokens);
    info("redact: " + std::to_string(events.size()) + " events, " + std::to_string(events.size() - kept.size()) +
         " above " + std::to_string(a.max_tokens) + " tokens dropped");
    if (a.dry_run) return 0;
    write_events(a.out, kept);
    auto p = provenance("redact");
    p.add_input(a.in);
    if (!a.rules.empty()) p.add_input(a.rules);
    if (!a.names.empty()) p.add_input(a.names);
    write_provenance(a.out, p);
    return 0;
}

struct SampleArgs {
    fs::path in, out;
    std::size_t cap_compile = 4500, cap_runtime = 2250, target = 40000;
    std::uint64_t seed = 0;
    std::string periods;
    bool dry_run = false;
};

int cmd_sample(const SampleArgs& a) {
    require_file(a.in, "events");
    if (a.out.empty()) throw ConfigError("--out is required");
    auto events = read_events(a.in);
    if (!a.periods.empty()) {
        auto list = split_list(a.periods);
        events = corpus::filter_periods(events, std::set<std::string>(list.begin(), list.end()));
    }
    corpus::SamplingPlan plan{a.cap_compile, a.cap_runtime, a.target, a.seed};
    auto sample = corpus::stratified_sample(events, plan);
    auto stats = corpus::corpus_stats(sample);
    info("sample: " + std::to_string(sample.size()) + " of " + std::to_string(events.size()) + " events (" +
         std::to_string(stats.n_compile) + " compile, " + std::to_string(stats.n_runtime) + " runtime)");
    if (a.dry_run) return 0;
    write_events(a.out, sample);
    auto p = provenance("sample");
    p.seed = a.seed;
    p.add_input(a.in);
    write_provenance(a.out, p);
    return 0;
}

struct ExportArgs {
    fs::path events, responses, out, manifest;
    std::string endpoint, template_path;
    prompting::TrainManifest train;
    bool dry_run = false;
};

int cmd_export_sft(ExportArgs a) {
    require_file(a.events, "events");
    require_file(a.responses, "responses");
    if (a.out.empty()) throw ConfigError("--out is required");
    prompting::validate(a.train);
    auto events = read_events(a.events);
    auto responses = inference::read_generations(a.responses);
    if (a.endpoint.empty()) {
        std::set<std::string> ids;
        for (const auto& r : responses) ids.insert(r.endpoint_id);
        if (ids.size() != 1) throw ConfigError("responses come from several endpoints; choose one with --endpoint");
        a.endpoint = *ids.begin();
    }
    std::map<std::string, std::string> by_event;
    for (const auto& r : responses)
        if (r.endpoint_id == a.endpoint) by_event[r.event_id] = r.response_text;
    std::vector<std::pair<ErrorEvent, std::string>> pairs;
    for (const auto& e : events)
        if (auto it = by_event.find(e.event_id); it != by_event.end()) pairs.emplace_back(e, it->second);

    prompting::PromptTemplate storage;
    const auto& tmpl = explain_template(a.template_path, storage);
    auto exported = prompting::export_sft(pairs, tmpl);
    info("export-sft: " + std::to_string(exported.records.size()) + " records, " +
         std::to_string(exported.excluded_event_ids.size()) + " excluded (empty response)");
    if (a.dry_run) return 0;

    std::vector<json> rows;
    for (const auto& r : exported.records) rows.push_back(to_json(r));
    write_jsonl(a.out, rows);
    fs::path manifest = a.manifest.empty() ? a.out.parent_path() / "train_manifest.json" : a.manifest;
    json m = to_json(a.train);
    m["dataset"] = a.out.filename().string();
    m["records"] = exported.records.size();
    m["excluded_event_ids"] = exported.excluded_event_ids;
    write_file_atomic(manifest, m.dump(2) + "\n");
    auto p = provenance("export-sft");
    p.template_version = tmpl.version();
    p.add_input(a.events);
    p.add_input(a.responses);
    write_provenance(a.out, p);
    return 0;
}

struct GenerateArgs {
    fs::path events, endpoints, out;
    int parallel = 4;
    std::uint64_t seed = 0;
    int max_attempts = 5;
    std::string template_path;
    bool dry_run = false;
};

int cmd_generate(const GenerateArgs& a) {
    require_file(a.events, "events");
    require_file(a.endpoints, "endpoint config");
    if (a.out.empty()) throw ConfigError("--out is required");
    auto events = read_events(a.events);
    auto endpoints = inference::load_endpoints(a.endpoints);
    prompting::PromptTemplate storage;
    const auto& tmpl = explain_template(a.template_path, storage);

    inference::GenerateOptions opts;
    opts.parallelism = a.parallel;
    opts.out = a.out;
    opts.dry_run = a.dry_run;
    opts.retry.max_attempts = a.max_attempts;
    opts.prompt_template = &tmpl;
    inference::BackendSet backends(endpoints, a.seed);
    auto s = inference::generate_responses(events, endpoints, backends, opts);
    if (a.dry_run) {
        info("generate: " + std::to_string(s.planned) + " pairs planned, " + std::to_string(s.skipped) +
             " already committed, " + std::to_string(s.planned - s.skipped) + " to request");
        return 0;
    }
    auto p = provenance("generate");
    p.seed = a.seed;
    p.template_version = tmpl.version();
    p.add_input(a.events);
    p.add_input(a.endpoints);
    write_provenance(a.out, p);
    info("generate: " + std::to_string(s.completed) + " committed, " + std::to_string(s.skipped) + " skipped, " +
         std::to_string(s.failed) + " failed, " + std::to_string(s.calls) + " calls");
    return s.failed > 0 ? 2 : 0;
}

struct JudgeArgs {
    fs::path events, responses, judges, out_dir;
    int parallel = 4;
    std::uint64_t seed = 0;
    int max_attempts = 5;
    bool strict = false, majority = false, dry_run = false;
};

int cmd_judge(const JudgeArgs& a) {
    require_file(a.events, "events");
    require_file(a.responses, "responses");
    require_file(a.judges, "judge config");
    if (a.out_dir.empty()) throw ConfigError("--out-dir is required");
    auto events = read_events(a.events);
    auto responses = inference::read_generations(a.responses);
    auto judges = inference::load_endpoints(a.judges);

    judging::JudgeOptions opts;
    opts.parallelism = a.parallel;
    opts.out_dir = a.out_dir;
    opts.dry_run = a.dry_run;
    opts.strict = a.strict;
    opts.rule = a.majority ? judging::Aggregation::majority : judging::Aggregation::unanimity;
    opts.retry.max_attempts = a.max_attempts;
    inference::BackendSet backends(judges, a.seed);
    auto s = judging::run_judging(events, responses, judges, backends, opts);
    if (a.dry_run) {
        info("judge: " + std::to_string(s.planned) + " (response, judge) pairs, " + std::to_string(s.skipped) +
             " already judged, " + std::to_string(s.planned - s.skipped) + " to request");
        return 0;
    }
    auto p = provenance("judge");
    p.seed = a.seed;
    p.template_version = prompting::PromptTemplate::default_judge().version();
    p.add_input(a.events);
    p.add_input(a.responses);
    p.add_input(a.judges);
    write_provenance(a.out_dir, p);
    info("judge: " + std::to_string(s.completed) + " verdicts (" + std::to_string(s.parse_failures) +
         " unparseable), " + std::to_string(s.failed) + " failed, " + std::to_string(s.ensembles) + " ensembles (" +
         std::to_string(s.degraded) + " degraded), " + std::to_string(s.calls) + " calls");
    return s.failed > 0 ? 2 : 0;
}

struct PlanArgs {
    fs::path events, out;
    std::string annotators;
    std::size_t shared = 20, unique = 20;
    std::uint64_t seed = 0;
    bool dry_run = false;
};

int cmd_plan(const PlanArgs& a) {
    require_file(a.events, "events");
    if (a.out.empty()) throw ConfigError("--out is required");
    auto annotators = split_list(a.annotators);
    auto events = read_events(a.events);
    auto plan = annotation::plan_assignments(events, annotators, a.shared, a.unique, a.seed);
    std::size_t distinct = plan.shared_examples.size();
    for (const auto& [ann, ids] : plan.unique_examples) distinct += ids.size();
    info("plan: " + std::to_string(annotators.size()) + " annotators, " + std::to_string(distinct) +
         " distinct examples, " + std::to_string(a.shared + a.unique) + " per annotator");
    if (a.dry_run) return 0;
    write_file_atomic(a.out, to_json(plan).dump(2) + "\n");
    auto p = provenance("plan");
    p.seed = a.seed;
    p.add_input(a.events);
    write_provenance(a.out, p);
    return 0;
}

struct ServeArgs {
    fs::path plan, events, responses, store;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::uint64_t seed = 0;
    std::string token;
    bool dry_run = false;
};

annotation::AnnotationServer* g_server = nullptr;

int cmd_serve(ServeArgs a) {
    require_file(a.plan, "plan");
    require_file(a.events, "events");
    require_file(a.responses, "responses");
    if (a.token.empty())
        if (const char* t = std::getenv("ERRLAB_CAMPAIGN_TOKEN")) a.token = t;
    auto plan = annotation::plan_from_json(json::parse(read_file(a.plan)));
    auto events = read_events(a.events);
    auto responses = inference::read_generations(a.responses);
    auto campaign = annotation::Campaign::assemble(std::move(plan), events, responses, a.seed, a.token);
    if (a.store.empty()) a.store = a.plan.parent_path() / "annotations.log.jsonl";
    info("serve-annotation: " + std::to_string(campaign.events.size()) + " examples, " +
         std::to_string(campaign.endpoints.size()) + " responses each, log " + a.store.string());
    if (a.token.empty()) info("serve-annotation: no campaign token set; /api/export is disabled");
    if (a.dry_run) return 0;
    annotation::AnnotationStore store(a.store);
    annotation::AnnotationServer server(campaign, store);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    info("serve-annotation: listening on http://" + a.host + ":" + std::to_string(a.port));
    bool ok = server.listen(a.host, a.port);
    g_server = nullptr;
    if (!ok) throw ConfigError("could not bind " + a.host + ":" + std::to_string(a.port));
    return 0;
}

struct AnalyzeArgs {
    fs::path judged, annotations, out;
    std::uint64_t seed = 0;
    std::size_t n_boot = analysis::kDefaultBootstrap;
    bool serial = false, dry_run = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
    if (a.judged.empty() && a.annotations.empty()) throw ConfigError("--judged and/or --annotations is required");
    if (a.out.empty()) throw ConfigError("--out is required");
    analysis::ReportInputs in;
    in.seed = a.seed;
    in.n_boot = a.n_boot;
    if (!a.judged.empty()) {
        require_file(a.judged / "ensemble.jsonl", "ensemble file");
        in.ensembles = judging::read_ensembles(a.judged / "ensemble.jsonl");
    }
    if (!a.annotations.empty()) {
        require_file(a.annotations, "annotation export");
        in.annotations = annotation::read_annotations(a.annotations);
    }
    auto report = analysis::analyze(in, a.serial ? Exec::serial : Exec::parallel);
    info("analyze: " + std::to_string(in.ensembles.size()) + " ensemble results, " +
         std::to_string(in.annotations.size()) + " annotations");
    if (a.dry_run) return 0;
    analysis::write_report(report, a.out);
    auto p = provenance("analyze");
    p.seed = a.seed;
    if (!a.judged.empty()) p.add_input(a.judged / "ensemble.jsonl");
    if (!a.annotations.empty()) p.add_input(a.annotations);
    write_provenance(a.out, p);
    return 0;
}

struct ReportArgs {
    fs::path in, out;
    bool dry_run = false;
};

int cmd_report(const ReportArgs& a) {
    require_file(a.in, "events");
    auto stats = to_json(corpus::corpus_stats(read_events(a.in)));
    if (a.out.empty() || a.dry_run) {
        std::cout << stats.dump(2) << '\n';
        return 0;
    }
    write_file_atomic(a.out, stats.dump(2) + "\n");
    auto p = provenance("report");
    p.add_input(a.in);
    write_provenance(a.out, p);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    g_argv.assign(argv, argv + argc);
    CLI::App app{"errlab: capture, generate, judge and analyze programming error explanations"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.set_config("--config", "", "TOML/INI run configuration; command-line flags override it");
    app.require_subcommand(1);

    CaptureArgs capture_args;
    auto* cap = app.add_subcommand("capture", "Compile (and optionally run) a C program, recording error events");
    cap->add_option("--cc", capture_args.cc, "Compiler command template with {src} and optional {out}");
    cap->add_option("--src", capture_args.src, "C source file")->required();
    cap->add_flag("--run", capture_args.run, "Run the binary when it compiles; requires an instrumented report");
    cap->add_option("--input", capture_args.input, "File fed to the program's stdin");
    cap->add_option("--out", capture_args.out, "events.jsonl to append to")->required();
    cap->add_option("--period", capture_args.period, "Teaching-period label");
    cap->add_option("--week", capture_args.week, "Teaching week");
    cap->add_option("--timeout-ms", capture_args.timeout_ms, "Compile/run timeout");
    cap->add_flag("--dry-run", capture_args.dry_run);

    IngestArgs ingest_args;
    auto* ing = app.add_subcommand("ingest", "Convert a structured runtime report into an error event");
    ing->add_option("--report", ingest_args.report, "Runtime report JSON")->required();
    ing->add_option("--src", ingest_args.src, "C source the report belongs to")->required();
    ing->add_option("--out", ingest_args.out, "events.jsonl to append to")->required();
    ing->add_option("--period", ingest_args.period);
    ing->add_option("--week", ingest_args.week);
    ing->add_flag("--dry-run", ingest_args.dry_run);

    RedactArgs redact_args;
    auto* red = app.add_subcommand("redact", "Redact identifying text and drop oversized events");
    red->add_option("--in", redact_args.in)->required();
    red->add_option("--out", redact_args.out)->required();
    red->add_option("--rules", redact_args.rules, "Rule set JSON (defaults: email and student-id patterns)");
    red->add_option("--names", redact_args.names, "Name dictionary, one name per line");
    red->add_option("--max-tokens", redact_args.max_tokens, "Drop events whose prompt context exceeds this");
    red->add_flag("--dry-run", redact_args.dry_run);

    SampleArgs sample_args;
    auto* smp = app.add_subcommand("sample", "Per-week capped, seeded random sample");
    smp->add_option("--in", sample_args.in)->required();
    smp->add_option("--out", sample_args.out)->required();
    smp->add_option("--cap-compile", sample_args.cap_compile);
    smp->add_option("--cap-runtime", sample_args.cap_runtime);
    smp->add_option("--target", sample_args.target);
    smp->add_option("--seed", sample_args.seed);
    smp->add_option("--periods", sample_args.periods, "Comma-separated teaching periods to keep");
    smp->add_flag("--dry-run", sample_args.dry_run);

    ExportArgs export_args;
    auto* sft = app.add_subcommand("export-sft", "Write chat-format SFT JSONL and a training manifest");
    sft->add_option("--events", export_args.events)->required();
    sft->add_option("--responses", export_args.responses)->required();
    sft->add_option("--endpoint", export_args.endpoint, "Teacher endpoint whose responses become targets");
    sft->add_option("--out", export_args.out)->required();
    sft->add_option("--manifest", export_args.manifest, "Defaults to train_manifest.json beside --out");
    sft->add_option("--template", export_args.template_path, "Prompt template override");
    sft->add_option("--epochs", export_args.train.epochs);
    sft->add_option("--learning-rate", export_args.train.learning_rate);
    sft->add_option("--base-model", export_args.train.base_model);
    sft->add_flag("--dry-run", export_args.dry_run);

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "Collect one response per (event, endpoint)");
    gen->add_option("--events", gen_args.events)->required();
    gen->add_option("--endpoints", gen_args.endpoints, "Endpoint config (TOML, [[endpoint]] tables)")->required();
    gen->add_option("--out", gen_args.out, "responses.jsonl (also the resume journal)")->required();
    gen->add_option("--parallel", gen_args.parallel)->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_args.seed, "Seed for mock endpoints");
    gen->add_option("--max-attempts", gen_args.max_attempts)->check(CLI::PositiveNumber);
    gen->add_option("--template", gen_args.template_path, "Prompt template override");
    gen->add_flag("--dry-run", gen_args.dry_run);

    JudgeArgs judge_args;
    auto* jdg = app.add_subcommand("judge", "Two-turn rubric judging and unanimity ensemble");
    jdg->add_option("--events", judge_args.events)->required();
    jdg->add_option("--responses", judge_args.responses)->required();
    jdg->add_option("--judges", judge_args.judges, "Judge config (TOML, [[endpoint]] tables)")->required();
    jdg->add_option("--out-dir", judge_args.out_dir)->required();
    jdg->add_option("--parallel", judge_args.parallel)->check(CLI::PositiveNumber);
    jdg->add_option("--seed", judge_args.seed, "Seed for mock judges");
    jdg->add_option("--max-attempts", judge_args.max_attempts)->check(CLI::PositiveNumber);
    jdg->add_flag("--strict", judge_args.strict, "Fail a pair when any verdict does not parse");
    jdg->add_flag("--majority", judge_args.majority, "Majority instead of unanimity (experiments only)");
    jdg->add_flag("--dry-run", judge_args.dry_run);

    PlanArgs plan_args;
    auto* pln = app.add_subcommand("plan", "Assign balanced shared and unique examples to annotators");
    pln->add_option("--events", plan_args.events)->required();
    pln->add_option("--annotators", plan_args.annotators, "Comma-separated annotator ids")->required();
    pln->add_option("--shared", plan_args.shared);
    pln->add_option("--unique", plan_args.unique);
    pln->add_option("--seed", plan_args.seed);
    pln->add_option("--out", plan_args.out)->required();
    pln->add_flag("--dry-run", plan_args.dry_run);

    ServeArgs serve_args;
    auto* srv = app.add_subcommand("serve-annotation", "Serve the blinded annotation campaign over HTTP");
    srv->add_option("--plan", serve_args.plan)->required();
    srv->add_option("--events", serve_args.events)->required();
    srv->add_option("--responses", serve_args.responses)->required();
    srv->add_option("--store", serve_args.store, "Append-only annotation log");
    srv->add_option("--host", serve_args.host);
    srv->add_option("--port", serve_args.port);
    srv->add_option("--seed", serve_args.seed);
    srv->add_option("--token", serve_args.token, "Campaign token (or ERRLAB_CAMPAIGN_TOKEN)");
    srv->add_flag("--dry-run", serve_args.dry_run);

    AnalyzeArgs analyze_args;
    auto* ana = app.add_subcommand("analyze", "Criterion rates, win rates, rank summary and agreement");
    ana->add_option("--judged", analyze_args.judged, "Directory holding ensemble.jsonl");
    ana->add_option("--annotations", analyze_args.annotations, "Unblinded annotation export (JSONL)");
    ana->add_option("--seed", analyze_args.seed);
    ana->add_option("--n-boot", analyze_args.n_boot);
    ana->add_option("--out", analyze_args.out)->required();
    ana->add_flag("--serial", analyze_args.serial, "Use the serial reference kernels");
    ana->add_flag("--dry-run", analyze_args.dry_run);

    ReportArgs report_args;
    auto* rep = app.add_subcommand("report", "Corpus statistics for an events file");
    rep->add_option("--in", report_args.in)->required();
    rep->add_option("--out", report_args.out, "Write JSON here instead of stdout");
    rep->add_flag("--dry-run", report_args.dry_run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage error", e.what());
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << sub->help();
        return 1;
    }

    try {
        if (cap->parsed()) return cmd_capture(capture_args);
        if (ing->parsed()) return cmd_ingest(ingest_args);
        if (red->parsed()) return cmd_redact(redact_args);
        if (smp->parsed()) return cmd_sample(sample_args);
        if (sft->parsed()) return cmd_export_sft(export_args);
        if (gen->parsed()) return cmd_generate(gen_args);
        if (jdg->parsed()) return cmd_judge(judge_args);
        if (pln->parsed()) return cmd_plan(plan_args);
        if (srv->parsed()) return cmd_serve(serve_args);
        if (ana->parsed()) return cmd_analyze(analyze_args);
        if (rep->parsed()) return cmd_report(report_args);
    } catch (const Error& e) {
        report_error(to_string(e.kind()), e.what());
        return e.exit_code();
    } catch (const json::exception& e) {
        report_error("schema error", e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error("internal error", e.what());
        return 1;
    }
    return 1;
}
