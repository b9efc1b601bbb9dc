#include "errlab/annotation.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <httplib.h>

#include "errlab/error.hpp"
#include "errlab/rng.hpp"

namespace errlab::annotation {

namespace {

std::uint64_t key_hash(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
    std::uint64_t h = fnv1a64("errlab-annotation");
    for (auto p : parts) {
        h = fnv1a64(p, h);
        h = fnv1a64(std::string_view("\x1f", 1), h);
    }
    return splitmix64(seed ^ h);
}

}  // namespace

// ---------------------------------------------------------------------------
// Plan

std::vector<std::string> AssignmentPlan::tasks_for(const std::string& annotator) const {
    auto it = unique_examples.find(annotator);
    if (it == unique_examples.end()) return {};
    std::vector<std::string> tasks = shared_examples;
    tasks.insert(tasks.end(), it->second.begin(), it->second.end());
    Rng rng(key_hash(seed, {"tasks", annotator}));
    rng.shuffle(tasks);
    return tasks;
}

bool AssignmentPlan::assigned(const std::string& annotator, const std::string& event_id) const {
    auto it = unique_examples.find(annotator);
    if (it == unique_examples.end()) return false;
    return is_shared(event_id) || std::find(it->second.begin(), it->second.end(), event_id) != it->second.end();
}

bool AssignmentPlan::is_shared(const std::string& event_id) const {
    return std::find(shared_examples.begin(), shared_examples.end(), event_id) != shared_examples.end();
}

json to_json(const AssignmentPlan& plan) {
    json unique = json::object();
    for (const auto& [a, ids] : plan.unique_examples) unique[a] = ids;
    return {{"annotators", plan.annotators},
            {"shared_examples", plan.shared_examples},
            {"unique_examples", unique},
            {"seed", plan.seed}};
}

AssignmentPlan plan_from_json(const json& j) {
    AssignmentPlan p;
    p.annotators = j.at("annotators").get<std::vector<std::string>>();
    p.shared_examples = j.at("shared_examples").get<std::vector<std::string>>();
    for (auto it = j.at("unique_examples").begin(); it != j.at("unique_examples").end(); ++it)
        p.unique_examples[it.key()] = it.value().get<std::vector<std::string>>();
    p.seed = j.value("seed", std::uint64_t{0});
    for (const auto& a : p.annotators)
        if (!p.unique_examples.count(a)) p.unique_examples[a] = {};
    return p;
}

AssignmentPlan plan_assignments(std::span<const ErrorEvent> eval_examples, const std::vector<std::string>& annotators,
                                std::size_t shared_n, std::size_t unique_n, std::uint64_t seed) {
    if (annotators.empty()) throw SizingError("at least one annotator is required");
    if (std::set<std::string>(annotators.begin(), annotators.end()).size() != annotators.size())
        throw SizingError("annotator ids must be unique");
    const std::size_t per_annotator = shared_n + unique_n;
    if (per_annotator % 2 != 0)
        throw SizingError("shared_n + unique_n = " + std::to_string(per_annotator) +
                          " is odd; a balanced compile/runtime split needs an even total");
    const std::size_t shared_c = (shared_n + 1) / 2;
    const std::size_t shared_r = shared_n - shared_c;
    if (per_annotator / 2 < shared_c)
        throw SizingError("shared subset has more compile examples than a balanced set allows");
    const std::size_t unique_c = per_annotator / 2 - shared_c;
    const std::size_t unique_r = unique_n - unique_c;

    std::vector<std::string> compile, runtime;
    std::set<std::string> seen;
    for (const auto& e : eval_examples) {
        if (!seen.insert(e.event_id).second) continue;
        (e.phase == Phase::compile ? compile : runtime).push_back(e.event_id);
    }
    std::sort(compile.begin(), compile.end());
    std::sort(runtime.begin(), runtime.end());

    const std::size_t need_c = shared_c + annotators.size() * unique_c;
    const std::size_t need_r = shared_r + annotators.size() * unique_r;
    if (compile.size() < need_c || runtime.size() < need_r)
        throw SizingError("plan needs " + std::to_string(need_c) + " compile and " + std::to_string(need_r) +
                          " runtime examples; pool has " + std::to_string(compile.size()) + " and " +
                          std::to_string(runtime.size()));

    Rng rng(seed);
    rng.shuffle(compile);
    rng.shuffle(runtime);

    AssignmentPlan plan;
    plan.annotators = annotators;
    plan.seed = seed;
    plan.shared_examples.assign(compile.begin(), compile.begin() + shared_c);
    plan.shared_examples.insert(plan.shared_examples.end(), runtime.begin(), runtime.begin() + shared_r);
    std::size_t next_c = shared_c, next_r = shared_r;
    for (const auto& a : annotators) {
        auto& mine = plan.unique_examples[a];
        mine.assign(compile.begin() + next_c, compile.begin() + next_c + unique_c);
        mine.insert(mine.end(), runtime.begin() + next_r, runtime.begin() + next_r + unique_r);
        next_c += unique_c;
        next_r += unique_r;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Blinding

json to_json(const PresentationOrder& o) {
    return {{"event_id", o.event_id}, {"annotator", o.annotator}, {"slots", o.slots}};
}

PresentationOrder order_from_json(const json& j) {
    return {j.at("event_id").get<std::string>(), j.at("annotator").get<std::string>(),
            j.at("slots").get<std::vector<std::string>>()};
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string mask_identifiers(std::string text, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
        if (id.empty()) continue;
        const std::string needle = lower(id);
        std::string hay = lower(text);
        std::size_t pos = hay.find(needle);
        while (pos != std::string::npos) {
            text.replace(pos, id.size(), "[model]");
            hay.replace(pos, id.size(), "[model]");
            pos = hay.find(needle, pos + 7);
        }
    }
    return text;
}

}  // namespace

BlindTask blind_presentation(const ErrorEvent& event, const ResponseSet& responses,
                             const std::vector<std::string>& endpoints, const std::string& annotator,
                             std::uint64_t seed, Progress progress) {
    std::vector<std::string> slots = endpoints;
    std::sort(slots.begin(), slots.end());
    for (const auto& ep : slots)
        if (!responses.count(ep))
            throw ValidationError("event " + event.event_id + " has no response from one of the candidates");
    Rng rng(key_hash(seed, {"order", annotator, event.event_id}));
    rng.shuffle(slots);

    json items = json::array();
    for (std::size_t i = 0; i < slots.size(); ++i)
        items.push_back({{"position", i + 1}, {"text", mask_identifiers(responses.at(slots[i]), endpoints)}});

    json payload = {{"event_id", event.event_id},
                    {"phase", to_string(event.phase)},
                    {"source_code", event.source_code},
                    {"original_error", render_original_error(event)}};
    if (event.runtime)
        payload["runtime"] = {{"call_stack", render_call_stack(*event.runtime)},
                              {"variables", render_variables(*event.runtime)}};
    payload["responses"] = std::move(items);
    payload["progress"] = {{"done", progress.done}, {"total", progress.total}};
    return {std::move(payload), {event.event_id, annotator, std::move(slots)}};
}

// ---------------------------------------------------------------------------
// Submissions

Submission submission_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("body", "submission must be a JSON object");
    Submission s;
    if (!j.contains("annotator") || !j["annotator"].is_string()) throw SchemaError("annotator", "annotator is required");
    if (!j.contains("event_id") || !j["event_id"].is_string()) throw SchemaError("event_id", "event_id is required");
    s.annotator = j["annotator"].get<std::string>();
    s.event_id = j["event_id"].get<std::string>();
    if (j.contains("draft")) {
        if (!j["draft"].is_boolean()) throw SchemaError("draft", "draft must be a boolean");
        s.draft = j["draft"].get<bool>();
    }
    if (j.contains("scores")) {
        if (!j["scores"].is_array()) throw SchemaError("scores", "scores must be an array, one object per slot");
        for (const auto& slot : j["scores"]) {
            std::map<std::string, int> m;
            if (slot.is_object()) {
                for (auto it = slot.begin(); it != slot.end(); ++it) {
                    if (!it.value().is_number_integer())
                        throw SchemaError("scores", "score '" + it.key() + "' must be an integer");
                    m[it.key()] = it.value().get<int>();
                }
            } else if (!slot.is_null()) {
                throw SchemaError("scores", "each slot's scores must be an object");
            }
            s.scores.push_back(std::move(m));
        }
    }
    if (j.contains("ranking")) {
        if (!j["ranking"].is_array()) throw SchemaError("ranking", "ranking must be an array of ranks");
        for (const auto& r : j["ranking"]) {
            if (!r.is_number_integer()) throw SchemaError("ranking", "ranks must be integers");
            s.ranking.push_back(r.get<int>());
        }
    }
    return s;
}

json to_json(const Submission& s) {
    json scores = json::array();
    for (const auto& slot : s.scores) {
        json o = json::object();
        for (const auto& [k, v] : slot) o[k] = v;
        scores.push_back(std::move(o));
    }
    return {{"annotator", s.annotator}, {"event_id", s.event_id}, {"draft", s.draft},
            {"scores", scores},         {"ranking", s.ranking}};
}

void validate_submission(const Submission& s, std::size_t m) {
    std::vector<std::string> problems;
    if (s.scores.size() != m)
        problems.push_back("expected scores for " + std::to_string(m) + " slots, got " +
                           std::to_string(s.scores.size()));
    for (std::size_t i = 0; i < std::min(m, s.scores.size()); ++i) {
        const auto& slot = s.scores[i];
        std::string missing;
        for (const auto& c : judging::rubric()) {
            auto it = slot.find(std::string(c.key));
            if (it == slot.end()) missing += (missing.empty() ? "" : ",") + std::string(c.key);
            else if (it->second != 0 && it->second != 1)
                problems.push_back("slot " + std::to_string(i + 1) + ": " + std::string(c.key) + " must be 0 or 1");
        }
        if (!missing.empty()) problems.push_back("slot " + std::to_string(i + 1) + " missing: " + missing);
        for (const auto& [k, v] : slot)
            if (!judging::criterion_index(k)) problems.push_back("slot " + std::to_string(i + 1) + ": unknown " + k);
    }
    if (s.ranking.size() != m) {
        problems.push_back("ranking must rank " + std::to_string(m) + " slots, got " +
                           std::to_string(s.ranking.size()));
    } else {
        std::vector<int> seen(m + 1, 0);
        for (int r : s.ranking) {
            if (r < 1 || r > static_cast<int>(m)) problems.push_back("rank " + std::to_string(r) + " out of range");
            else if (seen[r]++) problems.push_back("rank " + std::to_string(r) + " repeated");
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid submission:";
        for (const auto& p : problems) msg += " " + p + ";";
        msg.pop_back();
        throw ValidationError(msg);
    }
}

json to_json(const UnblindedAnnotation& a) {
    json scores = json::object();
    for (const auto& [ep, s] : a.scores) scores[ep] = judging::to_json(s);
    json ranks = json::object();
    for (const auto& [ep, r] : a.ranks) ranks[ep] = r;
    return {{"annotator", a.annotator}, {"event_id", a.event_id}, {"phase", to_string(a.phase)},
            {"shared", a.shared},       {"scores", scores},       {"ranks", ranks}};
}

UnblindedAnnotation unblinded_from_json(const json& j) {
    UnblindedAnnotation a;
    a.annotator = j.at("annotator").get<std::string>();
    a.event_id = j.at("event_id").get<std::string>();
    a.phase = parse_phase(j.at("phase").get<std::string>());
    a.shared = j.value("shared", false);
    for (auto it = j.at("scores").begin(); it != j.at("scores").end(); ++it)
        a.scores[it.key()] = judging::scores_from_json(it.value());
    for (auto it = j.at("ranks").begin(); it != j.at("ranks").end(); ++it) a.ranks[it.key()] = it.value().get<int>();
    return a;
}

std::vector<UnblindedAnnotation> read_annotations(const std::filesystem::path& path) {
    std::vector<UnblindedAnnotation> out;
    for (const auto& row : read_jsonl(path)) out.push_back(unblinded_from_json(row));
    return out;
}

UnblindedAnnotation unblind(const Submission& s, const PresentationOrder& order, Phase phase, bool shared) {
    if (s.event_id != order.event_id || s.annotator != order.annotator)
        throw ValidationError("presentation order belongs to a different task");
    validate_submission(s, order.slots.size());
    UnblindedAnnotation a{s.annotator, s.event_id, phase, shared, {}, {}};
    for (std::size_t i = 0; i < order.slots.size(); ++i) {
        RubricScores rs;
        for (std::size_t c = 0; c < judging::kCriteria; ++c)
            rs.values[c] = static_cast<std::uint8_t>(s.scores[i].at(std::string(judging::rubric()[c].key)));
        a.scores[order.slots[i]] = rs;
        a.ranks[order.slots[i]] = s.ranking[i];
    }
    return a;
}

std::vector<UnblindedAnnotation> dedupe_shared(std::span<const UnblindedAnnotation> annotations, std::uint64_t seed) {
    std::map<std::string, std::vector<const UnblindedAnnotation*>> by_event;
    for (const auto& a : annotations) by_event[a.event_id].push_back(&a);
    std::vector<UnblindedAnnotation> out;
    for (auto& [event_id, group] : by_event) {
        std::sort(group.begin(), group.end(),
                  [](const UnblindedAnnotation* x, const UnblindedAnnotation* y) { return x->annotator < y->annotator; });
        Rng rng(key_hash(seed, {"dedupe", event_id}));
        out.push_back(*group[rng.uniform_below(group.size())]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Campaign and store

Campaign Campaign::assemble(AssignmentPlan plan, std::span<const ErrorEvent> events,
                            std::span<const inference::GenerationRecord> responses, std::uint64_t seed,
                            std::string token) {
    Campaign c;
    c.plan = std::move(plan);
    c.seed = seed;
    c.token = std::move(token);
    std::set<std::string> planned(c.plan.shared_examples.begin(), c.plan.shared_examples.end());
    for (const auto& [a, ids] : c.plan.unique_examples) planned.insert(ids.begin(), ids.end());

    std::set<std::string> endpoints;
    for (const auto& r : responses) {
        endpoints.insert(r.endpoint_id);
        if (planned.count(r.event_id)) c.responses[r.event_id][r.endpoint_id] = r.response_text;
    }
    c.endpoints.assign(endpoints.begin(), endpoints.end());
    if (c.endpoints.empty()) throw ValidationError("no responses to annotate");
    for (const auto& e : events)
        if (planned.count(e.event_id)) c.events[e.event_id] = e;
    for (const auto& id : planned) {
        if (!c.events.count(id)) throw ValidationError("planned event " + id + " is not in the events file");
        const auto& rs = c.responses[id];
        for (const auto& ep : c.endpoints)
            if (!rs.count(ep)) throw ValidationError("planned event " + id + " lacks a response from " + ep);
    }
    return c;
}

AnnotationStore::AnnotationStore(std::filesystem::path log_path) : path_(std::move(log_path)) {
    auto state = std::make_shared<State>();
    for (const auto& row : read_jsonl(path_)) {
        const std::string kind = row.at("kind").get<std::string>();
        if (kind == "order") {
            auto o = order_from_json(row.at("order"));
            state->orders.emplace(std::make_pair(o.annotator, o.event_id), std::move(o));
        } else if (kind == "submission") {
            auto s = submission_from_json(row.at("submission"));
            auto key = std::make_pair(s.annotator, s.event_id);
            if (s.draft) state->drafts[key] = std::move(s);
            else state->finals.emplace(key, std::move(s));
        }
    }
    state_ = std::move(state);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    log_ = std::make_unique<JournalWriter>(path_);
}

std::shared_ptr<const AnnotationStore::State> AnnotationStore::snapshot() const {
    std::lock_guard lock(snap_mu_);
    return state_;
}

void AnnotationStore::publish(std::shared_ptr<const State> next) {
    std::lock_guard lock(snap_mu_);
    state_ = std::move(next);
}

PresentationOrder AnnotationStore::ensure_order(const PresentationOrder& order) {
    std::lock_guard lock(write_mu_);
    auto current = snapshot();
    auto key = std::make_pair(order.annotator, order.event_id);
    if (auto it = current->orders.find(key); it != current->orders.end()) return it->second;
    log_->append({{"kind", "order"}, {"order", to_json(order)}});
    auto next = std::make_shared<State>(*current);
    next->orders.emplace(key, order);
    publish(std::move(next));
    return order;
}

void AnnotationStore::record(const Submission& s) {
    std::lock_guard lock(write_mu_);
    auto current = snapshot();
    auto key = std::make_pair(s.annotator, s.event_id);
    if (current->finals.count(key))
        throw ConflictError("annotation for " + s.event_id + " by " + s.annotator + " was already submitted");
    log_->append({{"kind", "submission"}, {"submission", to_json(s)}, {"at", utc_timestamp_now()}});
    auto next = std::make_shared<State>(*current);
    if (s.draft) next->drafts[key] = s;
    else {
        next->finals.emplace(key, s);
        next->drafts.erase(key);
    }
    publish(std::move(next));
}

std::vector<UnblindedAnnotation> export_annotations(const Campaign& campaign, const AnnotationStore::State& state) {
    std::vector<UnblindedAnnotation> out;
    for (const auto& [key, s] : state.finals) {
        auto order_it = state.orders.find(key);
        const auto event_it = campaign.events.find(s.event_id);
        if (event_it == campaign.events.end()) continue;
        PresentationOrder order = order_it != state.orders.end()
                                      ? order_it->second
                                      : blind_presentation(event_it->second, campaign.responses.at(s.event_id),
                                                           campaign.endpoints, s.annotator, campaign.seed)
                                            .order;
        out.push_back(unblind(s, order, event_it->second.phase, campaign.plan.is_shared(s.event_id)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP

AnnotationServer::AnnotationServer(const Campaign& campaign, AnnotationStore& store)
    : campaign_(campaign), store_(store), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

AnnotationServer::~AnnotationServer() = default;

bool AnnotationServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int AnnotationServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool AnnotationServer::serve() { return server_->listen_after_bind(); }

void AnnotationServer::stop() { server_->stop(); }

void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

namespace {

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& message) { reply(res, status, {{"error", message}}); }

Progress progress_of(const Campaign& c, const AnnotationStore::State& state, const std::string& annotator) {
    Progress p;
    for (const auto& id : c.plan.tasks_for(annotator)) {
        ++p.total;
        if (state.finals.count({annotator, id})) ++p.done;
    }
    return p;
}

}  // namespace

void AnnotationServer::install_routes() {
    auto authorized = [this](const httplib::Request& req) {
        if (campaign_.token.empty()) return true;
        std::string given = req.get_header_value("X-Campaign-Token");
        if (given.empty()) given = req.get_param_value("token");
        return given == campaign_.token;
    };

    auto task_payload = [this](const std::string& annotator, const std::string& event_id) {
        const auto& event = campaign_.events.at(event_id);
        auto state = store_.snapshot();
        BlindTask task = blind_presentation(event, campaign_.responses.at(event_id), campaign_.endpoints, annotator,
                                            campaign_.seed, progress_of(campaign_, *state, annotator));
        store_.ensure_order(task.order);
        auto key = std::make_pair(annotator, event_id);
        if (auto it = state->drafts.find(key); it != state->drafts.end()) {
            json draft = to_json(it->second);
            task.payload["draft"] = {{"scores", draft["scores"]}, {"ranking", draft["ranking"]}};
        }
        task.payload["submitted"] = state->finals.count(key) > 0;
        return task.payload;
    };

    server_->Get("/api/campaign", [this, authorized](const httplib::Request& req, httplib::Response& res) {
        if (!authorized(req)) return fail(res, 401, "campaign token required");
        auto state = store_.snapshot();
        json progress = json::object();
        for (const auto& a : campaign_.plan.annotators) {
            Progress p = progress_of(campaign_, *state, a);
            progress[a] = {{"done", p.done}, {"total", p.total}};
        }
        reply(res, 200,
              {{"annotators", campaign_.plan.annotators},
               {"shared_examples", campaign_.plan.shared_examples.size()},
               {"responses_per_example", campaign_.endpoints.size()},
               {"criteria", [] {
                    json arr = json::array();
                    for (const auto& c : judging::rubric())
                        arr.push_back({{"key", c.key}, {"description", c.description}});
                    return arr;
                }()},
               {"progress", progress}});
    });

    server_->Get("/api/tasks/next", [this, authorized, task_payload](const httplib::Request& req,
                                                                     httplib::Response& res) {
        if (!authorized(req)) return fail(res, 401, "campaign token required");
        const std::string annotator = req.get_param_value("annotator");
        if (!campaign_.plan.unique_examples.count(annotator)) return fail(res, 404, "unknown annotator");
        auto state = store_.snapshot();
        for (const auto& id : campaign_.plan.tasks_for(annotator))
            if (!state->finals.count({annotator, id})) return reply(res, 200, task_payload(annotator, id));
        Progress p = progress_of(campaign_, *state, annotator);
        reply(res, 200, {{"complete", true}, {"progress", {{"done", p.done}, {"total", p.total}}}});
    });

    server_->Get(R"(/api/tasks/([^/]+))", [this, authorized, task_payload](const httplib::Request& req,
                                                                          httplib::Response& res) {
        if (!authorized(req)) return fail(res, 401, "campaign token required");
        const std::string event_id = req.matches[1];
        const std::string annotator = req.get_param_value("annotator");
        if (!campaign_.events.count(event_id)) return fail(res, 404, "unknown event");
        if (!campaign_.plan.assigned(annotator, event_id)) return fail(res, 403, "event not assigned to annotator");
        reply(res, 200, task_payload(annotator, event_id));
    });

    server_->Post("/api/annotations", [this, authorized](const httplib::Request& req, httplib::Response& res) {
        if (!authorized(req)) return fail(res, 401, "campaign token required");
        Submission s;
        try {
            s = submission_from_json(json::parse(req.body));
        } catch (const json::exception& e) {
            return fail(res, 400, std::string("malformed JSON: ") + e.what());
        } catch (const SchemaError& e) {
            return fail(res, 400, e.what());
        }
        if (!campaign_.events.count(s.event_id)) return fail(res, 404, "unknown event");
        if (!campaign_.plan.assigned(s.annotator, s.event_id)) return fail(res, 403, "event not assigned to annotator");
        const std::size_t m = campaign_.endpoints.size();
        try {
            if (store_.snapshot()->finals.count({s.annotator, s.event_id}))
                throw ConflictError("annotation already submitted");
            if (s.draft) {
                if (s.scores.size() > m || s.ranking.size() > m) throw ValidationError("draft has more than m slots");
            } else {
                validate_submission(s, m);
            }
            const auto& event = campaign_.events.at(s.event_id);
            store_.ensure_order(
                blind_presentation(event, campaign_.responses.at(s.event_id), campaign_.endpoints, s.annotator,
                                   campaign_.seed)
                    .order);
            store_.record(s);
        } catch (const ConflictError& e) {
            return fail(res, 409, e.what());
        } catch (const ValidationError& e) {
            return fail(res, 422, e.what());
        }
        reply(res, 200, {{"status", s.draft ? "draft saved" : "accepted"}});
    });

    server_->Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
        std::string given = req.get_header_value("X-Campaign-Token");
        if (given.empty()) given = req.get_param_value("token");
        if (campaign_.token.empty() || given != campaign_.token) return fail(res, 401, "campaign token required");
        std::string body;
        for (const auto& a : export_annotations(campaign_, *store_.snapshot())) body += to_json(a).dump() + "\n";
        res.status = 200;
        res.set_content(body, "application/x-ndjson");
    });
}

}  // namespace errlab::annotation
