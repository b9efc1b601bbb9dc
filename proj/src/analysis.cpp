#include "errlab/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <tuple>

#include "errlab/error.hpp"
#include "errlab/jsonl.hpp"
#include "errlab/rng.hpp"

namespace errlab::analysis {

void RatingsMatrix::add(const std::string& item, const std::string& rater, int value) {
    auto it = std::find(items.begin(), items.end(), item);
    std::size_t i = static_cast<std::size_t>(it - items.begin());
    if (it == items.end()) {
        items.push_back(item);
        ratings.emplace_back();
    }
    ratings[i][rater] = value;
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

AC1Sums ac1_sums(std::span<const int> ones, std::span<const int> raters, Exec exec) {
    const auto n = static_cast<std::ptrdiff_t>(ones.size());
    std::vector<double> agree(ones.size(), 0.0), prevalence(ones.size(), 0.0);
    auto term = [&](std::ptrdiff_t i) {
        const double r = raters[i], r1 = ones[i], r0 = r - r1;
        prevalence[i] = r1 / r;
        if (raters[i] >= 2) agree[i] = (r1 * (r1 - 1) + r0 * (r0 - 1)) / (r * (r - 1));
    };
    if (exec == Exec::serial) {
        for (std::ptrdiff_t i = 0; i < n; ++i) term(i);
    } else {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) term(i);
    }
    AC1Sums s;
    s.n_items = ones.size();
    for (std::size_t i = 0; i < ones.size(); ++i) {
        s.pi_sum += prevalence[i];
        if (raters[i] >= 2) {
            s.pa_sum += agree[i];
            ++s.n_pairable;
        }
    }
    return s;
}

std::vector<std::size_t> win_counts(const RankTable& t, Exec exec) {
    const std::size_t m = t.m;
    std::vector<std::size_t> wins(m * m, 0);
    auto tally = [&](std::size_t r, std::vector<std::size_t>& into) {
        const int* row = t.ranks.data() + r * m;
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = 0; b < m; ++b)
                if (row[a] < row[b]) ++into[a * m + b];
    };
    if (exec == Exec::serial) {
        for (std::size_t r = 0; r < t.n; ++r) tally(r, wins);
        return wins;
    }
    const auto n = static_cast<std::ptrdiff_t>(t.n);
#pragma omp parallel
    {
        std::vector<std::size_t> local(m * m, 0);
#pragma omp for schedule(static)
        for (std::ptrdiff_t r = 0; r < n; ++r) tally(static_cast<std::size_t>(r), local);
#pragma omp critical
        for (std::size_t k = 0; k < local.size(); ++k) wins[k] += local[k];
    }
    return wins;
}

std::vector<std::vector<double>> bootstrap_mean_ranks(const RankTable& t, std::uint64_t seed, std::size_t n_boot,
                                                      Exec exec) {
    std::vector<std::vector<double>> means(t.m, std::vector<double>(n_boot, 0.0));
    if (t.n == 0) return means;
    auto replicate = [&](std::size_t b) {
        Rng rng = Rng::stream(seed, b);
        std::vector<long> sums(t.m, 0);
        for (std::size_t k = 0; k < t.n; ++k) {
            const int* row = t.ranks.data() + rng.uniform_below(t.n) * t.m;
            for (std::size_t e = 0; e < t.m; ++e) sums[e] += row[e];
        }
        for (std::size_t e = 0; e < t.m; ++e) means[e][b] = static_cast<double>(sums[e]) / static_cast<double>(t.n);
    };
    if (exec == Exec::serial) {
        for (std::size_t b = 0; b < n_boot; ++b) replicate(b);
    } else {
        const auto nb = static_cast<std::ptrdiff_t>(n_boot);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t b = 0; b < nb; ++b) replicate(static_cast<std::size_t>(b));
    }
    return means;
}

std::vector<std::size_t> criterion_counts(std::span<const std::size_t> group, std::span<const ScoredResponse> scores,
                                          std::size_t n_groups, Exec exec) {
    constexpr std::size_t W = kCriteria + 2;
    std::vector<std::size_t> counts(n_groups * W, 0);
    auto tally = [&](std::size_t i, std::vector<std::size_t>& into) {
        const auto& s = scores[i].scores;
        std::size_t* row = into.data() + group[i] * W;
        for (std::size_t c = 0; c < kCriteria; ++c) row[c] += s.values[c];
        if (s.all()) ++row[scores[i].phase == Phase::compile ? kCriteria : kCriteria + 1];
    };
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < scores.size(); ++i) tally(i, counts);
        return counts;
    }
    const auto n = static_cast<std::ptrdiff_t>(scores.size());
#pragma omp parallel
    {
        std::vector<std::size_t> local(counts.size(), 0);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) tally(static_cast<std::size_t>(i), local);
#pragma omp critical
        for (std::size_t k = 0; k < local.size(); ++k) counts[k] += local[k];
    }
    return counts;
}

}  // namespace kernels

// ---------------------------------------------------------------------------

AC1Result gwet_ac1(const RatingsMatrix& matrix, Exec exec) {
    if (matrix.items.size() != matrix.ratings.size()) throw ValidationError("ratings matrix rows do not match items");
    std::vector<int> ones(matrix.items.size()), raters(matrix.items.size());
    for (std::size_t i = 0; i < matrix.items.size(); ++i) {
        const auto& row = matrix.ratings[i];
        if (row.empty()) throw ValidationError("item " + matrix.items[i] + " has no ratings");
        for (const auto& [rater, v] : row) {
            if (v != 0 && v != 1)
                throw ValidationError("rating by " + rater + " on item " + matrix.items[i] + " is not binary");
            ones[i] += v;
        }
        raters[i] = static_cast<int>(row.size());
    }
    auto s = kernels::ac1_sums(ones, raters, exec);
    if (s.n_pairable == 0) throw InsufficientDataError("no item has two or more ratings");
    AC1Result r;
    r.n_items = s.n_items;
    r.n_pairable = s.n_pairable;
    r.pa = s.pa_sum / static_cast<double>(s.n_pairable);
    const double pi = s.pi_sum / static_cast<double>(s.n_items);
    r.pe = 2.0 * pi * (1.0 - pi);
    r.ac1 = (r.pa - r.pe) / (1.0 - r.pe);
    return r;
}

std::vector<CriterionRow> criterion_rates(std::span<const ScoredResponse> scores, Exec exec) {
    std::map<std::string, std::size_t> index;
    for (const auto& s : scores) index.emplace(s.endpoint_id, 0);
    std::vector<CriterionRow> rows;
    for (auto& [id, k] : index) {
        k = rows.size();
        rows.push_back({});
        rows.back().endpoint_id = id;
    }
    std::vector<std::size_t> group(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        group[i] = index[scores[i].endpoint_id];
        auto& row = rows[group[i]];
        ++row.n;
        ++(scores[i].phase == Phase::compile ? row.n_compile : row.n_runtime);
    }
    auto counts = kernels::criterion_counts(group, scores, rows.size(), exec);
    constexpr std::size_t W = kCriteria + 2;
    for (std::size_t g = 0; g < rows.size(); ++g) {
        auto& row = rows[g];
        for (std::size_t c = 0; c < kCriteria; ++c)
            row.rate[c] = static_cast<double>(counts[g * W + c]) / static_cast<double>(row.n);
        if (row.n_compile)
            row.all_compile = static_cast<double>(counts[g * W + kCriteria]) / static_cast<double>(row.n_compile);
        if (row.n_runtime)
            row.all_runtime = static_cast<double>(counts[g * W + kCriteria + 1]) / static_cast<double>(row.n_runtime);
    }
    return rows;
}

RankTable make_rank_table(std::span<const RankingRecord> rankings, std::optional<Phase> phase) {
    RankTable t;
    std::set<std::string> all;
    for (const auto& r : rankings)
        for (const auto& [ep, rank] : r.rank) all.insert(ep);
    t.endpoints.assign(all.begin(), all.end());
    t.m = t.endpoints.size();
    for (const auto& r : rankings) {
        if (r.rank.size() != t.m)
            throw ValidationError("ranking of " + r.example_id + " by " + r.rater + " does not rank every endpoint");
        std::vector<bool> used(t.m + 1, false);
        for (const auto& [ep, rank] : r.rank)
            if (rank < 1 || rank > static_cast<int>(t.m) || used[rank])
                throw ValidationError("ranking of " + r.example_id + " by " + r.rater + " is not a strict order");
            else
                used[rank] = true;
        if (phase && r.phase != *phase) continue;
        for (const auto& ep : t.endpoints) t.ranks.push_back(r.rank.at(ep));
        ++t.n;
    }
    return t;
}

WinRates win_rate_matrix(std::span<const RankingRecord> rankings, std::optional<Phase> phase, Exec exec) {
    RankTable t = make_rank_table(rankings, phase);
    auto wins = kernels::win_counts(t, exec);
    WinRates w;
    w.endpoints = t.endpoints;
    w.n_records = t.n;
    w.wins.assign(t.m, std::vector<std::size_t>(t.m, 0));
    w.rate.assign(t.m, std::vector<std::optional<double>>(t.m));
    for (std::size_t a = 0; a < t.m; ++a)
        for (std::size_t b = 0; b < t.m; ++b) {
            w.wins[a][b] = wins[a * t.m + b];
            if (a != b && t.n > 0) w.rate[a][b] = static_cast<double>(wins[a * t.m + b]) / static_cast<double>(t.n);
        }
    return w;
}

double percentile_type7(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InsufficientDataError("percentile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<RankRow> rank_summary(std::span<const RankingRecord> rankings, std::uint64_t seed, std::size_t n_boot,
                                  Exec exec) {
    if (n_boot < 1000) throw ValidationError("n_boot must be at least 1000");
    RankTable t = make_rank_table(rankings);
    std::vector<RankRow> rows(t.m);
    for (std::size_t e = 0; e < t.m; ++e) {
        auto& row = rows[e];
        row.endpoint_id = t.endpoints[e];
        row.n = t.n;
        long sum = 0;
        std::size_t first = 0, last = 0;
        for (std::size_t r = 0; r < t.n; ++r) {
            int rank = t.ranks[r * t.m + e];
            sum += rank;
            first += rank == 1;
            last += rank == static_cast<int>(t.m);
        }
        if (t.n) {
            const double n = static_cast<double>(t.n);
            row.mean_rank = static_cast<double>(sum) / n;
            row.first_place = static_cast<double>(first) / n;
            row.last_place = static_cast<double>(last) / n;
        }
    }
    if (t.n >= 2) {
        auto boot = kernels::bootstrap_mean_ranks(t, seed, n_boot, exec);
        for (std::size_t e = 0; e < t.m; ++e) {
            std::sort(boot[e].begin(), boot[e].end());
            rows[e].ci_low = percentile_type7(boot[e], 0.025);
            rows[e].ci_high = percentile_type7(boot[e], 0.975);
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const RankRow& a, const RankRow& b) {
        if (a.mean_rank != b.mean_rank) return a.mean_rank < b.mean_rank;
        return a.endpoint_id < b.endpoint_id;
    });
    return rows;
}

// ---------------------------------------------------------------------------

AgreementTable expert_llm_agreement(std::span<const ScoredResponse> expert, std::span<const ScoredResponse> ensemble) {
    std::map<std::pair<std::string, std::string>, const ScoredResponse*> llm;
    for (const auto& s : ensemble)
        if (!llm.emplace(std::make_pair(s.event_id, s.endpoint_id), &s).second)
            throw ValidationError("duplicate ensemble result for " + s.event_id + "/" + s.endpoint_id);
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<std::pair<const ScoredResponse*, const ScoredResponse*>> joined;
    AgreementTable out;
    for (const auto& s : expert) {
        auto key = std::make_pair(s.event_id, s.endpoint_id);
        if (!seen.insert(key).second)
            throw ValidationError("duplicate expert scores for " + s.event_id + "/" + s.endpoint_id);
        auto it = llm.find(key);
        if (it == llm.end()) ++out.n_unmatched;
        else joined.emplace_back(&s, it->second);
    }
    if (joined.empty()) throw InsufficientDataError("no expert-scored response has an ensemble result");
    out.n_joined = joined.size();
    for (std::size_t c = 0; c < kCriteria; ++c) {
        RatingsMatrix m;
        m.items.reserve(joined.size());
        for (const auto& [e, l] : joined) {
            m.items.push_back(e->event_id + "\x1f" + e->endpoint_id);
            m.ratings.push_back({{"expert", e->scores.values[c]}, {"ensemble", l->scores.values[c]}});
        }
        out.per_criterion[c] = gwet_ac1(m);
    }
    return out;
}

AgreementTable expert_expert_agreement(std::span<const annotation::UnblindedAnnotation> shared) {
    AgreementTable out;
    std::map<std::pair<std::string, std::string>, std::map<std::string, const RubricScores*>> items;
    for (const auto& a : shared)
        for (const auto& [ep, s] : a.scores) items[{a.event_id, ep}][a.annotator] = &s;
    if (items.empty()) throw InsufficientDataError("no shared annotations");
    out.n_joined = items.size();
    for (std::size_t c = 0; c < kCriteria; ++c) {
        RatingsMatrix m;
        for (const auto& [key, by_rater] : items) {
            m.items.push_back(key.first + "\x1f" + key.second);
            std::map<std::string, int> row;
            for (const auto& [rater, s] : by_rater) row[rater] = s->values[c];
            m.ratings.push_back(std::move(row));
        }
        out.per_criterion[c] = gwet_ac1(m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report

Report analyze(const ReportInputs& in, Exec exec) {
    Report r;
    r.seed = in.seed;
    r.n_boot = in.n_boot;

    std::vector<ScoredResponse> llm;
    for (const auto& e : in.ensembles) {
        if (!e.phase) throw ValidationError("ensemble result " + e.event_id + "/" + e.endpoint_id + " has no phase");
        llm.push_back({e.event_id, e.endpoint_id, *e.phase, e.scores});
    }
    r.llm_rates = criterion_rates(llm, exec);

    std::vector<annotation::UnblindedAnnotation> shared, chosen;
    for (const auto& a : in.annotations) (a.shared ? shared : chosen).push_back(a);
    for (auto& a : annotation::dedupe_shared(shared, in.seed)) chosen.push_back(std::move(a));
    std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) {
        return std::tie(a.event_id, a.annotator) < std::tie(b.event_id, b.annotator);
    });
    r.n_expert_examples = chosen.size();
    if (chosen.empty()) return r;

    std::vector<ScoredResponse> expert;
    std::vector<RankingRecord> rankings;
    for (const auto& a : chosen) {
        for (const auto& [ep, s] : a.scores) expert.push_back({a.event_id, ep, a.phase, s});
        rankings.push_back({a.event_id, a.annotator, a.phase, a.ranks});
    }
    r.expert_rates = criterion_rates(expert, exec);
    r.win_compile = win_rate_matrix(rankings, Phase::compile, exec);
    r.win_runtime = win_rate_matrix(rankings, Phase::runtime, exec);
    r.ranks = rank_summary(rankings, in.seed, in.n_boot, exec);
    try {
        r.expert_expert = expert_expert_agreement(shared);
    } catch (const InsufficientDataError&) {
    }
    if (!llm.empty()) {
        try {
            r.expert_llm = expert_llm_agreement(expert, llm);
        } catch (const InsufficientDataError&) {
        }
    }
    return r;
}

namespace {

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fixed2(const std::optional<double>& v) { return v ? fixed2(*v) : "n/a"; }

std::string full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string full(const std::optional<double>& v) { return v ? full(*v) : ""; }

void criterion_csv(std::ostringstream& out, const std::string& source, const std::vector<CriterionRow>& rows) {
    for (const auto& row : rows) {
        out << source << ',' << row.endpoint_id << ',' << row.n;
        for (double v : row.rate) out << ',' << full(v);
        out << ',' << full(row.all_compile) << ',' << full(row.all_runtime) << '\n';
    }
}

void win_csv(std::ostringstream& out, const char* phase, const WinRates& w) {
    for (std::size_t a = 0; a < w.endpoints.size(); ++a)
        for (std::size_t b = 0; b < w.endpoints.size(); ++b) {
            if (a == b) continue;
            out << phase << ',' << w.endpoints[a] << ',' << w.endpoints[b] << ',' << w.wins[a][b] << ','
                << w.n_records << ',' << full(w.rate[a][b]) << '\n';
        }
}

void agreement_csv(std::ostringstream& out, const char* label, const std::optional<AgreementTable>& t) {
    if (!t) return;
    for (std::size_t c = 0; c < kCriteria; ++c) {
        const auto& r = t->per_criterion[c];
        out << label << ',' << judging::rubric()[c].key << ',' << full(r.ac1) << ',' << full(r.pa) << ','
            << full(r.pe) << ',' << r.n_items << ',' << r.n_pairable << '\n';
    }
}

std::string criterion_header() {
    std::string h = "| Model | Source |";
    for (const auto& c : judging::rubric()) h += " " + std::string(c.key) + " |";
    h += " all (compile) | all (runtime) |\n|---|---|";
    for (std::size_t c = 0; c < kCriteria + 2; ++c) h += "---|";
    return h + "\n";
}

}  // namespace

std::string render_markdown(const Report& r) {
    std::ostringstream md;
    md << "# Evaluation report\n\n";
    md << "Seed " << r.seed << ", " << r.n_boot << " bootstrap replicates, " << r.n_expert_examples
       << " expert-annotated examples after shared-subset dedupe.\n\n";

    md << "## Table 1. Win rates (compile / runtime)\n\n";
    md << "Cell (row, column) is the fraction of examples where the row model was ranked above the column model.\n\n";
    const auto& eps = r.win_compile.endpoints.empty() ? r.win_runtime.endpoints : r.win_compile.endpoints;
    if (eps.empty()) {
        md << "No expert rankings.\n\n";
    } else {
        md << "| Model |";
        for (const auto& e : eps) md << ' ' << e << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < eps.size(); ++i) md << "---|";
        md << '\n';
        auto cell = [](const WinRates& w, std::size_t a, std::size_t b) {
            return w.rate.empty() ? std::string("n/a") : fixed2(w.rate[a][b]);
        };
        for (std::size_t a = 0; a < eps.size(); ++a) {
            md << "| " << eps[a] << " |";
            for (std::size_t b = 0; b < eps.size(); ++b) {
                if (a == b) md << "  |";
                else md << ' ' << cell(r.win_compile, a, b) << " / " << cell(r.win_runtime, a, b) << " |";
            }
            md << '\n';
        }
        md << "\nRecords: " << r.win_compile.n_records << " compile, " << r.win_runtime.n_records << " runtime.\n\n";
    }

    md << "## Table 2. Expert ranking scores by model\n\n";
    if (r.ranks.empty()) {
        md << "No expert rankings.\n\n";
    } else {
        md << "| Model | Mean Rank | 95% CI | First Place | Last Place |\n|---|---|---|---|---|\n";
        for (const auto& row : r.ranks) {
            md << "| " << row.endpoint_id << " | " << fixed2(row.mean_rank) << " | ";
            if (row.ci_low) md << fixed2(*row.ci_low) << '-' << fixed2(*row.ci_high);
            else md << "n/a";
            md << " | " << fixed2(row.first_place) << " | " << fixed2(row.last_place) << " |\n";
        }
        md << '\n';
    }

    md << "## Table 3. Criterion true-rates\n\n";
    md << "The all columns report the rate of responses satisfying every criterion, per phase.\n\n";
    md << criterion_header();
    std::map<std::string, std::pair<const CriterionRow*, const CriterionRow*>> by_ep;
    for (const auto& row : r.expert_rates) by_ep[row.endpoint_id].first = &row;
    for (const auto& row : r.llm_rates) by_ep[row.endpoint_id].second = &row;
    auto row_md = [&](const std::string& ep, const char* source, const CriterionRow* row) {
        if (!row) return;
        md << "| " << ep << " | " << source << " |";
        for (double v : row->rate) md << ' ' << fixed2(v) << " |";
        md << ' ' << fixed2(row->all_compile) << " | " << fixed2(row->all_runtime) << " |\n";
    };
    for (const auto& [ep, pair] : by_ep) {
        row_md(ep, "Expert", pair.first);
        row_md(ep, "LLM", pair.second);
    }
    auto ac1_md = [&](const char* label, const std::optional<AgreementTable>& t) {
        md << "| Gwet's AC1 | " << label << " |";
        for (std::size_t c = 0; c < kCriteria; ++c) md << ' ' << (t ? fixed2(t->per_criterion[c].ac1) : "n/a") << " |";
        md << "  |  |\n";
    };
    ac1_md("Expert/Expert", r.expert_expert);
    ac1_md("Expert/LLM", r.expert_llm);
    return md.str();
}

void write_report(const Report& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::ostringstream rates;
    rates << "source,endpoint_id,n";
    for (const auto& c : judging::rubric()) rates << ',' << c.key;
    rates << ",all_compile,all_runtime\n";
    criterion_csv(rates, "expert", r.expert_rates);
    criterion_csv(rates, "llm", r.llm_rates);
    write_file_atomic(dir / "criterion_rates.csv", rates.str());

    std::ostringstream wins;
    wins << "phase,a,b,wins,n,rate\n";
    win_csv(wins, "compile", r.win_compile);
    win_csv(wins, "runtime", r.win_runtime);
    write_file_atomic(dir / "win_rates.csv", wins.str());

    std::ostringstream ranks;
    ranks << "endpoint_id,n,mean_rank,ci_low,ci_high,first_place,last_place\n";
    for (const auto& row : r.ranks)
        ranks << row.endpoint_id << ',' << row.n << ',' << full(row.mean_rank) << ',' << full(row.ci_low) << ','
              << full(row.ci_high) << ',' << full(row.first_place) << ',' << full(row.last_place) << '\n';
    write_file_atomic(dir / "rank_summary.csv", ranks.str());

    std::ostringstream agree;
    agree << "comparison,criterion,ac1,pa,pe,n_items,n_pairable\n";
    agreement_csv(agree, "expert_expert", r.expert_expert);
    agreement_csv(agree, "expert_llm", r.expert_llm);
    write_file_atomic(dir / "agreement.csv", agree.str());

    write_file_atomic(dir / "report.md", render_markdown(r));
}

}  // namespace errlab::analysis
