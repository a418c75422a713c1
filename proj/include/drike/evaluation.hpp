#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drike/answer_match.hpp"
#include "drike/budget.hpp"
#include "drike/corpus.hpp"
#include "drike/demo_selection.hpp"
#include "drike/errors.hpp"
#include "drike/oracle.hpp"
#include "drike/policy.hpp"
#include "drike/prompting.hpp"
#include "drike/training.hpp"

namespace drike {

enum class AblationMode { IKE_All, Rank_All, Rank_50, DR_IKE };

inline const char* to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::IKE_All: return "ike_all";
        case AblationMode::Rank_All: return "rank_all";
        case AblationMode::Rank_50: return "rank_50";
        case AblationMode::DR_IKE: return "dr_ike";
    }
    return "?";
}

inline AblationMode ablation_mode_from(const std::string& name) {
    if (name == "ike_all") return AblationMode::IKE_All;
    if (name == "rank_all") return AblationMode::Rank_All;
    if (name == "rank_50") return AblationMode::Rank_50;
    if (name == "dr_ike") return AblationMode::DR_IKE;
    throw ArgumentError("unknown ablation mode: " + name);
}

struct EditOutcome {
    std::int64_t case_id = 0;
    std::optional<bool> edit_correct;      // nullopt: oracle failed, excluded
    std::vector<bool> paraphrase_results;  // successful queries only
    std::vector<bool> neighborhood_results;
    std::size_t paraphrase_excluded = 0;
    std::size_t probe_excluded = 0;
    std::size_t retains_used = 0;
    std::optional<double> edit_margin;
    std::vector<double> paraphrase_margins;
    double wall_time_s = 0.0;  // oracle round trips only
};

struct RetainStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
    std::map<std::size_t, std::size_t> histogram;
};

struct MetricsReport {
    AblationMode mode = AblationMode::DR_IKE;
    std::size_t record_count = 0;
    double esr = 0.0, pc = 0.0, rr = 0.0, s = 0.0;
    std::size_t edit_n = 0, paraphrase_n = 0, probe_n = 0;  // denominators
    std::optional<double> esm, gsm;
    RetainStats retains;
    double mean_wall_time_s = 0.0;
    std::size_t excluded_edit = 0, excluded_paraphrase = 0, excluded_probe = 0;
    bool pc_macro = false;
};

// Harmonic mean of the three rates; any zero (or vacuous) input pins it to 0.
inline double harmonic_score(double esr, double pc, double rr) {
    if (esr <= 0.0 || pc <= 0.0 || rr <= 0.0) return 0.0;
    return 3.0 / (1.0 / esr + 1.0 / pc + 1.0 / rr);
}

inline std::pair<std::optional<double>, std::optional<double>> magnitude_metrics(
    const std::vector<EditOutcome>& outcomes) {
    double edit_sum = 0.0, para_sum = 0.0;
    std::size_t edit_n = 0, para_n = 0;
    for (const EditOutcome& o : outcomes) {
        if (o.edit_margin) {
            edit_sum += *o.edit_margin;
            ++edit_n;
        }
        for (double m : o.paraphrase_margins) {
            para_sum += m;
            ++para_n;
        }
    }
    return {edit_n ? std::optional<double>(edit_sum / static_cast<double>(edit_n))
                   : std::nullopt,
            para_n ? std::optional<double>(para_sum / static_cast<double>(para_n))
                   : std::nullopt};
}

inline RetainStats retain_budget_stats(const std::vector<EditOutcome>& outcomes) {
    if (outcomes.empty())
        throw ArgumentError("retain_budget_stats: no outcomes");
    RetainStats stats;
    double sum = 0.0;
    for (const EditOutcome& o : outcomes) {
        sum += static_cast<double>(o.retains_used);
        ++stats.histogram[o.retains_used];
    }
    stats.mean = sum / static_cast<double>(outcomes.size());
    double sq = 0.0;
    for (const EditOutcome& o : outcomes) {
        const double d = static_cast<double>(o.retains_used) - stats.mean;
        sq += d * d;
    }
    stats.stddev = std::sqrt(sq / static_cast<double>(outcomes.size()));
    return stats;
}

struct EvalConfig {
    std::size_t pool_size = 16;  // n
    std::size_t copies = 1;
    std::size_t updates = 2;
    bool with_margins = true;
    bool margin_raw = false;  // raw log-prob difference instead of two-way margin
    bool pc_macro = false;    // per-record paraphrase averaging instead of per-prompt
};

struct TranscriptEntry {
    std::int64_t case_id;
    std::string mode;
    std::string kind;  // edit | paraphrase | probe
    std::size_t retains_used;
    std::string query;
    std::string prompt;
    std::string answer;
    bool correct;
};

using TranscriptSink = std::function<void(const TranscriptEntry&)>;

namespace detail {

inline std::vector<std::size_t> mode_selection(AblationMode mode,
                                               const PolicyDistribution& p,
                                               const BudgetController& controller) {
    std::vector<std::size_t> selection;
    switch (mode) {
        case AblationMode::IKE_All:  // KNN order, no ranking
            selection.resize(p.size());
            std::iota(selection.begin(), selection.end(), std::size_t{0});
            break;
        case AblationMode::Rank_All:
            selection = ranked_order(p);
            break;
        case AblationMode::Rank_50: {
            selection = ranked_order(p);
            selection.resize((p.size() + 1) / 2);
            break;
        }
        case AblationMode::DR_IKE: {
            selection = ranked_order(p);
            selection.resize(admitted_count(p, controller));
            break;
        }
    }
    return selection;
}

inline std::optional<double> margin_of(const OracleResponse& response,
                                       const std::string& target_new,
                                       const std::string& target_true, bool raw) {
    if (!raw) return score_margin(response, target_new, target_true);
    if (!response.continuation_scores) return std::nullopt;
    const auto& scores = *response.continuation_scores;
    const auto a = scores.find(target_new);
    const auto b = scores.find(target_true);
    if (a == scores.end() || b == scores.end()) return std::nullopt;
    return a->second - b->second;
}

} // namespace detail

// One record under one ablation mode: pick retains, render once, then ask the
// oracle the edit query, every paraphrase, and every neighborhood probe.
inline EditOutcome evaluate_record(const PreparedRecord& item, const PolicyHead& head,
                                   const BudgetController& controller,
                                   const OracleClient& oracle, AblationMode mode,
                                   const EvalConfig& config,
                                   const TranscriptSink& sink = nullptr) {
    const PolicyDistribution p = softmax_policy(score_candidates(head, item.features));
    const std::vector<std::size_t> selection = detail::mode_selection(mode, p, controller);

    std::vector<Demonstration> demos = item.fixed_demos;
    for (std::size_t idx : selection) demos.push_back(item.pool.candidates[idx]);
    const std::string edit_fact = fact_statement(item.record);

    EditOutcome outcome;
    outcome.case_id = item.record.case_id;
    outcome.retains_used = selection.size();

    const std::vector<std::string> targets{item.record.target_new, item.record.target_true};
    auto ask = [&](const std::string& query, bool want_margin)
        -> std::optional<std::pair<OracleResponse, std::string>> {
        const std::string prompt = render_prompt({demos, edit_fact, query});
        const auto begin = std::chrono::steady_clock::now();
        try {
            OracleResponse response = query_oracle(
                oracle, prompt,
                want_margin && config.with_margins ? targets : std::vector<std::string>{});
            outcome.wall_time_s +=
                std::chrono::duration<double>(std::chrono::steady_clock::now() - begin)
                    .count();
            return std::make_pair(std::move(response), prompt);
        } catch (const OracleUnavailableError&) {
            outcome.wall_time_s +=
                std::chrono::duration<double>(std::chrono::steady_clock::now() - begin)
                    .count();
            return std::nullopt;
        }
    };
    auto log = [&](const std::string& kind, const std::string& query,
                   const std::string& prompt, const std::string& answer, bool correct) {
        if (sink)
            sink({item.record.case_id, to_string(mode), kind, outcome.retains_used, query,
                  prompt, answer, correct});
    };

    if (auto got = ask(item.record.query_prompt, true)) {
        outcome.edit_correct = match_answer(got->first.answer, item.record.target_new);
        outcome.edit_margin = detail::margin_of(got->first, item.record.target_new,
                                                item.record.target_true, config.margin_raw);
        log("edit", item.record.query_prompt, got->second, got->first.answer,
            *outcome.edit_correct);
    }
    for (const std::string& paraphrase : item.record.paraphrase_prompts) {
        if (auto got = ask(paraphrase, true)) {
            const bool correct = match_answer(got->first.answer, item.record.target_new);
            outcome.paraphrase_results.push_back(correct);
            if (auto m = detail::margin_of(got->first, item.record.target_new,
                                           item.record.target_true, config.margin_raw))
                outcome.paraphrase_margins.push_back(*m);
            log("paraphrase", paraphrase, got->second, got->first.answer, correct);
        } else {
            ++outcome.paraphrase_excluded;
        }
    }
    for (const NeighborhoodProbe& probe : item.record.neighborhood_probes) {
        if (auto got = ask(probe.prompt, false)) {
            const bool correct = match_answer(got->first.answer, probe.target_true);
            outcome.neighborhood_results.push_back(correct);
            log("probe", probe.prompt, got->second, got->first.answer, correct);
        } else {
            ++outcome.probe_excluded;
        }
    }
    return outcome;
}

inline MetricsReport aggregate(const std::vector<EditOutcome>& outcomes, AblationMode mode,
                               bool pc_macro = false) {
    MetricsReport report;
    report.mode = mode;
    report.pc_macro = pc_macro;
    report.record_count = outcomes.size();
    std::size_t edit_ok = 0;
    std::size_t para_ok = 0;
    double para_macro_sum = 0.0;
    std::size_t para_macro_n = 0;
    std::size_t probe_ok = 0;
    double wall = 0.0;
    for (const EditOutcome& o : outcomes) {
        if (o.edit_correct) {
            ++report.edit_n;
            if (*o.edit_correct) ++edit_ok;
        } else {
            ++report.excluded_edit;
        }
        report.paraphrase_n += o.paraphrase_results.size();
        report.excluded_paraphrase += o.paraphrase_excluded;
        std::size_t record_para_ok = 0;
        for (bool b : o.paraphrase_results)
            if (b) ++record_para_ok;
        para_ok += record_para_ok;
        if (!o.paraphrase_results.empty()) {
            para_macro_sum += static_cast<double>(record_para_ok) /
                              static_cast<double>(o.paraphrase_results.size());
            ++para_macro_n;
        }
        report.probe_n += o.neighborhood_results.size();
        report.excluded_probe += o.probe_excluded;
        for (bool b : o.neighborhood_results)
            if (b) ++probe_ok;
        wall += o.wall_time_s;
    }
    report.esr = report.edit_n
                     ? static_cast<double>(edit_ok) / static_cast<double>(report.edit_n)
                     : 0.0;
    report.pc = pc_macro ? (para_macro_n ? para_macro_sum / static_cast<double>(para_macro_n)
                                         : 0.0)
                         : (report.paraphrase_n
                                ? static_cast<double>(para_ok) /
                                      static_cast<double>(report.paraphrase_n)
                                : 0.0);
    report.rr = report.probe_n
                    ? static_cast<double>(probe_ok) / static_cast<double>(report.probe_n)
                    : 0.0;
    report.s = harmonic_score(report.esr, report.pc, report.rr);
    std::tie(report.esm, report.gsm) = magnitude_metrics(outcomes);
    if (!outcomes.empty()) {
        report.retains = retain_budget_stats(outcomes);
        report.mean_wall_time_s = wall / static_cast<double>(outcomes.size());
    }
    return report;
}

inline MetricsReport evaluate(const std::vector<PreparedRecord>& prepared,
                              const PolicyHead& head, const BudgetController& controller,
                              const OracleClient& oracle, AblationMode mode,
                              const EvalConfig& config,
                              const TranscriptSink& sink = nullptr) {
    std::vector<EditOutcome> outcomes;
    outcomes.reserve(prepared.size());
    for (const PreparedRecord& item : prepared)
        outcomes.push_back(evaluate_record(item, head, controller, oracle, mode, config, sink));
    return aggregate(outcomes, mode, config.pc_macro);
}

// All four modes over the same prepared records and oracle.
inline std::vector<MetricsReport> run_ablation(const std::vector<PreparedRecord>& prepared,
                                               const PolicyHead& head,
                                               const BudgetController& controller,
                                               const OracleClient& oracle,
                                               const EvalConfig& config,
                                               const TranscriptSink& sink = nullptr) {
    std::vector<MetricsReport> reports;
    for (AblationMode mode : {AblationMode::IKE_All, AblationMode::Rank_All,
                              AblationMode::Rank_50, AblationMode::DR_IKE})
        reports.push_back(evaluate(prepared, head, controller, oracle, mode, config, sink));
    return reports;
}

// Stable report serialization: wall-clock timing lives in a separate document
// so identical runs produce byte-identical report files.
inline nlohmann::ordered_json report_json(const MetricsReport& r) {
    nlohmann::ordered_json doc{{"mode", to_string(r.mode)},
                               {"record_count", r.record_count},
                               {"esr", r.esr},
                               {"pc", r.pc},
                               {"rr", r.rr},
                               {"s", r.s},
                               {"edit_n", r.edit_n},
                               {"paraphrase_n", r.paraphrase_n},
                               {"probe_n", r.probe_n},
                               {"pc_macro", r.pc_macro},
                               {"retain_mean", r.retains.mean},
                               {"retain_std", r.retains.stddev}};
    nlohmann::ordered_json hist = nlohmann::ordered_json::object();
    for (const auto& [count, freq] : r.retains.histogram)
        hist[std::to_string(count)] = freq;
    doc["retain_histogram"] = std::move(hist);
    doc["esm"] = r.esm ? nlohmann::ordered_json(*r.esm) : nlohmann::ordered_json(nullptr);
    doc["gsm"] = r.gsm ? nlohmann::ordered_json(*r.gsm) : nlohmann::ordered_json(nullptr);
    doc["excluded"] = {{"edit", r.excluded_edit},
                       {"paraphrase", r.excluded_paraphrase},
                       {"probe", r.excluded_probe}};
    return doc;
}

inline nlohmann::ordered_json timing_json(const MetricsReport& r) {
    return {{"mode", to_string(r.mode)}, {"mean_wall_time_s", r.mean_wall_time_s}};
}

inline std::string report_table(const std::vector<MetricsReport>& reports) {
    std::string out =
        "mode      records   ESR     PC      RR      S       retains(mean+-std)\n";
    char line[160];
    for (const MetricsReport& r : reports) {
        std::snprintf(line, sizeof line, "%-9s %-9zu %-7.3f %-7.3f %-7.3f %-7.3f %.2f+-%.2f\n",
                      to_string(r.mode), r.record_count, r.esr, r.pc, r.rr, r.s,
                      r.retains.mean, r.retains.stddev);
        out += line;
    }
    return out;
}

inline nlohmann::ordered_json transcript_json(const TranscriptEntry& t) {
    return {{"case_id", t.case_id}, {"mode", t.mode},
            {"kind", t.kind},       {"retains_used", t.retains_used},
            {"query", t.query},     {"prompt", t.prompt},
            {"answer", t.answer},   {"correct", t.correct}};
}

} // namespace drike
