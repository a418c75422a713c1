// Acceptance gate: every release-blocking behavior, one verdict line each.
// Exit status is nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "drike/answer_match.hpp"
#include "drike/budget.hpp"
#include "drike/demo_selection.hpp"
#include "drike/embedding.hpp"
#include "drike/evaluation.hpp"
#include "drike/policy.hpp"
#include "drike/prompting.hpp"
#include "drike/synthetic.hpp"
#include "drike/training.hpp"

using namespace drike;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fixture(const std::string& name) {
    return std::string(DRIKE_FIXTURES_DIR) + "/" + name;
}

// --- 1. harmonic score worked examples -------------------------------------

bool crit_harmonic() {
    const struct {
        double esr, pc, rr, want;
    } rows[] = {{0.89, 0.81, 0.66, 0.775},
                {0.76, 0.67, 0.76, 0.727},
                {0.89, 0.77, 0.70, 0.779}};
    for (const auto& row : rows) {
        const double got = harmonic_score(row.esr, row.pc, row.rr);
        if (std::abs(got - row.want) > 0.001) {
            std::printf("    harmonic(%.2f, %.2f, %.2f) = %.4f, want %.3f\n", row.esr,
                        row.pc, row.rr, got, row.want);
            return false;
        }
    }
    return true;
}

// --- 2. policy gradient vs central finite differences ----------------------

bool crit_gradient() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double eps = 1e-5;
    double max_rel = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t dim = 8 + rng() % 57;         // 8..64
        const std::size_t candidates = 3 + rng() % 6;   // 3..8
        const std::size_t step_count = 1 + rng() % 4;   // 1..4
        std::vector<FeatureVector> features(candidates, FeatureVector(dim));
        for (auto& f : features)
            for (double& x : f) x = unit(rng);
        PolicyHead head = make_policy_head(dim);
        for (double& w : head.weights) w = 0.5 * unit(rng);
        head.bias = 0.5 * unit(rng);

        Trajectory trajectory;
        for (std::size_t t = 0; t < step_count; ++t) {
            TrajectoryStep step;
            for (std::size_t i = 0; i < candidates; ++i)
                if (t % 2 == 0 || i % 2 == 0) step.active.push_back(i);  // full and shrunk
            step.chosen = step.active[rng() % step.active.size()];
            step.probability = 1.0;  // not consulted by the loss
            step.reward = (rng() % 2 == 0) ? 1.0 : -1.0;
            trajectory.steps.push_back(std::move(step));
        }

        const ReinforceGrad grad = reinforce_loss_and_grad(head, trajectory, features);
        const auto slope = [&](double& slot) {
            const double keep = slot;
            slot = keep + eps;
            const double hi = reinforce_loss(head, trajectory, features);
            slot = keep - eps;
            const double lo = reinforce_loss(head, trajectory, features);
            slot = keep;
            return (hi - lo) / (2.0 * eps);
        };
        const auto rel = [](double analytic, double numeric) {
            return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
        };
        for (std::size_t i = 0; i < dim; ++i)
            max_rel = std::max(max_rel, rel(grad.d_weights[i], slope(head.weights[i])));
        max_rel = std::max(max_rel, rel(grad.d_bias, slope(head.bias)));
    }
    std::printf("    max relative error %.2e over 100 configurations\n", max_rel);
    return max_rel <= 1e-4;
}

// --- 3. budget rules -------------------------------------------------------

bool crit_budget() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 24;
        PolicyDistribution p(n);
        double total = 0.0;
        for (double& x : p) {
            x = unit(rng) + 1e-6;
            total += x;
        }
        for (double& x : p) x /= total;
        const std::size_t max_shots = 1 + rng() % 20;
        const double sigma = 0.999 * unit(rng);
        std::size_t above = 0;
        for (double x : p)
            if (x > sigma) ++above;
        std::size_t want = std::min(max_shots, above);
        if (want == 0) want = 1;
        const std::size_t got = admitted_count(p, make_budget_controller(max_shots, sigma));
        if (got != want) {
            std::printf("    admitted_count trial %d: got %zu, brute force %zu\n", trial,
                        got, want);
            return false;
        }
    }

    // Scripted tighten sequences, including a flip at the last position where
    // no candidates remain below it.
    BudgetController controller = make_budget_controller(8);
    controller = tighten_threshold(controller, {0.5, 0.3, 0.2}, 2);
    if (controller.sigma != 0.2) return false;
    controller = tighten_threshold(controller, {0.6, 0.25, 0.15}, 3);  // empty tail
    if (controller.sigma != 0.2) return false;
    controller = tighten_threshold(controller, {0.45, 0.3, 0.15, 0.1}, 1);
    if (controller.sigma != 0.3) return false;
    controller = tighten_threshold(controller, {0.9, 0.1}, 2);  // never decreases
    if (controller.sigma != 0.3) return false;

    // Sigma is monotone non-decreasing across a real training run.
    const auto [records, kb] = generate_synthetic({12, 1, 4, 1, 6, 2, 2, 1}, 5);
    const CorpusSplit split = split_pools(records, 12);
    const HashEmbedder provider(64);
    const SimulatedOracle oracle(kb);
    TrainerConfig config;
    config.epochs = 2;
    config.learning_rate = 1e-3;
    config.train_size = 8;
    config.eval_size = 2;
    config.max_shots = 4;
    config.pool_size = 4;
    config.seed = 3;
    const TrainOutcome run = train(split, config, provider, oracle);
    for (std::size_t i = 1; i < run.sigma_trace.size(); ++i)
        if (run.sigma_trace[i] < run.sigma_trace[i - 1]) {
            std::printf("    sigma decreased at episode %zu\n", i);
            return false;
        }
    return !run.sigma_trace.empty();
}

// --- 4. synthetic end-to-end against an exhaustive-prefix oracle -----------

double exhaustive_prefix_esr(const std::vector<PreparedRecord>& prepared,
                             const OracleClient& oracle) {
    double hits = 0.0;
    for (const PreparedRecord& item : prepared) {
        bool any = false;
        for (std::size_t j = 0; j <= item.pool.size() && !any; ++j) {
            PromptSpec spec;
            spec.demonstrations = item.fixed_demos;
            spec.demonstrations.insert(spec.demonstrations.end(),
                                       item.pool.candidates.begin(),
                                       item.pool.candidates.begin() +
                                           static_cast<std::ptrdiff_t>(j));
            spec.edit_fact = fact_statement(item.record);
            spec.query = item.record.query_prompt;
            any = match_answer(query_oracle(oracle, render_prompt(spec)).answer,
                               item.record.target_new);
        }
        if (any) hits += 1.0;
    }
    return hits / static_cast<double>(prepared.size());
}

bool crit_end_to_end() {
    const auto [records, kb] = generate_synthetic({60, 3, 15, 3, 16, 2, 2, 1}, 15);
    const CorpusSplit split = split_pools(records, 60);
    const HashEmbedder provider(256);
    const SimulatedOracle oracle(kb);

    double dr_esr = 0.0, rank_all_esr = 0.0, dr_retains = 0.0, oracle_esr = 0.0;
    for (int seed = 1; seed <= 3; ++seed) {
        TrainerConfig config;
        config.epochs = 5;
        config.learning_rate = 1e-4;
        config.train_size = 50;
        config.eval_size = 10;
        config.max_shots = 8;
        config.pool_size = 12;
        config.seed = static_cast<std::uint64_t>(seed);
        const TrainOutcome run = train(split, config, provider, oracle);

        const RecordSubsets subsets = train_eval_split(split.editable_pool, config);
        const auto prepared =
            prepare_records(subsets.eval, split.demo_pool, config, provider);
        EvalConfig eval_config;
        eval_config.pool_size = config.pool_size;
        const BudgetController controller =
            make_budget_controller(config.max_shots, run.checkpoint.sigma);
        const auto reports = run_ablation(prepared, run.checkpoint.head, controller,
                                          oracle, eval_config);
        dr_esr += reports[3].esr;
        dr_retains += reports[3].retains.mean;
        rank_all_esr += reports[1].esr;
        oracle_esr += exhaustive_prefix_esr(prepared, oracle);
    }
    dr_esr /= 3.0;
    rank_all_esr /= 3.0;
    dr_retains /= 3.0;
    oracle_esr /= 3.0;

    std::printf("    held-out ESR %.3f (exhaustive-prefix oracle %.3f, floor %.3f)\n",
                dr_esr, oracle_esr, 0.85 * oracle_esr);
    std::printf("    retains used %.2f (cap %.1f, pool %d); ranked-all ESR %.3f\n",
                dr_retains, 0.6 * 8, 12, rank_all_esr);
    const bool close_to_oracle = dr_esr >= 0.85 * oracle_esr;
    const bool frugal = dr_retains <= 0.6 * 8;
    const bool ordering = dr_esr >= rank_all_esr && dr_retains < 12.0;
    return close_to_oracle && frugal && ordering;
}

// --- 5. bit-identical repeated runs ----------------------------------------

bool crit_determinism() {
    const auto run_once = [](std::string& checkpoint_dump, std::string& report_dump) {
        const auto [records, kb] = generate_synthetic({12, 1, 4, 1, 6, 2, 2, 1}, 5);
        const CorpusSplit split = split_pools(records, 12);
        const HashEmbedder provider(64);
        const SimulatedOracle oracle(kb);
        TrainerConfig config;
        config.epochs = 2;
        config.learning_rate = 1e-3;
        config.train_size = 8;
        config.eval_size = 2;
        config.max_shots = 4;
        config.pool_size = 4;
        config.seed = 9;
        const TrainOutcome run = train(split, config, provider, oracle);
        checkpoint_dump = checkpoint_json(run.checkpoint).dump();

        const RecordSubsets subsets = train_eval_split(split.editable_pool, config);
        const auto prepared =
            prepare_records(subsets.eval, split.demo_pool, config, provider);
        EvalConfig eval_config;
        eval_config.pool_size = config.pool_size;
        const BudgetController controller =
            make_budget_controller(config.max_shots, run.checkpoint.sigma);
        nlohmann::ordered_json doc = nlohmann::ordered_json::array();
        for (const MetricsReport& report : run_ablation(prepared, run.checkpoint.head,
                                                        controller, oracle, eval_config))
            doc.push_back(report_json(report));
        report_dump = doc.dump();
    };
    std::string checkpoint_a, report_a, checkpoint_b, report_b;
    run_once(checkpoint_a, report_a);
    run_once(checkpoint_b, report_b);
    if (checkpoint_a != checkpoint_b) std::printf("    checkpoints differ\n");
    if (report_a != report_b) std::printf("    reports differ\n");
    return checkpoint_a == checkpoint_b && report_a == report_b;
}

// --- 6. reward-delay robustness --------------------------------------------

bool crit_reward_delay() {
    // Sampled admission is the stochastic policy the REINFORCE update assumes;
    // with it, randomly delayed credit averages out instead of systematically
    // corrupting a fixed greedy ranking, so the two arms should track.
    const auto [records, kb] = generate_synthetic({60, 1, 15, 3, 16, 2, 2, 1}, 15);
    const CorpusSplit split = split_pools(records, 60);
    const HashEmbedder provider(256);
    const SimulatedOracle oracle(kb);

    double mean_esr[2] = {0.0, 0.0};
    for (int seed = 1; seed <= 5; ++seed) {
        TrainerConfig config;
        config.epochs = 5;
        config.learning_rate = 1e-4;
        config.train_size = 50;
        config.eval_size = 10;
        config.max_shots = 8;
        config.pool_size = 12;
        config.selection_mode = SelectionMode::Sampled;
        config.seed = static_cast<std::uint64_t>(seed);
        const RecordSubsets subsets = train_eval_split(split.editable_pool, config);
        const auto prepared =
            prepare_records(subsets.eval, split.demo_pool, config, provider);
        EvalConfig eval_config;
        eval_config.pool_size = config.pool_size;
        for (int arm = 0; arm < 2; ++arm) {
            config.reward_delay_max = arm == 0 ? 0 : 2;
            const TrainOutcome run = train(split, config, provider, oracle);
            const BudgetController controller =
                make_budget_controller(config.max_shots, run.checkpoint.sigma);
            mean_esr[arm] += evaluate(prepared, run.checkpoint.head, controller, oracle,
                                      AblationMode::DR_IKE, eval_config)
                                 .esr;
        }
    }
    mean_esr[0] /= 5.0;
    mean_esr[1] /= 5.0;
    const double diff = std::abs(mean_esr[0] - mean_esr[1]);
    std::printf("    mean ESR %.4f undelayed vs %.4f delayed (|diff| %.4f)\n", mean_esr[0],
                mean_esr[1], diff);
    return diff <= 0.05;
}

// --- 7. prompt golden files and demonstration invariants -------------------

bool demo_matches_source(const Demonstration& demo, const EditRecord& src) {
    if (demo.fact_statement != fact_statement(src)) return false;
    switch (demo.category) {
    case DemoCategory::Copy:
        return demo.demo_query == src.query_prompt && demo.demo_answer == src.target_new;
    case DemoCategory::Update:
        return !src.paraphrase_prompts.empty() &&
               demo.demo_query == src.paraphrase_prompts.front() &&
               demo.demo_answer == src.target_new;
    case DemoCategory::Retain:
        for (const NeighborhoodProbe& probe : src.neighborhood_probes)
            if (probe.prompt == demo.demo_query)
                return demo.demo_answer == probe.target_true;
        return false;
    }
    return false;
}

bool crit_prompts() {
    const std::string fact = "The mother tongue of Danielle Darrieux is English";
    const std::string query = "The mother tongue of Danielle Darrieux is";
    const Demonstration copy{DemoCategory::Copy, fact, query, "English", 77};
    const Demonstration update{DemoCategory::Update, fact,
                               "Where Danielle Darrieux is from, people speak the language of",
                               "English", 77};
    const Demonstration retain{DemoCategory::Retain,
                               "The official religion of Edwin of Northumbria is Islam",
                               "The official religion of Rowan Williams is", "Christianity",
                               78};
    if (render_prompt({{copy, update, retain}, fact, query}) !=
        read_file(fixture("golden_prompt_three.txt"))) {
        std::printf("    three-demonstration prompt drifted from its golden file\n");
        return false;
    }
    if (render_prompt({{}, fact, query}) != read_file(fixture("golden_prompt_zero.txt"))) {
        std::printf("    zero-demonstration prompt drifted from its golden file\n");
        return false;
    }

    // Category invariants over every demonstration emitted for 50 records.
    const auto [records, kb] = generate_synthetic({50, 2, 10, 3, 10, 2, 2, 1}, 21);
    const CorpusSplit split = split_pools(records, 50);
    const HashEmbedder provider(64);
    std::map<std::int64_t, const EditRecord*> by_id;
    for (const EditRecord& rec : split.demo_pool) by_id[rec.case_id] = &rec;
    for (const EditRecord& record : split.editable_pool) {
        const auto fixed = build_fixed_demos(record, split.demo_pool, 1, 2, provider);
        if (fixed.size() != 3 || fixed[0].category != DemoCategory::Copy ||
            fixed[1].category != DemoCategory::Update ||
            fixed[2].category != DemoCategory::Update)
            return false;
        const CandidatePool pool = build_candidate_pool(record, split.demo_pool, 8, provider);
        if (pool.embeddings.size() != pool.size() || pool.similarities.size() != pool.size())
            return false;
        for (std::size_t i = 1; i < pool.size(); ++i)
            if (pool.similarities[i] > pool.similarities[i - 1]) return false;
        std::vector<Demonstration> all = fixed;
        all.insert(all.end(), pool.candidates.begin(), pool.candidates.end());
        for (std::size_t i = 0; i < all.size(); ++i) {
            const Demonstration& demo = all[i];
            if (i >= fixed.size() && demo.category != DemoCategory::Retain) return false;
            if (demo.source_case_id == record.case_id) return false;  // self-exclusion
            const auto found = by_id.find(demo.source_case_id);
            if (found == by_id.end() || !demo_matches_source(demo, *found->second)) {
                std::printf("    record %lld emitted a malformed %s demonstration\n",
                            static_cast<long long>(record.case_id),
                            to_string(demo.category));
                return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------

template <typename Fn>
int run_criterion(int number, const char* name, Fn fn) {
    const auto start = std::chrono::steady_clock::now();
    bool pass = false;
    try {
        pass = fn();
    } catch (const std::exception& e) {
        std::printf("    exception: %s\n", e.what());
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%d] %-54s %s  (%.1fs)\n", number, name, pass ? "PASS" : "FAIL", seconds);
    std::fflush(stdout);
    return pass ? 0 : 1;
}

} // namespace

int main() {
    int failed = 0;
    failed += run_criterion(1, "harmonic score worked examples", crit_harmonic);
    failed += run_criterion(2, "policy gradient matches finite differences", crit_gradient);
    failed += run_criterion(3, "budget rules match brute force; sigma monotone", crit_budget);
    failed += run_criterion(4, "synthetic end-to-end training thresholds", crit_end_to_end);
    failed += run_criterion(5, "identical runs are bit-identical", crit_determinism);
    failed += run_criterion(6, "reward delay leaves ESR stable", crit_reward_delay);
    failed += run_criterion(7, "prompt golden files and category invariants", crit_prompts);
    if (failed) {
        std::printf("%d of 7 criteria FAILED\n", failed);
        return 1;
    }
    std::printf("all 7 criteria passed\n");
    return 0;
}
