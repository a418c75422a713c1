#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drike/answer_match.hpp"
#include "drike/budget.hpp"
#include "drike/corpus.hpp"
#include "drike/demo_selection.hpp"
#include "drike/embedding.hpp"
#include "drike/errors.hpp"
#include "drike/oracle.hpp"
#include "drike/policy.hpp"
#include "drike/prompting.hpp"

namespace drike {

enum class SelectionMode { Ranked, Sampled };

inline const char* to_string(SelectionMode mode) {
    return mode == SelectionMode::Ranked ? "ranked" : "sampled";
}

inline SelectionMode selection_mode_from(const std::string& name) {
    if (name == "ranked") return SelectionMode::Ranked;
    if (name == "sampled") return SelectionMode::Sampled;
    throw ArgumentError("unknown selection mode: " + name);
}

struct TrainerConfig {
    int epochs = 5;
    double learning_rate = 1e-4;
    std::size_t train_size = 300;
    std::size_t eval_size = 100;
    std::size_t max_shots = 16;  // K
    std::size_t pool_size = 16;  // n
    std::size_t copies = 1;
    std::size_t updates = 2;
    SelectionMode selection_mode = SelectionMode::Ranked;
    int reward_delay_max = 0;
    std::uint64_t seed = 0;
};

inline void validate(const TrainerConfig& config) {
    if (config.epochs < 1)
        throw ArgumentError("trainer: epochs must be >= 1");
    if (!(config.learning_rate > 0.0))
        throw ArgumentError("trainer: learning_rate must be > 0");
    if (config.train_size < 1)
        throw ArgumentError("trainer: train_size must be >= 1");
    if (config.max_shots < 1 || config.pool_size < 1)
        throw ArgumentError("trainer: max_shots and pool_size must be >= 1");
    if (config.copies < 1)
        throw ArgumentError("trainer: copies must be >= 1");
    if (config.reward_delay_max < 0)
        throw ArgumentError("trainer: reward_delay_max must be >= 0");
}

inline nlohmann::ordered_json config_json(const TrainerConfig& c) {
    return {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"train_size", c.train_size},
            {"eval_size", c.eval_size},
            {"max_shots", c.max_shots},
            {"pool_size", c.pool_size},
            {"copies", c.copies},
            {"updates", c.updates},
            {"selection_mode", to_string(c.selection_mode)},
            {"reward_delay_max", c.reward_delay_max},
            {"seed", c.seed}};
}

inline TrainerConfig config_from_json(const nlohmann::json& j) {
    TrainerConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.train_size = j.at("train_size").get<std::size_t>();
    c.eval_size = j.at("eval_size").get<std::size_t>();
    c.max_shots = j.at("max_shots").get<std::size_t>();
    c.pool_size = j.at("pool_size").get<std::size_t>();
    c.copies = j.at("copies").get<std::size_t>();
    c.updates = j.at("updates").get<std::size_t>();
    c.selection_mode = selection_mode_from(j.at("selection_mode").get<std::string>());
    c.reward_delay_max = j.at("reward_delay_max").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline std::string config_digest(const TrainerConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(config_json(c).dump())));
    return buf;
}

// Seeded shuffle, then prefix split into train and eval subsets. Hand-rolled
// Fisher-Yates so the permutation is identical across standard libraries.
struct RecordSubsets {
    std::vector<EditRecord> train;
    std::vector<EditRecord> eval;
};

inline RecordSubsets train_eval_split(const std::vector<EditRecord>& editable,
                                      const TrainerConfig& config) {
    if (config.train_size + config.eval_size > editable.size())
        throw ArgumentError("train_size + eval_size = " +
                            std::to_string(config.train_size + config.eval_size) +
                            " exceeds editable pool of " + std::to_string(editable.size()));
    std::vector<std::size_t> order(editable.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_draw(rng) * static_cast<double>(i));
        std::swap(order[i - 1], order[j < i ? j : i - 1]);
    }
    RecordSubsets subsets;
    for (std::size_t i = 0; i < config.train_size; ++i)
        subsets.train.push_back(editable[order[i]]);
    for (std::size_t i = 0; i < config.eval_size; ++i)
        subsets.eval.push_back(editable[order[config.train_size + i]]);
    return subsets;
}

// r = +1 iff the oracle's answer matches the edited target, else -1.
inline int step_reward(const OracleResponse& response, const std::string& target_new) {
    return match_answer(response.answer, target_new) ? 1 : -1;
}

// Credit each reward to a step uniformly delayed by [0, max_delay], clamped
// to the episode end. Identity (rng untouched) when max_delay is 0.
inline std::vector<double> apply_reward_delay(const std::vector<int>& rewards, int max_delay,
                                              std::mt19937_64& rng) {
    std::vector<double> credits(rewards.size(), 0.0);
    if (max_delay <= 0) {
        for (std::size_t t = 0; t < rewards.size(); ++t)
            credits[t] = static_cast<double>(rewards[t]);
        return credits;
    }
    for (std::size_t t = 0; t < rewards.size(); ++t) {
        auto offset = static_cast<std::size_t>(uniform_draw(rng) *
                                               static_cast<double>(max_delay + 1));
        offset = std::min<std::size_t>(offset, static_cast<std::size_t>(max_delay));
        credits[std::min(t + offset, rewards.size() - 1)] += static_cast<double>(rewards[t]);
    }
    return credits;
}

inline std::vector<FeatureVector> pool_features(const EmbeddingVector& query_embedding,
                                                const CandidatePool& pool) {
    std::vector<FeatureVector> features;
    features.reserve(pool.size());
    for (const EmbeddingVector& e : pool.embeddings)
        features.push_back(pair_features(query_embedding, e));
    return features;
}

struct EpisodeContext {
    const EditRecord& record;
    const std::vector<Demonstration>& fixed_demos;
    const CandidatePool& pool;
    const std::vector<FeatureVector>& features;
};

struct EpisodeResult {
    Trajectory trajectory;  // immediate rewards
    BudgetController controller;
    std::vector<std::size_t> selection;  // pool indices in admission order
};

// One edit's episode: admit k retains one at a time, query the oracle after
// each addition, and tighten sigma on a success->failure flip. The loop always
// runs its full k steps; a flip changes later episodes, not this one.
inline EpisodeResult run_episode(const EpisodeContext& ctx, const PolicyHead& head,
                                 BudgetController controller, const OracleClient& oracle,
                                 const TrainerConfig& config, std::mt19937_64& rng) {
    const PolicyDistribution p = softmax_policy(score_candidates(head, ctx.features));
    const std::size_t k = admitted_count(p, controller);
    const std::vector<std::size_t> full_order = ranked_order(p);

    EpisodeResult result;
    result.controller = controller;
    std::vector<std::size_t> remaining = full_order;  // sampled mode consumes this
    std::vector<Demonstration> demos = ctx.fixed_demos;
    const std::string edit_fact = fact_statement(ctx.record);
    int prev_reward = 0;

    for (std::size_t j = 1; j <= k; ++j) {
        TrajectoryStep step;
        if (config.selection_mode == SelectionMode::Ranked) {
            step.chosen = full_order[j - 1];
            step.probability = p[step.chosen];
            step.active.resize(p.size());
            std::iota(step.active.begin(), step.active.end(), std::size_t{0});
        } else {
            std::vector<double> rem_scores;
            rem_scores.reserve(remaining.size());
            for (std::size_t idx : remaining) rem_scores.push_back(std::log(p[idx]));
            const PolicyDistribution rem_p = softmax_policy(rem_scores);
            const std::size_t pick = sample_action(rem_p, rng);
            step.chosen = remaining[pick];
            step.probability = rem_p[pick];
            step.active = remaining;
            remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        result.selection.push_back(step.chosen);
        demos.push_back(ctx.pool.candidates[step.chosen]);

        const std::string prompt =
            render_prompt({demos, edit_fact, ctx.record.query_prompt});
        const int reward = step_reward(query_oracle(oracle, prompt), ctx.record.target_new);
        step.reward = static_cast<double>(reward);
        result.trajectory.steps.push_back(std::move(step));

        if (j > 1 && prev_reward == 1 && reward == -1) {
            // Position sequence for the tightening rule: what was admitted, in
            // admission order, then everything else by descending probability.
            std::vector<double> seq;
            seq.reserve(p.size());
            for (std::size_t idx : result.selection) seq.push_back(p[idx]);
            std::vector<double> tail;
            for (std::size_t idx : full_order)
                if (std::find(result.selection.begin(), result.selection.end(), idx) ==
                    result.selection.end())
                    tail.push_back(p[idx]);
            std::sort(tail.begin(), tail.end(), std::greater<>());
            seq.insert(seq.end(), tail.begin(), tail.end());
            result.controller = tighten_threshold(result.controller, seq, j);
        }
        prev_reward = reward;
    }
    return result;
}

struct Checkpoint {
    int version = 1;
    TrainerConfig config;
    int epoch = 0;  // completed epochs
    PolicyHead head;
    double sigma = 0.0;
    std::string rng_state;
};

inline nlohmann::ordered_json checkpoint_json(const Checkpoint& ck) {
    return {{"version", ck.version},
            {"config", config_json(ck.config)},
            {"config_digest", config_digest(ck.config)},
            {"epoch", ck.epoch},
            {"sigma", ck.sigma},
            {"weights", ck.head.weights},
            {"bias", ck.head.bias},
            {"optimizer",
             {{"m_weights", ck.head.optimizer.m_weights},
              {"v_weights", ck.head.optimizer.v_weights},
              {"m_bias", ck.head.optimizer.m_bias},
              {"v_bias", ck.head.optimizer.v_bias},
              {"step", ck.head.optimizer.step}}},
            {"rng_state", ck.rng_state}};
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ArgumentError("cannot write checkpoint " + path);
    out << checkpoint_json(ck).dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open checkpoint " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    try {
        Checkpoint ck;
        ck.version = doc.at("version").get<int>();
        if (ck.version != 1)
            throw SchemaError(path + ": unsupported checkpoint version " +
                              std::to_string(ck.version));
        ck.config = config_from_json(doc.at("config"));
        if (doc.at("config_digest").get<std::string>() != config_digest(ck.config))
            throw SchemaError(path + ": config digest does not match stored config");
        ck.epoch = doc.at("epoch").get<int>();
        ck.sigma = doc.at("sigma").get<double>();
        ck.head.weights = doc.at("weights").get<std::vector<double>>();
        ck.head.bias = doc.at("bias").get<double>();
        const auto& opt = doc.at("optimizer");
        ck.head.optimizer.m_weights = opt.at("m_weights").get<std::vector<double>>();
        ck.head.optimizer.v_weights = opt.at("v_weights").get<std::vector<double>>();
        ck.head.optimizer.m_bias = opt.at("m_bias").get<double>();
        ck.head.optimizer.v_bias = opt.at("v_bias").get<double>();
        ck.head.optimizer.step = opt.at("step").get<std::int64_t>();
        ck.rng_state = doc.at("rng_state").get<std::string>();
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

inline std::string rng_state_string(const std::mt19937_64& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

inline std::mt19937_64 rng_from_state(const std::string& state) {
    std::mt19937_64 rng;
    std::istringstream in(state);
    in >> rng;
    if (in.fail())
        throw ParseError("malformed rng state in checkpoint");
    return rng;
}

struct TrainOutcome {
    Checkpoint checkpoint;
    std::vector<double> sigma_trace;  // per episode, non-decreasing
    std::size_t episodes = 0;
    std::size_t oracle_calls = 0;
};

// Per-record episode inputs are pure in (record, demo_pool, provider, config),
// so they are built once and reused across epochs.
struct PreparedRecord {
    EditRecord record;
    std::vector<Demonstration> fixed_demos;
    CandidatePool pool;
    std::vector<FeatureVector> features;
};

inline std::vector<PreparedRecord> prepare_records(const std::vector<EditRecord>& records,
                                                   const std::vector<EditRecord>& demo_pool,
                                                   const TrainerConfig& config,
                                                   const EmbeddingProvider& provider) {
    std::vector<PreparedRecord> prepared;
    prepared.reserve(records.size());
    for (const EditRecord& record : records) {
        PreparedRecord item{record,
                            build_fixed_demos(record, demo_pool, config.copies,
                                              config.updates, provider),
                            build_candidate_pool(record, demo_pool, config.pool_size,
                                                 provider),
                            {}};
        item.features =
            pool_features(embed_text(provider, record.query_prompt), item.pool);
        prepared.push_back(std::move(item));
    }
    return prepared;
}

// Epoch loop over the seeded train subset: one episode and exactly one Adam
// update per record, sigma shared across the whole run. A checkpoint lands at
// every epoch end, so a mid-epoch failure resumes from the last full epoch.
inline TrainOutcome train(const CorpusSplit& split, const TrainerConfig& config,
                          const EmbeddingProvider& provider, const OracleClient& oracle,
                          const std::string& checkpoint_dir = "",
                          const Checkpoint* resume = nullptr) {
    validate(config);
    const CachingProvider cache(provider);
    const RecordSubsets subsets = train_eval_split(split.editable_pool, config);
    const std::vector<PreparedRecord> prepared =
        prepare_records(subsets.train, split.demo_pool, config, cache);

    PolicyHead head = make_policy_head(4 * cache.dimension());
    BudgetController controller = make_budget_controller(config.max_shots);
    std::mt19937_64 rng(detail::splitmix64(config.seed));
    int start_epoch = 0;
    if (resume) {
        if (config_digest(resume->config) != config_digest(config))
            throw ArgumentError("resume checkpoint was trained under a different config");
        head = resume->head;
        controller.sigma = resume->sigma;
        rng = rng_from_state(resume->rng_state);
        start_epoch = resume->epoch;
    }

    TrainOutcome outcome;
    for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
        for (const PreparedRecord& item : prepared) {
            EpisodeResult episode =
                run_episode({item.record, item.fixed_demos, item.pool, item.features}, head,
                            controller, oracle, config, rng);
            if (episode.controller.sigma < controller.sigma)
                throw NumericError("sigma decreased during training");
            controller = episode.controller;
            outcome.sigma_trace.push_back(controller.sigma);
            ++outcome.episodes;
            outcome.oracle_calls += episode.trajectory.length();

            std::vector<int> immediate;
            immediate.reserve(episode.trajectory.length());
            for (const TrajectoryStep& step : episode.trajectory.steps)
                immediate.push_back(static_cast<int>(step.reward));
            const std::vector<double> credits =
                apply_reward_delay(immediate, config.reward_delay_max, rng);
            for (std::size_t t = 0; t < credits.size(); ++t)
                episode.trajectory.steps[t].reward = credits[t];
            head = reinforce_update(std::move(head), episode.trajectory, item.features,
                                    config.learning_rate);
        }
        outcome.checkpoint = {1, config, epoch, head, controller.sigma,
                              rng_state_string(rng)};
        if (!checkpoint_dir.empty()) {
            std::filesystem::create_directories(checkpoint_dir);
            save_checkpoint(checkpoint_dir + "/checkpoint.json", outcome.checkpoint);
        }
    }
    if (outcome.checkpoint.epoch == 0)  // resume at final epoch: nothing to run
        outcome.checkpoint = {1, config, start_epoch, head, controller.sigma,
                              rng_state_string(rng)};
    return outcome;
}

} // namespace drike
