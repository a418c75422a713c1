#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "drike/synthetic.hpp"
#include "drike/training.hpp"

#include "test_support.hpp"

using namespace drike;
using testsup::topic_record;

namespace {

Demonstration retain_demo(const EditRecord& src) {
    const auto& probe = src.neighborhood_probes.front();
    return {DemoCategory::Retain, fact_statement(src), probe.prompt, probe.target_true,
            src.case_id};
}

// Hand-assembled candidate pool over the given source records; embeddings
// only matter through pair features, so hashed ones are fine.
struct EpisodeFixture {
    HashEmbedder provider{64};
    EditRecord record;
    std::vector<Demonstration> no_fixed_demos;
    CandidatePool pool;
    std::vector<FeatureVector> features;

    EpisodeFixture(EditRecord rec, const std::vector<EditRecord>& sources)
        : record(std::move(rec)) {
        for (const auto& src : sources) {
            pool.candidates.push_back(retain_demo(src));
            pool.embeddings.push_back(embed_text(provider, src.query_prompt));
            pool.similarities.push_back(0.0);
        }
        features = pool_features(embed_text(provider, record.query_prompt), pool);
    }

    EpisodeContext context() const { return {record, no_fixed_demos, pool, features}; }
};

struct TrainSetup {
    std::vector<EditRecord> records;
    SimulatedKB kb;
    CorpusSplit split;
    HashEmbedder provider{64};
    TrainerConfig config;

    TrainSetup() {
        auto generated = generate_synthetic({8, 1, 4, 1, 4, 2, 2, 1}, 3);
        records = std::move(generated.first);
        kb = std::move(generated.second);
        split = split_pools(records, 8);
        config.epochs = 2;
        config.learning_rate = 1e-3;
        config.train_size = 6;
        config.eval_size = 2;
        config.max_shots = 4;
        config.pool_size = 4;
        config.updates = 2;
        config.seed = 5;
    }
};

} // namespace

TEST_CASE("trainer config survives a json round trip and digests are sensitive") {
    TrainerConfig config;
    config.epochs = 3;
    config.learning_rate = 5e-4;
    config.selection_mode = SelectionMode::Sampled;
    config.reward_delay_max = 2;
    config.seed = 99;

    const TrainerConfig back = config_from_json(config_json(config));
    CHECK(config_json(back) == config_json(config));
    CHECK(config_digest(back) == config_digest(config));

    TrainerConfig other = config;
    other.seed = 100;
    CHECK(config_digest(other) != config_digest(config));
    other = config;
    other.learning_rate = 6e-4;
    CHECK(config_digest(other) != config_digest(config));

    CHECK_THROWS_AS(selection_mode_from("greedy"), ArgumentError);
}

TEST_CASE("trainer config validation") {
    TrainerConfig config;
    SECTION("valid defaults pass") { CHECK_NOTHROW(validate(config)); }
    SECTION("epochs") { config.epochs = 0; CHECK_THROWS_AS(validate(config), ArgumentError); }
    SECTION("learning rate") {
        config.learning_rate = 0.0;
        CHECK_THROWS_AS(validate(config), ArgumentError);
    }
    SECTION("train size") {
        config.train_size = 0;
        CHECK_THROWS_AS(validate(config), ArgumentError);
    }
    SECTION("shots") { config.max_shots = 0; CHECK_THROWS_AS(validate(config), ArgumentError); }
    SECTION("pool") { config.pool_size = 0; CHECK_THROWS_AS(validate(config), ArgumentError); }
    SECTION("copies") { config.copies = 0; CHECK_THROWS_AS(validate(config), ArgumentError); }
    SECTION("delay") {
        config.reward_delay_max = -1;
        CHECK_THROWS_AS(validate(config), ArgumentError);
    }
}

TEST_CASE("the train/eval split is a seeded partition") {
    std::vector<EditRecord> editable;
    for (int i = 0; i < 12; ++i)
        editable.push_back(topic_record(i, "topic word", "S" + std::to_string(i), 1,
                                        "t" + std::to_string(i), "n" + std::to_string(i),
                                        "P" + std::to_string(i), "p" + std::to_string(i)));
    TrainerConfig config;
    config.train_size = 6;
    config.eval_size = 3;

    const RecordSubsets subsets = train_eval_split(editable, config);
    REQUIRE(subsets.train.size() == 6);
    REQUIRE(subsets.eval.size() == 3);

    std::set<std::int64_t> train_ids, eval_ids;
    for (const auto& r : subsets.train) train_ids.insert(r.case_id);
    for (const auto& r : subsets.eval) eval_ids.insert(r.case_id);
    CHECK(train_ids.size() == 6);
    for (std::int64_t id : eval_ids) CHECK(train_ids.count(id) == 0);

    const RecordSubsets again = train_eval_split(editable, config);
    for (std::size_t i = 0; i < subsets.train.size(); ++i)
        CHECK(again.train[i].case_id == subsets.train[i].case_id);

    TrainerConfig reseeded = config;
    reseeded.seed = 1;
    std::set<std::int64_t> other_train;
    for (const auto& r : train_eval_split(editable, reseeded).train)
        other_train.insert(r.case_id);
    CHECK(other_train != train_ids);

    TrainerConfig oversized = config;
    oversized.train_size = 10;
    CHECK_THROWS_AS(train_eval_split(editable, oversized), ArgumentError);
}

TEST_CASE("step reward is +1 on an edited answer and -1 otherwise") {
    OracleResponse response;
    response.answer = " Blue.";
    CHECK(step_reward(response, "blue") == 1);
    response.answer = "red";
    CHECK(step_reward(response, "blue") == -1);
}

TEST_CASE("zero reward delay is the identity and leaves the rng untouched") {
    std::mt19937_64 rng(42), pristine(42);
    const std::vector<double> credits = apply_reward_delay({1, -1, 1, 1}, 0, rng);
    CHECK(credits == std::vector<double>{1.0, -1.0, 1.0, 1.0});
    CHECK(rng == pristine);
}

TEST_CASE("delayed credit lands within the window and conserves reward") {
    std::mt19937_64 rng(7);

    // A single reward lands somewhere in [t, t + D].
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> rewards(8, 0);
        rewards[2] = 1;
        const std::vector<double> credits = apply_reward_delay(rewards, 2, rng);
        double total = 0.0;
        for (std::size_t u = 0; u < credits.size(); ++u) {
            total += credits[u];
            if (credits[u] != 0.0) {
                CHECK(u >= 2);
                CHECK(u <= 4);
            }
        }
        CHECK(total == 1.0);
    }

    // Clamping at the episode end keeps the total intact.
    std::vector<int> tail(3, 1);
    const std::vector<double> clamped = apply_reward_delay(tail, 10, rng);
    double total = 0.0;
    for (double c : clamped) total += c;
    CHECK(total == 3.0);

    std::mt19937_64 a(11), b(11);
    CHECK(apply_reward_delay({1, -1, 1, -1, 1}, 3, a) ==
          apply_reward_delay({1, -1, 1, -1, 1}, 3, b));
}

TEST_CASE("an episode admits ranked retains until support is sufficient") {
    // Difficulty 2: the first same-topic retain fails, the second succeeds.
    const EditRecord e2 =
        topic_record(0, "signal color", "Mia", 2, "gold", "jade", "Noa", "ruby");
    const EditRecord s1 =
        topic_record(10, "signal color", "Carol", 1, "white", "black", "Dave", "cyan");
    const EditRecord s2 =
        topic_record(11, "signal color", "Erin", 1, "grey", "pink", "Frank", "teal");
    const EditRecord d1 =
        topic_record(20, "harbor depth", "Grace", 1, "nine", "four", "Heidi", "two");
    const SimulatedOracle oracle(build_simulated_kb({e2, s1, s2, d1}, 1));

    EpisodeFixture fx(e2, {s1, s2, d1});
    const PolicyHead head = make_policy_head(4 * 64);  // uniform: ties break by index
    TrainerConfig config;
    std::mt19937_64 rng(1);

    const EpisodeResult result =
        run_episode(fx.context(), head, make_budget_controller(2), oracle, config, rng);

    CHECK(result.selection == std::vector<std::size_t>{0, 1});
    REQUIRE(result.trajectory.length() == 2);
    CHECK(result.trajectory.steps[0].reward == -1.0);
    CHECK(result.trajectory.steps[1].reward == 1.0);
    CHECK(result.trajectory.steps[0].probability == Catch::Approx(1.0 / 3.0));
    CHECK(result.trajectory.steps[0].active == std::vector<std::size_t>{0, 1, 2});
    CHECK(result.controller.sigma == 0.0);  // -1 then +1 is no flip
}

TEST_CASE("a success-to-failure flip tightens sigma to the tail maximum") {
    const EditRecord e1 =
        topic_record(0, "signal color", "Alice", 1, "red", "blue", "Bob", "green");
    const EditRecord s1 =
        topic_record(10, "signal color", "Carol", 1, "white", "black", "Dave", "cyan");
    const EditRecord d1 =
        topic_record(20, "harbor depth", "Grace", 1, "nine", "four", "Heidi", "two");
    const EditRecord d2 =
        topic_record(21, "harbor depth", "Ivan", 1, "five", "six", "Judy", "ten");
    // Zero tolerance: the first off-topic retain breaks the edit.
    const SimulatedOracle oracle(build_simulated_kb({e1, s1, d1, d2}, 0));
    TrainerConfig config;
    std::mt19937_64 rng(1);
    const PolicyHead head = make_policy_head(4 * 64);

    SECTION("flip mid-episode raises sigma to the best un-admitted probability") {
        EpisodeFixture fx(e1, {s1, d1, d2});
        const EpisodeResult result =
            run_episode(fx.context(), head, make_budget_controller(8), oracle, config, rng);
        REQUIRE(result.trajectory.length() == 3);
        CHECK(result.trajectory.steps[0].reward == 1.0);
        CHECK(result.trajectory.steps[1].reward == -1.0);
        CHECK(result.controller.sigma == Catch::Approx(1.0 / 3.0));
    }
    SECTION("flip on the final retain leaves sigma alone") {
        EpisodeFixture fx(e1, {s1, d1});
        const EpisodeResult result =
            run_episode(fx.context(), head, make_budget_controller(8), oracle, config, rng);
        REQUIRE(result.trajectory.length() == 2);
        CHECK(result.trajectory.steps[1].reward == -1.0);
        CHECK(result.controller.sigma == 0.0);
    }
}

TEST_CASE("sampled selection consumes the pool without replacement") {
    const EditRecord e1 =
        topic_record(0, "signal color", "Alice", 1, "red", "blue", "Bob", "green");
    const EditRecord s1 =
        topic_record(10, "signal color", "Carol", 1, "white", "black", "Dave", "cyan");
    const EditRecord d1 =
        topic_record(20, "harbor depth", "Grace", 1, "nine", "four", "Heidi", "two");
    const EditRecord d2 =
        topic_record(21, "harbor depth", "Ivan", 1, "five", "six", "Judy", "ten");
    const SimulatedOracle oracle(build_simulated_kb({e1, s1, d1, d2}, 1));

    EpisodeFixture fx(e1, {s1, d1, d2});
    const PolicyHead head = make_policy_head(4 * 64);
    TrainerConfig config;
    config.selection_mode = SelectionMode::Sampled;

    std::mt19937_64 rng(9);
    const EpisodeResult result =
        run_episode(fx.context(), head, make_budget_controller(8), oracle, config, rng);

    REQUIRE(result.trajectory.length() == 3);
    CHECK(result.trajectory.steps[0].active.size() == 3);
    CHECK(result.trajectory.steps[1].active.size() == 2);
    CHECK(result.trajectory.steps[2].active.size() == 1);
    const std::set<std::size_t> chosen(result.selection.begin(), result.selection.end());
    CHECK(chosen == std::set<std::size_t>{0, 1, 2});
    CHECK(result.trajectory.steps[2].probability == Catch::Approx(1.0));

    std::mt19937_64 rng_again(9);
    const EpisodeResult replay = run_episode(fx.context(), head, make_budget_controller(8),
                                             oracle, config, rng_again);
    CHECK(replay.selection == result.selection);
}

TEST_CASE("checkpoints round trip exactly and reject tampering") {
    TrainSetup setup;
    const SimulatedOracle oracle(setup.kb);
    const TrainOutcome outcome = train(setup.split, setup.config, setup.provider, oracle);

    const std::string dir = testsup::temp_dir("checkpoint");
    const std::string path = dir + "/checkpoint.json";
    save_checkpoint(path, outcome.checkpoint);
    const Checkpoint back = load_checkpoint(path);
    CHECK(checkpoint_json(back) == checkpoint_json(outcome.checkpoint));

    // The stored rng state resumes the exact stream.
    std::mt19937_64 resumed = rng_from_state(back.rng_state);
    std::mt19937_64 original = rng_from_state(outcome.checkpoint.rng_state);
    for (int i = 0; i < 5; ++i) CHECK(resumed() == original());

    SECTION("digest mismatch") {
        auto doc = nlohmann::json::parse(testsup::read_file(path));
        doc["config"]["seed"] = 12345;
        std::ofstream(path) << doc.dump();
        CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
    }
    SECTION("unsupported version") {
        auto doc = nlohmann::json::parse(testsup::read_file(path));
        doc["version"] = 2;
        std::ofstream(path) << doc.dump();
        CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
    }
    SECTION("missing field") {
        auto doc = nlohmann::json::parse(testsup::read_file(path));
        doc.erase("sigma");
        std::ofstream(path) << doc.dump();
        CHECK_THROWS_AS(load_checkpoint(path), SchemaError);
    }
    SECTION("not json at all") {
        std::ofstream(path) << "{broken";
        CHECK_THROWS_AS(load_checkpoint(path), ParseError);
        CHECK_THROWS_AS(load_checkpoint(dir + "/absent.json"), ParseError);
    }
}

TEST_CASE("training runs the advertised number of episodes and tightens monotonically") {
    TrainSetup setup;
    const SimulatedOracle oracle(setup.kb);
    const std::string dir = testsup::temp_dir("train");

    const TrainOutcome outcome =
        train(setup.split, setup.config, setup.provider, oracle, dir);
    CHECK(outcome.episodes == 12);  // 2 epochs x 6 records
    CHECK(outcome.oracle_calls >= outcome.episodes);
    CHECK(outcome.checkpoint.epoch == 2);
    REQUIRE(outcome.sigma_trace.size() == 12);
    for (std::size_t i = 1; i < outcome.sigma_trace.size(); ++i)
        CHECK(outcome.sigma_trace[i] >= outcome.sigma_trace[i - 1]);
    CHECK(outcome.checkpoint.sigma == outcome.sigma_trace.back());

    // The epoch-end checkpoint on disk is the returned one.
    const Checkpoint stored = load_checkpoint(dir + "/checkpoint.json");
    CHECK(checkpoint_json(stored) == checkpoint_json(outcome.checkpoint));
}

TEST_CASE("identical configurations train to byte-identical checkpoints") {
    TrainSetup setup;
    const SimulatedOracle oracle(setup.kb);
    const TrainOutcome a = train(setup.split, setup.config, setup.provider, oracle);
    const TrainOutcome b = train(setup.split, setup.config, setup.provider, oracle);
    CHECK(checkpoint_json(a.checkpoint).dump() == checkpoint_json(b.checkpoint).dump());
}

TEST_CASE("resuming from a checkpoint reproduces the straight-through run") {
    TrainSetup setup;
    const SimulatedOracle oracle(setup.kb);

    TrainerConfig one_epoch = setup.config;
    one_epoch.epochs = 1;
    const TrainOutcome first = train(setup.split, one_epoch, setup.provider, oracle);

    // The same run, interrupted after epoch 1 and resumed under the full config.
    Checkpoint mid = first.checkpoint;
    mid.config.epochs = setup.config.epochs;
    const TrainOutcome resumed =
        train(setup.split, setup.config, setup.provider, oracle, "", &mid);
    const TrainOutcome straight = train(setup.split, setup.config, setup.provider, oracle);
    CHECK(checkpoint_json(resumed.checkpoint).dump() ==
          checkpoint_json(straight.checkpoint).dump());
    CHECK(resumed.episodes == 6);  // only the second epoch ran

    SECTION("a config change invalidates the checkpoint") {
        Checkpoint stale = first.checkpoint;
        stale.config.epochs = setup.config.epochs;
        stale.config.learning_rate = 9e-9;
        CHECK_THROWS_AS(
            train(setup.split, setup.config, setup.provider, oracle, "", &stale),
            ArgumentError);
    }
    SECTION("resuming at the final epoch is a no-op") {
        const TrainOutcome idle = train(setup.split, one_epoch, setup.provider, oracle, "",
                                        &first.checkpoint);
        CHECK(idle.episodes == 0);
        CHECK(checkpoint_json(idle.checkpoint) == checkpoint_json(first.checkpoint));
    }
}
