#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "drike/corpus.hpp"
#include "drike/embedding.hpp"
#include "drike/errors.hpp"
#include "drike/evaluation.hpp"
#include "drike/oracle.hpp"
#include "drike/synthetic.hpp"
#include "drike/training.hpp"

namespace drike {
namespace cli {

constexpr const char* kVersion = "1.0.0";

struct CorpusOptions {
    std::string path;
    std::string format = "native";  // native | counterfact
    std::size_t editable_count = 0;
};

struct ProviderOptions {
    std::string kind = "hash";  // hash | file | remote
    std::size_t dimension = 256;
    std::string store_path;
    std::string endpoint;
    int timeout_ms = 5000;
    int retries = 3;
};

struct OracleOptions {
    std::string kind = "simulated";  // simulated | remote
    int m_tol = 1;
    std::string endpoint;
    int timeout_ms = 30000;
    int retries = 3;
    int max_tokens = 16;
};

inline std::vector<EditRecord> load_corpus(const CorpusOptions& options) {
    if (options.format == "counterfact") return load_counterfact(options.path);
    if (options.format == "native") return load_native(options.path);
    throw ArgumentError("unknown corpus format: " + options.format);
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const ProviderOptions& options) {
    if (options.kind == "hash") return std::make_unique<HashEmbedder>(options.dimension);
    if (options.kind == "file") {
        if (options.store_path.empty())
            throw ArgumentError("file provider needs --embedding-store");
        return std::make_unique<FileStoreProvider>(options.store_path);
    }
    if (options.kind == "remote") {
        if (options.endpoint.empty())
            throw ArgumentError("remote provider needs --embedding-endpoint");
        return std::make_unique<RemoteProvider>(
            RemoteProviderConfig{options.endpoint, options.timeout_ms, options.retries, 100},
            options.dimension);
    }
    throw ArgumentError("unknown provider kind: " + options.kind);
}

inline std::unique_ptr<OracleClient> make_oracle(const OracleOptions& options,
                                                 const std::vector<EditRecord>& records) {
    if (options.kind == "simulated")
        return std::make_unique<SimulatedOracle>(build_simulated_kb(records, options.m_tol));
    if (options.kind == "remote") {
        if (options.endpoint.empty())
            throw ArgumentError(
                "remote oracle needs --oracle-endpoint or DRIKE_ORACLE_ENDPOINT");
        return std::make_unique<RemoteOracle>(RemoteOracleConfig{
            options.endpoint, options.timeout_ms, options.retries, 250, options.max_tokens});
    }
    throw ArgumentError("unknown oracle kind: " + options.kind);
}

inline void write_text(const std::string& path, const std::string& content) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ArgumentError("cannot write " + path);
    out << content;
}

inline void write_json(const std::string& path, const nlohmann::ordered_json& doc) {
    write_text(path, doc.dump(2) + "\n");
}

// Reproduction manifest: everything a rerun needs, nothing clock-dependent.
inline void write_manifest(const std::string& out_dir, const std::string& command,
                           nlohmann::ordered_json options) {
    write_json(out_dir + "/manifest.json", {{"tool", "drike"},
                                            {"version", kVersion},
                                            {"command", command},
                                            {"options", std::move(options)}});
}

inline nlohmann::ordered_json corpus_options_json(const CorpusOptions& c) {
    return {{"path", c.path}, {"format", c.format}, {"editable_count", c.editable_count}};
}

inline nlohmann::ordered_json provider_options_json(const ProviderOptions& p) {
    return {{"kind", p.kind},
            {"dimension", p.dimension},
            {"store_path", p.store_path},
            {"endpoint", p.endpoint},
            {"timeout_ms", p.timeout_ms},
            {"retries", p.retries}};
}

inline nlohmann::ordered_json oracle_options_json(const OracleOptions& o) {
    return {{"kind", o.kind},        {"m_tol", o.m_tol},
            {"endpoint", o.endpoint}, {"timeout_ms", o.timeout_ms},
            {"retries", o.retries},   {"max_tokens", o.max_tokens}};
}

inline void add_corpus_options(CLI::App* cmd, CorpusOptions& options,
                               bool need_split = true) {
    cmd->add_option("--corpus", options.path, "corpus file")->required();
    cmd->add_option("--format", options.format, "corpus format: native|counterfact")
        ->check(CLI::IsMember({"native", "counterfact"}));
    if (need_split)
        cmd->add_option("--editable-count", options.editable_count,
                        "records forming the editable pool (rest become demonstrations)")
            ->required();
}

inline void add_provider_options(CLI::App* cmd, ProviderOptions& options) {
    cmd->add_option("--provider", options.kind, "embedding provider: hash|file|remote")
        ->check(CLI::IsMember({"hash", "file", "remote"}));
    cmd->add_option("--dim", options.dimension, "embedding dimension");
    cmd->add_option("--embedding-store", options.store_path,
                    "precomputed embedding JSONL (file provider)");
    cmd->add_option("--embedding-endpoint", options.endpoint,
                    "embedding service URL (remote provider)");
    cmd->add_option("--embedding-timeout-ms", options.timeout_ms, "embedding HTTP timeout");
    cmd->add_option("--embedding-retries", options.retries, "embedding HTTP retries");
}

inline void add_oracle_options(CLI::App* cmd, OracleOptions& options) {
    cmd->add_option("--oracle", options.kind, "oracle kind: simulated|remote")
        ->check(CLI::IsMember({"simulated", "remote"}));
    cmd->add_option("--m-tol", options.m_tol, "simulated oracle distractor tolerance");
    cmd->add_option("--oracle-endpoint", options.endpoint, "completion service URL")
        ->envname("DRIKE_ORACLE_ENDPOINT");
    cmd->add_option("--oracle-timeout-ms", options.timeout_ms, "oracle HTTP timeout");
    cmd->add_option("--oracle-retries", options.retries, "oracle HTTP retries");
    cmd->add_option("--max-tokens", options.max_tokens, "completion length cap");
}

inline void add_trainer_options(CLI::App* cmd, TrainerConfig& config,
                                std::string& mode_name) {
    cmd->add_option("--epochs", config.epochs, "training epochs");
    cmd->add_option("--lr", config.learning_rate, "learning rate");
    cmd->add_option("--train-size", config.train_size, "training records");
    cmd->add_option("--eval-size", config.eval_size, "held-out records");
    cmd->add_option("--max-shots", config.max_shots, "retain admission cap K");
    cmd->add_option("--pool-size", config.pool_size, "retain candidate pool size n");
    cmd->add_option("--copies", config.copies, "copy demonstrations per edit");
    cmd->add_option("--updates", config.updates, "update demonstrations per edit");
    cmd->add_option("--selection-mode", mode_name, "retain selection: ranked|sampled")
        ->check(CLI::IsMember({"ranked", "sampled"}));
    cmd->add_option("--reward-delay", config.reward_delay_max,
                    "max random reward delay in steps");
    cmd->add_option("--seed", config.seed, "run seed");
}

struct TranscriptWriter {
    std::ofstream out;

    explicit TranscriptWriter(const std::string& path) : out(path, std::ios::binary) {
        if (!out)
            throw ArgumentError("cannot write " + path);
    }

    TranscriptSink sink() {
        return [this](const TranscriptEntry& entry) {
            out << transcript_json(entry).dump() << "\n";
        };
    }
};

inline int cmd_ingest(const CorpusOptions& corpus, const std::string& out_dir,
                      bool validate_only) {
    const std::vector<EditRecord> records = load_corpus(corpus);
    std::printf("loaded %zu records from %s\n", records.size(), corpus.path.c_str());
    if (validate_only) return 0;
    std::filesystem::create_directories(out_dir);
    save_native(records, out_dir + "/corpus.jsonl");
    write_manifest(out_dir, "ingest",
                   {{"corpus", corpus_options_json(corpus)}, {"validate_only", false}});
    std::printf("wrote %s/corpus.jsonl\n", out_dir.c_str());
    return 0;
}

inline int cmd_synth(const SyntheticConfig& config, std::uint64_t seed,
                     const std::string& out_dir) {
    const auto [records, kb] = generate_synthetic(config, seed);
    std::filesystem::create_directories(out_dir);
    save_native(records, out_dir + "/corpus.jsonl");
    write_manifest(out_dir, "synth",
                   {{"records", config.record_count},
                    {"max_difficulty", config.max_difficulty},
                    {"records_per_topic", config.records_per_topic},
                    {"supportive_per_record", config.supportive_per_record},
                    {"distractor_records", config.distractor_records},
                    {"paraphrases_per_record", config.paraphrases_per_record},
                    {"probes_per_record", config.probes_per_record},
                    {"m_tol", config.m_tol},
                    {"seed", seed},
                    {"editable_count", config.record_count}});
    std::printf("wrote %zu records (editable %zu) to %s/corpus.jsonl\n", records.size(),
                config.record_count, out_dir.c_str());
    return 0;
}

inline int cmd_train(const CorpusOptions& corpus, const ProviderOptions& provider_opts,
                     const OracleOptions& oracle_opts, const TrainerConfig& config,
                     const std::string& out_dir, bool validate_only, bool resume) {
    validate(config);
    const std::vector<EditRecord> records = load_corpus(corpus);
    const CorpusSplit split = split_pools(records, corpus.editable_count);
    if (validate_only) {
        train_eval_split(split.editable_pool, config);  // size check
        std::printf("config ok: %zu editable / %zu demo records\n",
                    split.editable_pool.size(), split.demo_pool.size());
        return 0;
    }
    const auto provider = make_provider(provider_opts);
    const auto oracle = make_oracle(oracle_opts, records);
    Checkpoint resumed;
    const Checkpoint* resume_ptr = nullptr;
    if (resume) {
        resumed = load_checkpoint(out_dir + "/checkpoint.json");
        resume_ptr = &resumed;
    }
    const TrainOutcome outcome =
        train(split, config, *provider, *oracle, out_dir, resume_ptr);
    write_manifest(out_dir, "train",
                   {{"corpus", corpus_options_json(corpus)},
                    {"provider", provider_options_json(provider_opts)},
                    {"oracle", oracle_options_json(oracle_opts)},
                    {"trainer", config_json(config)},
                    {"config_digest", config_digest(config)}});
    std::printf("trained %zu episodes (%zu oracle calls), sigma %.6f -> %s/checkpoint.json\n",
                outcome.episodes, outcome.oracle_calls, outcome.checkpoint.sigma,
                out_dir.c_str());
    return 0;
}

struct EvalCliOptions {
    std::string checkpoint_path;
    std::string mode_name = "dr_ike";
    bool whole_pool = false;  // evaluate the full editable pool, not the held-out slice
    bool margin_raw = false;
    bool pc_macro = false;
    bool no_margins = false;
};

inline std::vector<PreparedRecord> prepare_eval_records(const CorpusSplit& split,
                                                        const Checkpoint& ck,
                                                        const EmbeddingProvider& provider,
                                                        bool whole_pool) {
    const std::vector<EditRecord> subset =
        whole_pool ? split.editable_pool
                   : train_eval_split(split.editable_pool, ck.config).eval;
    if (subset.empty())
        throw ArgumentError("no records to evaluate (eval_size is 0?)");
    return prepare_records(subset, split.demo_pool, ck.config, provider);
}

inline int cmd_eval(const CorpusOptions& corpus, const ProviderOptions& provider_opts,
                    const OracleOptions& oracle_opts, const EvalCliOptions& options,
                    const std::string& out_dir, bool ablate_all_modes) {
    const std::vector<EditRecord> records = load_corpus(corpus);
    const CorpusSplit split = split_pools(records, corpus.editable_count);
    const Checkpoint ck = load_checkpoint(options.checkpoint_path);
    const auto provider = make_provider(provider_opts);
    const CachingProvider cache(*provider);
    const auto oracle = make_oracle(oracle_opts, records);
    const BudgetController controller{ck.sigma, ck.config.max_shots};
    const std::vector<PreparedRecord> prepared =
        prepare_eval_records(split, ck, cache, options.whole_pool);
    EvalConfig eval_config;
    eval_config.pool_size = ck.config.pool_size;
    eval_config.copies = ck.config.copies;
    eval_config.updates = ck.config.updates;
    eval_config.with_margins = !options.no_margins;
    eval_config.margin_raw = options.margin_raw;
    eval_config.pc_macro = options.pc_macro;

    std::filesystem::create_directories(out_dir);
    TranscriptWriter transcripts(out_dir + "/transcripts.jsonl");
    std::vector<MetricsReport> reports;
    if (ablate_all_modes) {
        reports = run_ablation(prepared, ck.head, controller, *oracle, eval_config,
                               transcripts.sink());
    } else {
        reports.push_back(evaluate(prepared, ck.head, controller, *oracle,
                                   ablation_mode_from(options.mode_name), eval_config,
                                   transcripts.sink()));
    }
    nlohmann::ordered_json report_doc = nlohmann::ordered_json::array();
    nlohmann::ordered_json timing_doc = nlohmann::ordered_json::array();
    for (const MetricsReport& r : reports) {
        report_doc.push_back(report_json(r));
        timing_doc.push_back(timing_json(r));
    }
    write_json(out_dir + "/report.json", report_doc);
    write_json(out_dir + "/timing.json", timing_doc);
    write_text(out_dir + "/report.txt", report_table(reports));
    write_manifest(out_dir, ablate_all_modes ? "ablate" : "eval",
                   {{"corpus", corpus_options_json(corpus)},
                    {"provider", provider_options_json(provider_opts)},
                    {"oracle", oracle_options_json(oracle_opts)},
                    {"checkpoint", options.checkpoint_path},
                    {"checkpoint_digest", config_digest(ck.config)},
                    {"mode", ablate_all_modes ? "all" : options.mode_name},
                    {"whole_pool", options.whole_pool},
                    {"margin_raw", options.margin_raw},
                    {"pc_macro", options.pc_macro}});
    std::fputs(report_table(reports).c_str(), stdout);
    return 0;
}

inline int cmd_stats(const std::string& transcripts_path, const std::string& out_dir) {
    std::ifstream in(transcripts_path);
    if (!in)
        throw ParseError("cannot open transcripts " + transcripts_path);
    std::map<std::string, std::vector<EditOutcome>> by_mode;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto doc = nlohmann::json::parse(line);
            if (doc.at("kind").get<std::string>() != "edit") continue;  // one per record
            EditOutcome outcome;
            outcome.case_id = doc.at("case_id").get<std::int64_t>();
            outcome.retains_used = doc.at("retains_used").get<std::size_t>();
            by_mode[doc.at("mode").get<std::string>()].push_back(outcome);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(transcripts_path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    if (by_mode.empty())
        throw ArgumentError("no edit entries found in " + transcripts_path);
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    std::string table = "mode      records   retain_mean  retain_std\n";
    for (const auto& [mode, outcomes] : by_mode) {
        const RetainStats stats = retain_budget_stats(outcomes);
        nlohmann::ordered_json hist = nlohmann::ordered_json::object();
        for (const auto& [count, freq] : stats.histogram)
            hist[std::to_string(count)] = freq;
        doc.push_back({{"mode", mode},
                       {"records", outcomes.size()},
                       {"retain_mean", stats.mean},
                       {"retain_std", stats.stddev},
                       {"retain_histogram", std::move(hist)}});
        char buf[120];
        std::snprintf(buf, sizeof buf, "%-9s %-9zu %-12.3f %.3f\n", mode.c_str(),
                      outcomes.size(), stats.mean, stats.stddev);
        table += buf;
    }
    write_json(out_dir + "/stats.json", doc);
    write_text(out_dir + "/stats.txt", table);
    write_manifest(out_dir, "stats", {{"transcripts", transcripts_path}});
    std::fputs(table.c_str(), stdout);
    return 0;
}

} // namespace cli

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"dynamic retain-demonstration retrieval for in-context knowledge editing"};
    app.set_version_flag("--version", cli::kVersion);
    app.set_config("--config", "", "configuration file (INI/TOML, sections per subcommand)");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    cli::CorpusOptions corpus;
    cli::ProviderOptions provider;
    cli::OracleOptions oracle;
    TrainerConfig trainer;
    std::string selection_mode = "ranked";
    std::string out_dir = "out";
    bool validate_only = false;
    bool resume = false;
    SyntheticConfig synth;
    std::uint64_t synth_seed = 0;
    cli::EvalCliOptions eval_options;
    std::string transcripts_path;

    int exit_code = 0;
    const auto run = [&](auto&& fn) { return [&, fn]() { exit_code = fn(); }; };

    CLI::App* ingest = app.add_subcommand("ingest", "validate a corpus and convert it to "
                                                    "the native line-delimited format");
    cli::add_corpus_options(ingest, corpus, false);
    ingest->add_option("--out", out_dir, "output directory");
    ingest->add_flag("--validate-only", validate_only, "parse and validate, write nothing");
    ingest->callback(run([&] { return cli::cmd_ingest(corpus, out_dir, validate_only); }));

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a planted-difficulty "
                                                      "synthetic corpus");
    synth_cmd->add_option("--records", synth.record_count, "editable record count");
    synth_cmd->add_option("--max-difficulty", synth.max_difficulty,
                          "difficulty range upper bound");
    synth_cmd->add_option("--records-per-topic", synth.records_per_topic,
                          "editable records sharing each relation topic");
    synth_cmd->add_option("--supportive", synth.supportive_per_record,
                          "same-topic demo records per edit");
    synth_cmd->add_option("--distractors", synth.distractor_records,
                          "dedicated off-topic demo records");
    synth_cmd->add_option("--paraphrases", synth.paraphrases_per_record,
                          "paraphrases per editable record");
    synth_cmd->add_option("--probes", synth.probes_per_record,
                          "neighborhood probes per editable record");
    synth_cmd->add_option("--m-tol", synth.m_tol, "planned distractor tolerance");
    synth_cmd->add_option("--seed", synth_seed, "generation seed");
    synth_cmd->add_option("--out", out_dir, "output directory");
    synth_cmd->callback(run([&] { return cli::cmd_synth(synth, synth_seed, out_dir); }));

    CLI::App* train_cmd = app.add_subcommand("train", "run the episode loop and write a "
                                                      "checkpoint");
    cli::add_corpus_options(train_cmd, corpus);
    cli::add_provider_options(train_cmd, provider);
    cli::add_oracle_options(train_cmd, oracle);
    cli::add_trainer_options(train_cmd, trainer, selection_mode);
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_flag("--validate-only", validate_only,
                        "validate config and corpus, then stop");
    train_cmd->add_flag("--resume", resume, "continue from <out>/checkpoint.json");
    train_cmd->callback(run([&] {
        trainer.selection_mode = selection_mode_from(selection_mode);
        return cli::cmd_train(corpus, provider, oracle, trainer, out_dir, validate_only,
                              resume);
    }));

    CLI::App* eval_cmd = app.add_subcommand("eval", "metrics report for one ablation mode");
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "metrics reports for all four "
                                                        "ablation modes");
    for (CLI::App* cmd : {eval_cmd, ablate_cmd}) {
        cli::add_corpus_options(cmd, corpus);
        cli::add_provider_options(cmd, provider);
        cli::add_oracle_options(cmd, oracle);
        cmd->add_option("--checkpoint", eval_options.checkpoint_path, "trained checkpoint")
            ->required();
        cmd->add_flag("--whole-pool", eval_options.whole_pool,
                      "evaluate the entire editable pool instead of the held-out slice");
        cmd->add_flag("--margin-raw", eval_options.margin_raw,
                      "report raw log-prob differences instead of two-way margins");
        cmd->add_flag("--pc-macro", eval_options.pc_macro,
                      "average paraphrase consistency per record, not per prompt");
        cmd->add_flag("--no-margins", eval_options.no_margins,
                      "skip continuation scoring");
        cmd->add_option("--out", out_dir, "output directory");
    }
    eval_cmd->add_option("--mode", eval_options.mode_name,
                         "ike_all|rank_all|rank_50|dr_ike");
    eval_cmd->callback(run([&] {
        return cli::cmd_eval(corpus, provider, oracle, eval_options, out_dir, false);
    }));
    ablate_cmd->callback(run([&] {
        return cli::cmd_eval(corpus, provider, oracle, eval_options, out_dir, true);
    }));

    CLI::App* stats_cmd = app.add_subcommand("stats", "retain-budget statistics from an "
                                                      "evaluation transcript");
    stats_cmd->add_option("--transcripts", transcripts_path, "transcripts.jsonl path")
        ->required();
    stats_cmd->add_option("--out", out_dir, "output directory");
    stats_cmd->callback(run([&] { return cli::cmd_stats(transcripts_path, out_dir); }));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are a usage error
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", e.kind().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return exit_code;
}

} // namespace drike
