#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "drike/corpus.hpp"
#include "drike/errors.hpp"
#include "drike/oracle.hpp"
#include "drike/policy.hpp"

namespace drike {

// Knobs for the planted-difficulty benchmark corpus. Editable records share
// topics in groups of `records_per_topic` — mirroring real knowledge-editing
// corpora, where a relation template like "The mother tongue of X is" recurs
// across many records — so a retriever trained on some records of a topic
// faces held-out records of topics it has seen, not a disjoint vocabulary.
// Each topic gets `supportive_per_record` same-topic demo-pool records
// (enough to cover any record's difficulty) plus shared off-topic distractor
// records, so the simulated oracle's S >= d / X <= m_tol gate is satisfiable
// but not trivially so.
struct SyntheticConfig {
    std::size_t record_count = 60;
    int max_difficulty = 3;
    std::size_t records_per_topic = 15;
    std::size_t supportive_per_record = 3;
    std::size_t distractor_records = 16;
    std::size_t paraphrases_per_record = 2;
    std::size_t probes_per_record = 2;
    int m_tol = 1;
};

namespace detail {

class WordMint {
public:
    explicit WordMint(std::mt19937_64& rng) : rng_(rng) {}

    // Fresh pronounceable pseudo-word, unique across this mint's lifetime.
    std::string word() {
        static constexpr const char* consonants = "bdfgklmnprstvz";
        static constexpr const char* vowels = "aeiou";
        while (true) {
            std::string w;
            const std::size_t syllables = 2 + draw(2);
            for (std::size_t s = 0; s < syllables; ++s) {
                w.push_back(consonants[draw(14)]);
                w.push_back(vowels[draw(5)]);
            }
            if (used_.insert(w).second) return w;
        }
    }

    std::string capitalized() {
        std::string w = word();
        w[0] = static_cast<char>(w[0] - 'a' + 'A');
        return w;
    }

private:
    std::size_t draw(std::size_t k) {
        const auto idx = static_cast<std::size_t>(uniform_draw(rng_) * static_cast<double>(k));
        return idx < k ? idx : k - 1;
    }

    std::mt19937_64& rng_;
    std::set<std::string> used_;
};

// Two-token topic attribute: more shared n-grams between a query and its
// same-topic neighbors than a single token would give, which keeps the
// planted KNN signal above hash-collision noise at small dimensions.
inline std::string mint_topic(WordMint& mint) { return mint.word() + " " + mint.word(); }

inline std::string attribute_query(const std::string& topic, const std::string& subject) {
    return "The " + topic + " of " + subject + " is";
}

inline void add_probes(EditRecord& record, const std::string& topic, std::size_t count,
                       WordMint& mint) {
    for (std::size_t p = 0; p < count; ++p)
        record.neighborhood_probes.push_back(
            {attribute_query(topic, mint.capitalized()), mint.word()});
}

inline EditRecord make_topic_record(std::int64_t case_id, const std::string& topic,
                                    int difficulty, std::size_t paraphrases,
                                    std::size_t probes, WordMint& mint) {
    EditRecord record;
    record.case_id = case_id;
    // Single-token subjects keep most of a query's n-gram mass on the topic,
    // where same-topic neighbors share it.
    record.subject = mint.capitalized();
    record.query_prompt = attribute_query(topic, record.subject);
    record.target_true = mint.word();
    record.target_new = mint.word();
    if (paraphrases >= 1)
        record.paraphrase_prompts.push_back("For " + record.subject + " the " + topic + " is");
    if (paraphrases >= 2)
        record.paraphrase_prompts.push_back("Regarding " + record.subject + " the " + topic +
                                            " is");
    for (std::size_t p = 2; p < paraphrases; ++p)
        record.paraphrase_prompts.push_back("As for " + record.subject + " the " + topic +
                                            " is, case " + mint.word());
    add_probes(record, topic, probes, mint);
    record.difficulty = difficulty;
    record.topic_tag = topic;
    return record;
}

} // namespace detail

// Deterministic in (config, seed). Editable records come first, so
// split_pools(records, config.record_count) recovers the intended split.
inline std::pair<std::vector<EditRecord>, SimulatedKB> generate_synthetic(
    const SyntheticConfig& config, std::uint64_t seed) {
    if (config.record_count < 1)
        throw ArgumentError("synthetic: record_count must be >= 1");
    if (config.max_difficulty < 1)
        throw ArgumentError("synthetic: max_difficulty must be >= 1");
    if (config.supportive_per_record < static_cast<std::size_t>(config.max_difficulty))
        throw ArgumentError("synthetic: supportive_per_record must cover max_difficulty, "
                            "or top-difficulty records are unanswerable");
    if (config.probes_per_record < 1)
        throw ArgumentError("synthetic: probes_per_record must be >= 1");
    if (config.records_per_topic < 1)
        throw ArgumentError("synthetic: records_per_topic must be >= 1");

    std::mt19937_64 rng(seed);
    detail::WordMint mint(rng);
    std::vector<EditRecord> records;
    const std::size_t topic_count =
        (config.record_count + config.records_per_topic - 1) / config.records_per_topic;
    std::vector<std::string> topics;
    topics.reserve(topic_count);
    for (std::size_t t = 0; t < topic_count; ++t) topics.push_back(detail::mint_topic(mint));

    std::int64_t next_id = 0;
    for (std::size_t i = 0; i < config.record_count; ++i) {
        const std::size_t topic_index = i % topic_count;
        // Difficulty cycle 1,1,...,1,2,3,...,D (D ones, then one of each higher
        // level), offset per topic so every topic sees the whole range. Easy
        // records dominate, as in real edit corpora where a single related
        // demonstration usually suffices; that keeps per-position rewards
        // sign-consistent enough for the scoring head to learn, while the
        // higher difficulties still exercise the S >= d gate everywhere.
        const std::size_t d_range = static_cast<std::size_t>(config.max_difficulty);
        const std::size_t cycle = (i / topic_count + topic_index) % (2 * d_range - 1);
        const int difficulty =
            cycle < d_range ? 1 : static_cast<int>(cycle - d_range + 2);
        records.push_back(detail::make_topic_record(next_id++, topics[topic_index],
                                                    difficulty,
                                                    config.paraphrases_per_record,
                                                    config.probes_per_record, mint));
    }
    for (std::size_t t = 0; t < topic_count; ++t)
        for (std::size_t k = 0; k < config.supportive_per_record; ++k)
            records.push_back(
                detail::make_topic_record(next_id++, topics[t], 1, 1, 1, mint));
    for (std::size_t m = 0; m < config.distractor_records; ++m)
        records.push_back(detail::make_topic_record(next_id++, detail::mint_topic(mint), 1,
                                                    1, 1, mint));

    SimulatedKB kb = build_simulated_kb(records, config.m_tol);
    return {std::move(records), std::move(kb)};
}

} // namespace drike
