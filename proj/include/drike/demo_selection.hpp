#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "drike/corpus.hpp"
#include "drike/embedding.hpp"
#include "drike/errors.hpp"

namespace drike {

enum class DemoCategory { Copy, Update, Retain };

inline const char* to_string(DemoCategory c) {
    switch (c) {
        case DemoCategory::Copy: return "Copy";
        case DemoCategory::Update: return "Update";
        case DemoCategory::Retain: return "Retain";
    }
    return "?";
}

// The counterfactual fact a record asserts, as prompt text.
inline std::string fact_statement(const EditRecord& record) {
    return record.query_prompt + " " + record.target_new;
}

struct Demonstration {
    DemoCategory category;
    std::string fact_statement;
    std::string demo_query;
    std::string demo_answer;
    std::int64_t source_case_id;
};

// All Retain; candidates/embeddings/similarities are parallel, similarities
// descending in KNN order.
struct CandidatePool {
    std::vector<Demonstration> candidates;
    std::vector<EmbeddingVector> embeddings;
    std::vector<double> similarities;

    std::size_t size() const { return candidates.size(); }
};

namespace detail {

inline Demonstration make_copy_demo(const EditRecord& src) {
    return {DemoCategory::Copy, fact_statement(src), src.query_prompt, src.target_new,
            src.case_id};
}

inline Demonstration make_update_demo(const EditRecord& src) {
    return {DemoCategory::Update, fact_statement(src), src.paraphrase_prompts.front(),
            src.target_new, src.case_id};
}

inline Demonstration make_retain_demo(const EditRecord& src) {
    const auto& probe = src.neighborhood_probes.front();
    return {DemoCategory::Retain, fact_statement(src), probe.prompt, probe.target_true,
            src.case_id};
}

// Pool entries ranked by similarity of their query_prompt to the edit query,
// self excluded. Returned as (pool index, similarity), descending.
inline std::vector<std::pair<std::size_t, double>> rank_pool(
    const EditRecord& record, const std::vector<EditRecord>& demo_pool,
    const EmbeddingProvider& provider) {
    const EmbeddingVector query = embed_text(provider, record.query_prompt);
    std::vector<std::pair<std::int64_t, EmbeddingVector>> keyed;
    keyed.reserve(demo_pool.size());
    for (std::size_t i = 0; i < demo_pool.size(); ++i) {
        if (demo_pool[i].case_id == record.case_id) continue;
        keyed.emplace_back(static_cast<std::int64_t>(i),
                           embed_text(provider, demo_pool[i].query_prompt));
    }
    std::vector<std::pair<std::size_t, double>> ranked;
    if (keyed.empty()) return ranked;
    for (const ScoredId& s : cosine_knn(query, keyed, keyed.size()))
        ranked.emplace_back(static_cast<std::size_t>(s.id), s.similarity);
    return ranked;
}

} // namespace detail

// Nearest `copies` pool records become Copy demonstrations; the next-nearest
// `updates` records with paraphrases become Update demonstrations.
inline std::vector<Demonstration> build_fixed_demos(const EditRecord& record,
                                                    const std::vector<EditRecord>& demo_pool,
                                                    std::size_t copies, std::size_t updates,
                                                    const EmbeddingProvider& provider) {
    if (copies < 1)
        throw ArgumentError("build_fixed_demos: copies must be >= 1");
    const auto ranked = detail::rank_pool(record, demo_pool, provider);
    std::vector<Demonstration> demos;
    std::size_t pos = 0;
    for (; pos < ranked.size() && demos.size() < copies; ++pos)
        demos.push_back(detail::make_copy_demo(demo_pool[ranked[pos].first]));
    if (demos.size() < copies)
        throw PoolExhaustedError("demo pool has " + std::to_string(ranked.size()) +
                                 " usable records, need " + std::to_string(copies) +
                                 " for Copy demonstrations");
    std::size_t made_updates = 0;
    for (; pos < ranked.size() && made_updates < updates; ++pos) {
        const EditRecord& src = demo_pool[ranked[pos].first];
        if (src.paraphrase_prompts.empty()) continue;
        demos.push_back(detail::make_update_demo(src));
        ++made_updates;
    }
    if (made_updates < updates)
        throw PoolExhaustedError("demo pool ran out of paraphrase-bearing records: made " +
                                 std::to_string(made_updates) + " of " +
                                 std::to_string(updates) + " Update demonstrations");
    return demos;
}

// The n most similar probe-bearing pool records, rendered as Retain
// demonstrations; truncates when fewer than n are eligible.
inline CandidatePool build_candidate_pool(const EditRecord& record,
                                          const std::vector<EditRecord>& demo_pool,
                                          std::size_t n, const EmbeddingProvider& provider) {
    if (n < 1)
        throw ArgumentError("build_candidate_pool: n must be >= 1");
    const EmbeddingVector query = embed_text(provider, record.query_prompt);
    std::vector<std::pair<std::int64_t, EmbeddingVector>> keyed;
    keyed.reserve(demo_pool.size());
    for (std::size_t i = 0; i < demo_pool.size(); ++i) {
        const EditRecord& src = demo_pool[i];
        if (src.case_id == record.case_id || src.neighborhood_probes.empty()) continue;
        keyed.emplace_back(static_cast<std::int64_t>(i),
                           embed_text(provider, src.query_prompt));
    }
    if (keyed.empty())
        throw PoolExhaustedError("no demo-pool record with neighborhood probes is eligible");
    std::map<std::int64_t, const EmbeddingVector*> by_id;
    for (const auto& [id, vec] : keyed) by_id[id] = &vec;
    CandidatePool pool;
    for (const ScoredId& s : cosine_knn(query, keyed, n)) {
        pool.candidates.push_back(
            detail::make_retain_demo(demo_pool[static_cast<std::size_t>(s.id)]));
        pool.embeddings.push_back(*by_id.at(s.id));
        pool.similarities.push_back(s.similarity);
    }
    return pool;
}

} // namespace drike
