#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "drike/answer_match.hpp"
#include "drike/corpus.hpp"
#include "drike/embedding.hpp"
#include "drike/errors.hpp"

namespace drike {

struct OracleResponse {
    std::string answer;
    std::optional<std::map<std::string, double>> continuation_scores;
};

class OracleClient {
public:
    virtual ~OracleClient() = default;

protected:
    friend OracleResponse query_oracle(const OracleClient&, const std::string&,
                                       const std::vector<std::string>&);
    virtual OracleResponse complete(const std::string& prompt,
                                    const std::vector<std::string>& candidates) const = 0;
};

inline OracleResponse query_oracle(const OracleClient& client, const std::string& prompt,
                                   const std::vector<std::string>& candidates = {}) {
    if (prompt.empty())
        throw ArgumentError("query_oracle: empty prompt");
    return client.complete(prompt, candidates);
}

// Rule-based stand-in for the frozen LM. Answers depend only on what the
// rendered prompt contains, via exact-line lookups against the corpus:
//   - a demonstration block is a Retain block iff its Prompt line matches a
//     known neighborhood-probe line; its topic is the source record's.
//   - the edit query (or a paraphrase) yields target_new iff the prompt holds
//     at least `difficulty` on-topic Retain blocks and at most m_tol
//     off-topic ones; otherwise the old truth survives.
//   - a neighborhood probe of the edited record keeps its own truth unless
//     more than m_tol off-topic Retain blocks drag it to the edit (over-edit).
struct SimulatedKB {
    struct EditInfo {
        std::string topic_tag;
        int difficulty = 1;
        std::string query_prompt;
        std::set<std::string> paraphrases;
        std::string target_new;
        std::string target_true;
        std::map<std::string, std::string> probe_truth;
    };

    int m_tol = 1;
    std::map<std::string, std::string> retain_line_topic;
    std::map<std::string, EditInfo> edits;       // keyed by edit-fact line
    std::map<std::string, std::string> truths;   // any known query -> true answer
};

inline SimulatedKB build_simulated_kb(const std::vector<EditRecord>& records, int m_tol) {
    if (m_tol < 0)
        throw ArgumentError("simulated kb: m_tol must be >= 0");
    SimulatedKB kb;
    kb.m_tol = m_tol;
    for (const EditRecord& record : records) {
        if (!record.difficulty || !record.topic_tag)
            throw SchemaError("simulated kb requires difficulty and topic_tag on every "
                              "record; case " +
                              std::to_string(record.case_id) + " lacks them");
        SimulatedKB::EditInfo info;
        info.topic_tag = *record.topic_tag;
        info.difficulty = *record.difficulty;
        info.query_prompt = record.query_prompt;
        info.paraphrases.insert(record.paraphrase_prompts.begin(),
                                record.paraphrase_prompts.end());
        info.target_new = record.target_new;
        info.target_true = record.target_true;
        kb.truths[record.query_prompt] = record.target_true;
        for (const std::string& p : record.paraphrase_prompts)
            kb.truths[p] = record.target_true;
        for (const NeighborhoodProbe& probe : record.neighborhood_probes) {
            info.probe_truth[probe.prompt] = probe.target_true;
            kb.truths[probe.prompt] = probe.target_true;
            kb.retain_line_topic[probe.prompt + " " + probe.target_true] = *record.topic_tag;
        }
        kb.edits[record.query_prompt + " " + record.target_new] = std::move(info);
    }
    return kb;
}

namespace detail {

struct ParsedPrompt {
    std::vector<std::string> demo_prompt_lines;
    std::string edit_fact;
    std::string query;
};

inline ParsedPrompt parse_prompt(const std::string& prompt) {
    constexpr std::string_view fact_prefix = "New Fact: ";
    constexpr std::string_view query_prefix = "Prompt: ";
    ParsedPrompt parsed;
    std::size_t start = 0;
    std::vector<std::string> blocks;
    while (true) {
        const std::size_t sep = prompt.find("\n\n", start);
        if (sep == std::string::npos) {
            blocks.push_back(prompt.substr(start));
            break;
        }
        blocks.push_back(prompt.substr(start, sep - start));
        start = sep + 2;
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string& block = blocks[b];
        const std::size_t newline = block.find('\n');
        if (block.rfind(fact_prefix, 0) != 0 || newline == std::string::npos ||
            block.compare(newline + 1, query_prefix.size(), query_prefix) != 0)
            throw FormatError("prompt block " + std::to_string(b) +
                              " does not follow the New Fact / Prompt template");
        const std::string fact = block.substr(fact_prefix.size(), newline - fact_prefix.size());
        const std::string line = block.substr(newline + 1 + query_prefix.size());
        if (b + 1 == blocks.size()) {
            parsed.edit_fact = fact;
            parsed.query = line;
        } else {
            parsed.demo_prompt_lines.push_back(line);
        }
    }
    return parsed;
}

} // namespace detail

inline std::string simulated_answer_rule(const SimulatedKB& kb, const std::string& prompt) {
    const detail::ParsedPrompt parsed = detail::parse_prompt(prompt);
    const auto edit_it = kb.edits.find(parsed.edit_fact);
    if (edit_it == kb.edits.end())
        throw LookupError("simulated oracle has no record for edit fact: " + parsed.edit_fact);
    const SimulatedKB::EditInfo& info = edit_it->second;
    int on_topic = 0;
    int off_topic = 0;
    for (const std::string& line : parsed.demo_prompt_lines) {
        const auto it = kb.retain_line_topic.find(line);
        if (it == kb.retain_line_topic.end()) continue;  // Copy/Update block
        if (it->second == info.topic_tag)
            ++on_topic;
        else
            ++off_topic;
    }
    const bool supported = on_topic >= info.difficulty && off_topic <= kb.m_tol;
    if (parsed.query == info.query_prompt || info.paraphrases.count(parsed.query))
        return supported ? info.target_new : info.target_true;
    if (const auto probe = info.probe_truth.find(parsed.query); probe != info.probe_truth.end())
        return off_topic <= kb.m_tol ? probe->second : info.target_new;
    const auto truth = kb.truths.find(parsed.query);
    if (truth == kb.truths.end())
        throw LookupError("simulated oracle has no truth for query: " + parsed.query);
    return truth->second;
}

class SimulatedOracle final : public OracleClient {
public:
    explicit SimulatedOracle(SimulatedKB kb) : kb_(std::move(kb)) {}

    const SimulatedKB& kb() const { return kb_; }

protected:
    OracleResponse complete(const std::string& prompt,
                            const std::vector<std::string>& candidates) const override {
        OracleResponse response;
        response.answer = simulated_answer_rule(kb_, prompt);
        if (!candidates.empty()) {
            // The chosen continuation gets probability 0.9; the rest split 0.1.
            std::size_t chosen = candidates.size();
            for (std::size_t i = 0; i < candidates.size() && chosen == candidates.size(); ++i)
                if (candidates[i] == response.answer) chosen = i;
            for (std::size_t i = 0; i < candidates.size() && chosen == candidates.size(); ++i)
                if (match_answer(response.answer, candidates[i])) chosen = i;
            std::map<std::string, double> scores;
            const double other =
                std::log(0.1 / static_cast<double>(std::max<std::size_t>(
                                   candidates.size() - 1, 1)));
            for (std::size_t i = 0; i < candidates.size(); ++i)
                scores[candidates[i]] = (i == chosen) ? std::log(0.9) : other;
            response.continuation_scores = std::move(scores);
        }
        return response;
    }

private:
    SimulatedKB kb_;
};

struct RemoteOracleConfig {
    std::string endpoint;
    int timeout_ms = 30000;
    int retries = 3;
    int backoff_ms = 250;
    int max_tokens = 16;
};

// POST {"prompt", "max_tokens", "candidates"?} -> {"text", "candidate_logprobs"?}
class RemoteOracle final : public OracleClient {
public:
    explicit RemoteOracle(RemoteOracleConfig config) : config_(std::move(config)) {
        std::tie(base_, path_) = detail::split_url(config_.endpoint);
    }

protected:
    OracleResponse complete(const std::string& prompt,
                            const std::vector<std::string>& candidates) const override {
        nlohmann::json request{{"prompt", prompt}, {"max_tokens", config_.max_tokens}};
        if (!candidates.empty()) request["candidates"] = candidates;
        const std::string body = request.dump();
        std::string last_error;
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
            httplib::Client client(base_);
            client.set_connection_timeout(0, config_.timeout_ms * 1000);
            client.set_read_timeout(0, config_.timeout_ms * 1000);
            auto res = client.Post(path_, body, "application/json");
            if (!res) {
                last_error = "no response from " + config_.endpoint;
                continue;
            }
            if (res->status != 200) {
                last_error = "HTTP " + std::to_string(res->status) + " from " + config_.endpoint;
                continue;
            }
            try {
                return parse_response(res->body, candidates);
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("bad response body: ") + e.what();
            }
        }
        throw OracleUnavailableError("completion request failed after " +
                                     std::to_string(config_.retries) + " retries: " +
                                     last_error);
    }

private:
    static OracleResponse parse_response(const std::string& body,
                                         const std::vector<std::string>& candidates) {
        const auto doc = nlohmann::json::parse(body);
        OracleResponse response;
        response.answer = doc.at("text").get<std::string>();
        // Partial per-candidate scoring counts as unsupported.
        if (doc.contains("candidate_logprobs") && !candidates.empty()) {
            std::map<std::string, double> scores;
            bool complete_cover = true;
            const auto& lp = doc.at("candidate_logprobs");
            for (const std::string& c : candidates) {
                if (!lp.contains(c)) {
                    complete_cover = false;
                    break;
                }
                scores[c] = lp.at(c).get<double>();
            }
            if (complete_cover) response.continuation_scores = std::move(scores);
        }
        return response;
    }

    RemoteOracleConfig config_;
    std::string base_;
    std::string path_;
};

// Two-way probability margin for target_new over target_true: softmax over
// exactly the two candidates' log-probabilities, then p_new - p_true. Stays
// in [-1, 1]; absent scores yield no value.
inline std::optional<double> score_margin(const OracleResponse& response,
                                          const std::string& target_new,
                                          const std::string& target_true) {
    if (!response.continuation_scores) return std::nullopt;
    const auto& scores = *response.continuation_scores;
    const auto a_it = scores.find(target_new);
    const auto b_it = scores.find(target_true);
    if (a_it == scores.end() || b_it == scores.end()) return std::nullopt;
    const double shift = std::max(a_it->second, b_it->second);
    const double ea = std::exp(a_it->second - shift);
    const double eb = std::exp(b_it->second - shift);
    return (ea - eb) / (ea + eb);
}

} // namespace drike
