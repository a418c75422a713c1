#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "drike/answer_match.hpp"
#include "drike/errors.hpp"

namespace drike {

struct NeighborhoodProbe {
    std::string prompt;
    std::string target_true;
};

// One factual edit. query_prompt already has the subject substituted in.
// difficulty/topic_tag are carried only by synthetic corpora and travel
// together (both present or both absent).
struct EditRecord {
    std::int64_t case_id = 0;
    std::string subject;
    std::string query_prompt;
    std::string target_new;
    std::string target_true;
    std::vector<std::string> paraphrase_prompts;
    std::vector<NeighborhoodProbe> neighborhood_probes;
    std::optional<int> difficulty;
    std::optional<std::string> topic_tag;
};

struct CorpusSplit {
    std::vector<EditRecord> editable_pool;
    std::vector<EditRecord> demo_pool;
};

namespace detail {

inline void validate_record(const EditRecord& rec, std::size_t index) {
    auto at = [index](const char* what) {
        return "record " + std::to_string(index) + ": " + what;
    };
    if (rec.query_prompt.empty())
        throw SchemaError(at("query_prompt is empty"));
    if (normalize_answer(rec.target_new) == normalize_answer(rec.target_true))
        throw SchemaError(at("target_new equals target_true after normalization"));
    if (rec.difficulty.has_value() != rec.topic_tag.has_value())
        throw SchemaError(at("difficulty and topic_tag must be present together"));
    if (rec.difficulty && *rec.difficulty < 1)
        throw SchemaError(at("difficulty must be >= 1"));
    for (const auto& probe : rec.neighborhood_probes) {
        if (probe.prompt.empty() || probe.target_true.empty())
            throw SchemaError(at("neighborhood probe with empty prompt or target_true"));
    }
}

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* key,
                                           std::size_t index) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw SchemaError("record " + std::to_string(index) + ": missing field " + key);
    return *it;
}

inline std::string substitute_subject(const std::string& tmpl, const std::string& subject,
                                      std::size_t index) {
    auto pos = tmpl.find("{}");
    if (pos == std::string::npos)
        throw SchemaError("record " + std::to_string(index) +
                          ": missing field requested_rewrite.prompt placeholder {}");
    std::string out = tmpl;
    out.replace(pos, 2, subject);
    return out;
}

} // namespace detail

// Loads the CounterFact array layout. Probes inherit the record-level
// target_true, following the benchmark's convention.
inline std::vector<EditRecord> load_counterfact(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path);

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!doc.is_array())
        throw ParseError(path + ": top-level value is not an array");

    std::vector<EditRecord> records;
    records.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& item = doc[i];
        if (!item.is_object())
            throw ParseError("record " + std::to_string(i) + ": not an object");
        EditRecord rec;
        try {
            const auto& rewrite = detail::require_field(item, "requested_rewrite", i);
            rec.subject = detail::require_field(rewrite, "subject", i).get<std::string>();
            rec.query_prompt = detail::substitute_subject(
                detail::require_field(rewrite, "prompt", i).get<std::string>(), rec.subject, i);
            rec.target_new =
                detail::require_field(detail::require_field(rewrite, "target_new", i), "str", i)
                    .get<std::string>();
            rec.target_true =
                detail::require_field(detail::require_field(rewrite, "target_true", i), "str", i)
                    .get<std::string>();
            rec.case_id = item.value("case_id", static_cast<std::int64_t>(i));
            if (auto it = item.find("paraphrase_prompts"); it != item.end())
                rec.paraphrase_prompts = it->get<std::vector<std::string>>();
            if (auto it = item.find("neighborhood_prompts"); it != item.end()) {
                for (const auto& prompt : *it)
                    rec.neighborhood_probes.push_back({prompt.get<std::string>(), rec.target_true});
            }
        } catch (const SchemaError&) {
            throw;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("record " + std::to_string(i) + ": " + e.what());
        }
        detail::validate_record(rec, i);
        records.push_back(std::move(rec));
    }
    return records;
}

// Native layout: one JSON record per line, field names mirroring EditRecord.
// Probes may override target_true per entry here, unlike the CounterFact layout.
inline std::vector<EditRecord> load_native(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path);

    std::vector<EditRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const std::size_t index = records.size();
        nlohmann::json item;
        try {
            item = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("record " + std::to_string(index) + " (line " +
                             std::to_string(line_no) + "): " + e.what());
        }
        EditRecord rec;
        try {
            rec.case_id = item.value("case_id", static_cast<std::int64_t>(index));
            rec.subject = item.value("subject", std::string{});
            rec.query_prompt = detail::require_field(item, "query_prompt", index).get<std::string>();
            rec.target_new = detail::require_field(item, "target_new", index).get<std::string>();
            rec.target_true = detail::require_field(item, "target_true", index).get<std::string>();
            if (auto it = item.find("paraphrase_prompts"); it != item.end())
                rec.paraphrase_prompts = it->get<std::vector<std::string>>();
            if (auto it = item.find("neighborhood_probes"); it != item.end()) {
                for (const auto& probe : *it) {
                    NeighborhoodProbe p;
                    p.prompt = detail::require_field(probe, "prompt", index).get<std::string>();
                    p.target_true = probe.value("target_true", rec.target_true);
                    rec.neighborhood_probes.push_back(std::move(p));
                }
            }
            if (auto it = item.find("difficulty"); it != item.end())
                rec.difficulty = it->get<int>();
            if (auto it = item.find("topic_tag"); it != item.end())
                rec.topic_tag = it->get<std::string>();
        } catch (const SchemaError&) {
            throw;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("record " + std::to_string(index) + ": " + e.what());
        }
        detail::validate_record(rec, index);
        records.push_back(std::move(rec));
    }
    return records;
}

inline nlohmann::ordered_json record_to_json(const EditRecord& rec) {
    nlohmann::ordered_json item;
    item["case_id"] = rec.case_id;
    item["subject"] = rec.subject;
    item["query_prompt"] = rec.query_prompt;
    item["target_new"] = rec.target_new;
    item["target_true"] = rec.target_true;
    item["paraphrase_prompts"] = rec.paraphrase_prompts;
    auto probes = nlohmann::ordered_json::array();
    for (const auto& p : rec.neighborhood_probes)
        probes.push_back({{"prompt", p.prompt}, {"target_true", p.target_true}});
    item["neighborhood_probes"] = std::move(probes);
    if (rec.difficulty)
        item["difficulty"] = *rec.difficulty;
    if (rec.topic_tag)
        item["topic_tag"] = *rec.topic_tag;
    return item;
}

inline void save_native(const std::vector<EditRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw ParseError("cannot open " + path + " for writing");
    for (const auto& rec : records)
        out << record_to_json(rec).dump() << '\n';
}

// First editable_count records form the editable pool, the rest the demo pool.
inline CorpusSplit split_pools(const std::vector<EditRecord>& records, std::size_t editable_count) {
    if (editable_count == 0 || editable_count > records.size())
        throw ArgumentError("editable_count " + std::to_string(editable_count) +
                            " out of range for " + std::to_string(records.size()) + " records");
    CorpusSplit split;
    split.editable_pool.assign(records.begin(), records.begin() + editable_count);
    split.demo_pool.assign(records.begin() + editable_count, records.end());
    return split;
}

} // namespace drike
