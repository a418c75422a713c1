#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "drike/errors.hpp"

namespace drike {

using EmbeddingVector = std::vector<double>;

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(const EmbeddingVector& v) { return std::sqrt(dot(v, v)); }

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size())
        throw ArgumentError("cosine: dimension mismatch " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

inline bool is_blank(std::string_view text) {
    return std::all_of(text.begin(), text.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

// "http://host:port/path" -> {"http://host:port", "/path"}
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ArgumentError("endpoint is not a well-formed URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace detail

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dimension() const = 0;

protected:
    friend EmbeddingVector embed_text(const EmbeddingProvider&, const std::string&);
    virtual EmbeddingVector embed_impl(const std::string& text) const = 0;
};

// Deterministic per (provider, text); output is unit-norm.
inline EmbeddingVector embed_text(const EmbeddingProvider& provider, const std::string& text) {
    if (detail::is_blank(text))
        throw ArgumentError("embed_text: text is empty after whitespace trim");
    EmbeddingVector v = provider.embed_impl(text);
    const double norm = l2_norm(v);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    } else if (!v.empty()) {
        // Signed buckets cancelled out exactly; fall back to a one-hot so the
        // unit-norm contract still holds.
        v[detail::fnv1a64(text) % v.size()] = 1.0;
    }
    return v;
}

// Signed feature hashing over lowercase token n-grams. Tokens are split on
// whitespace and punctuation; each n-gram is hashed into one of `dimension`
// buckets with FNV-1a, the sign comes from a second (splitmix64) hash bit.
class HashEmbedder final : public EmbeddingProvider {
public:
    explicit HashEmbedder(std::size_t dimension = 256, int ngram_min = 1, int ngram_max = 2)
        : dimension_(dimension), ngram_min_(ngram_min), ngram_max_(ngram_max) {
        if (dimension < 8)
            throw ArgumentError("hash embedder dimension must be >= 8");
        if (ngram_min < 1 || ngram_max < ngram_min)
            throw ArgumentError("bad ngram range");
    }

    std::size_t dimension() const override { return dimension_; }

protected:
    EmbeddingVector embed_impl(const std::string& text) const override {
        const auto tokens = detail::tokenize(text);
        EmbeddingVector v(dimension_, 0.0);
        std::string key;
        for (int n = ngram_min_; n <= ngram_max_; ++n) {
            if (tokens.size() < static_cast<std::size_t>(n)) break;
            for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
                key.clear();
                for (int j = 0; j < n; ++j) {
                    if (j) key.push_back('\x1f');
                    key += tokens[i + j];
                }
                const std::uint64_t h = detail::fnv1a64(key);
                const double sign = (detail::splitmix64(h) & 1u) ? 1.0 : -1.0;
                v[h % dimension_] += sign;
            }
        }
        return v;
    }

private:
    std::size_t dimension_;
    int ngram_min_;
    int ngram_max_;
};

// Replays embeddings precomputed offline with any real encoder. Keys are the
// exact raw text. File format: one {"text", "vector"} JSON record per line.
class FileStoreProvider final : public EmbeddingProvider {
public:
    explicit FileStoreProvider(const std::string& path) {
        std::ifstream in(path);
        if (!in)
            throw ParseError("cannot open embedding store " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::is_blank(line)) continue;
            nlohmann::json item;
            try {
                item = nlohmann::json::parse(line);
                EmbeddingVector vec = item.at("vector").get<EmbeddingVector>();
                if (dimension_ == 0) dimension_ = vec.size();
                if (vec.size() != dimension_)
                    throw ParseError(path + " line " + std::to_string(line_no) +
                                     ": inconsistent vector dimension");
                store_[item.at("text").get<std::string>()] = std::move(vec);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    explicit FileStoreProvider(std::map<std::string, EmbeddingVector> store)
        : store_(std::move(store)) {
        if (!store_.empty()) dimension_ = store_.begin()->second.size();
    }

    std::size_t dimension() const override { return dimension_; }

protected:
    EmbeddingVector embed_impl(const std::string& text) const override {
        auto it = store_.find(text);
        if (it == store_.end())
            throw LookupError("embedding store has no entry for text key: " + text);
        return it->second;
    }

private:
    std::map<std::string, EmbeddingVector> store_;
    std::size_t dimension_ = 0;
};

struct RemoteProviderConfig {
    std::string endpoint;
    int timeout_ms = 5000;
    int retries = 3;
    int backoff_ms = 100;
};

// POST {"texts": [...]} -> {"vectors": [[...], ...]}
class RemoteProvider final : public EmbeddingProvider {
public:
    RemoteProvider(RemoteProviderConfig config, std::size_t dimension)
        : config_(std::move(config)), dimension_(dimension) {
        std::tie(base_, path_) = detail::split_url(config_.endpoint);
    }

    std::size_t dimension() const override { return dimension_; }

protected:
    EmbeddingVector embed_impl(const std::string& text) const override {
        const std::string body = nlohmann::json{{"texts", {text}}}.dump();
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
                auto doc = nlohmann::json::parse(res->body);
                return doc.at("vectors").at(0).get<EmbeddingVector>();
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("bad response body: ") + e.what();
            }
        }
        throw TransportError("embedding request failed: " + last_error, config_.retries);
    }

private:
    RemoteProviderConfig config_;
    std::size_t dimension_;
    std::string base_;
    std::string path_;
};

// Memoizes another provider by exact text. Not safe for concurrent embeds;
// intended for the sequential training/evaluation loops.
class CachingProvider final : public EmbeddingProvider {
public:
    explicit CachingProvider(const EmbeddingProvider& inner) : inner_(inner) {}

    std::size_t dimension() const override { return inner_.dimension(); }

protected:
    EmbeddingVector embed_impl(const std::string& text) const override {
        auto it = cache_.find(text);
        if (it == cache_.end())
            it = cache_.emplace(text, embed_text(inner_, text)).first;
        return it->second;
    }

private:
    const EmbeddingProvider& inner_;
    mutable std::map<std::string, EmbeddingVector> cache_;
};

struct ScoredId {
    std::int64_t id;
    double similarity;
};

// Exact top-n by cosine similarity, descending; ties break by ascending id.
inline std::vector<ScoredId> cosine_knn(
    const EmbeddingVector& query,
    const std::vector<std::pair<std::int64_t, EmbeddingVector>>& pool, std::size_t n) {
    if (n == 0)
        throw ArgumentError("cosine_knn: n must be >= 1");
    std::vector<ScoredId> scored;
    scored.reserve(pool.size());
    for (const auto& [id, vec] : pool)
        scored.push_back({id, cosine_similarity(query, vec)});
    std::sort(scored.begin(), scored.end(), [](const ScoredId& a, const ScoredId& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    if (scored.size() > n) scored.resize(n);
    return scored;
}

} // namespace drike
