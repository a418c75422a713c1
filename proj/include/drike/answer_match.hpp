#pragma once

#include <cctype>
#include <string>
#include <string_view>

namespace drike {

// Canonical answer normalization, shared by the oracle-side reward check and
// corpus validation: lowercase, trim, strip punctuation off both ends, and
// collapse internal whitespace runs to single spaces.
inline std::string normalize_answer(std::string_view text) {
    auto is_ws = [](unsigned char c) { return std::isspace(c) != 0; };
    auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };

    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && (is_ws(text[begin]) || is_punct(text[begin]))) ++begin;
    while (end > begin && (is_ws(text[end - 1]) || is_punct(text[end - 1]))) --end;

    std::string out;
    out.reserve(end - begin);
    bool pending_space = false;
    for (std::size_t i = begin; i < end; ++i) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_ws(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

// True when either normalized side is a prefix of the other. Black-box
// completions usually run past the object token, so an exact-equality
// check would under-count correct answers.
inline bool match_answer(std::string_view response_text, std::string_view target) {
    const std::string a = normalize_answer(response_text);
    const std::string b = normalize_answer(target);
    if (a.empty() || b.empty()) return false;
    return a.starts_with(b) || b.starts_with(a);
}

} // namespace drike
