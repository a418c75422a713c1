#pragma once

#include <string>
#include <vector>

#include "drike/demo_selection.hpp"
#include "drike/errors.hpp"

namespace drike {

// Demonstrations arrive already ordered: Copy, then Updates, then admitted
// Retains in selection order.
struct PromptSpec {
    std::vector<Demonstration> demonstrations;
    std::string edit_fact;
    std::string query;
};

// Bit-exact template; the rendered text is the oracle wire payload and is
// covered by golden-file tests.
inline std::string render_prompt(const PromptSpec& spec) {
    if (spec.query.empty())
        throw ArgumentError("render_prompt: empty query");
    std::string out;
    for (const Demonstration& demo : spec.demonstrations) {
        out += "New Fact: ";
        out += demo.fact_statement;
        out += "\nPrompt: ";
        out += demo.demo_query;
        out += " ";
        out += demo.demo_answer;
        out += "\n\n";
    }
    out += "New Fact: ";
    out += spec.edit_fact;
    out += "\nPrompt: ";
    out += spec.query;
    return out;
}

} // namespace drike
