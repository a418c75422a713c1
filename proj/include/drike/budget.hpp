#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "drike/errors.hpp"
#include "drike/policy.hpp"

namespace drike {

// sigma starts at 0 so at least one retain is always admissible; it only ever
// rises (tighten_threshold) and persists across epochs and into inference.
struct BudgetController {
    double sigma = 0.0;
    std::size_t max_shots = 16;
};

inline BudgetController make_budget_controller(std::size_t max_shots, double sigma = 0.0) {
    if (max_shots < 1)
        throw ArgumentError("budget: max_shots must be >= 1");
    if (sigma < 0.0 || sigma >= 1.0)
        throw ArgumentError("budget: sigma must lie in [0, 1)");
    return {sigma, max_shots};
}

// Candidate indices sorted by probability descending, ties by ascending index.
inline std::vector<std::size_t> ranked_order(const PolicyDistribution& p) {
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&p](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    return order;
}

// k = min(K, |{i : p_i > sigma}|), floored at 1. Admission is strict (>).
inline std::size_t admitted_count(const PolicyDistribution& p,
                                  const BudgetController& controller) {
    if (p.empty())
        throw ArgumentError("admitted_count: empty distribution");
    std::size_t above = 0;
    for (double x : p)
        if (x > controller.sigma) ++above;
    const std::size_t k = std::min(controller.max_shots, above);
    return k == 0 ? 1 : k;
}

// After a success->failure flip when the (j+1)-th ranked retain was added,
// raise sigma to the largest probability at positions beyond j (1-based,
// descending order), so later episodes stop before the harmful tail.
inline BudgetController tighten_threshold(BudgetController controller,
                                          const std::vector<double>& p_descending,
                                          std::size_t j) {
    if (j < 1 || j > p_descending.size())
        throw ArgumentError("tighten_threshold: flip position " + std::to_string(j) +
                            " out of range for " + std::to_string(p_descending.size()) +
                            " candidates");
    double tail_max = controller.sigma;
    for (std::size_t i = j; i < p_descending.size(); ++i)
        tail_max = std::max(tail_max, p_descending[i]);
    controller.sigma = tail_max;
    return controller;
}

} // namespace drike
