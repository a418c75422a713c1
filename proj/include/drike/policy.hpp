#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "drike/embedding.hpp"
#include "drike/errors.hpp"

namespace drike {

using FeatureVector = std::vector<double>;

// [q; e; q*e; |q-e|] — pairwise interaction features for one (query, candidate).
inline FeatureVector pair_features(const EmbeddingVector& q, const EmbeddingVector& e) {
    if (q.size() != e.size())
        throw ArgumentError("pair_features: dimension mismatch " + std::to_string(q.size()) +
                            " vs " + std::to_string(e.size()));
    FeatureVector f;
    f.reserve(4 * q.size());
    f.insert(f.end(), q.begin(), q.end());
    f.insert(f.end(), e.begin(), e.end());
    for (std::size_t i = 0; i < q.size(); ++i) f.push_back(q[i] * e[i]);
    for (std::size_t i = 0; i < q.size(); ++i) f.push_back(std::abs(q[i] - e[i]));
    return f;
}

struct AdamState {
    std::vector<double> m_weights;
    std::vector<double> v_weights;
    double m_bias = 0.0;
    double v_bias = 0.0;
    std::int64_t step = 0;
};

struct PolicyHead {
    std::vector<double> weights;
    double bias = 0.0;
    AdamState optimizer;
};

// Zero init: the starting policy is uniform regardless of candidate order.
inline PolicyHead make_policy_head(std::size_t feature_dim) {
    PolicyHead head;
    head.weights.assign(feature_dim, 0.0);
    head.optimizer.m_weights.assign(feature_dim, 0.0);
    head.optimizer.v_weights.assign(feature_dim, 0.0);
    return head;
}

inline std::vector<double> score_candidates(const PolicyHead& head,
                                            const std::vector<FeatureVector>& features) {
    std::vector<double> z;
    z.reserve(features.size());
    for (const FeatureVector& f : features) {
        if (f.size() != head.weights.size())
            throw ArgumentError("score_candidates: feature dimension " +
                                std::to_string(f.size()) + " does not match head dimension " +
                                std::to_string(head.weights.size()));
        double acc = head.bias;
        for (std::size_t i = 0; i < f.size(); ++i) acc += head.weights[i] * f[i];
        z.push_back(acc);
    }
    return z;
}

using PolicyDistribution = std::vector<double>;

// Max-shifted softmax; entries sum to 1 within 1e-9.
inline PolicyDistribution softmax_policy(const std::vector<double>& z) {
    if (z.empty())
        throw ArgumentError("softmax: empty score sequence");
    for (double x : z)
        if (!std::isfinite(x))
            throw NumericError("softmax: non-finite score");
    const double zmax = *std::max_element(z.begin(), z.end());
    PolicyDistribution p(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - zmax);
        total += p[i];
    }
    for (double& x : p) x /= total;
    return p;
}

// Portable uniform draw in [0, 1): top 53 bits of the generator output.
inline double uniform_draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF sampling in candidate order; bit-stable across platforms.
inline std::size_t sample_action(const PolicyDistribution& p, std::mt19937_64& rng) {
    if (p.empty())
        throw ArgumentError("sample_action: empty distribution");
    const double u = uniform_draw(rng);
    double cumulative = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cumulative += p[i];
        if (u < cumulative) return i;
    }
    return p.size() - 1;
}

// One admission decision: which candidate was taken, at what probability,
// with what reward, and which candidates the policy was choosing among.
// Ranked mode keeps every candidate active at every step; sampling mode
// shrinks the active set as candidates are consumed.
struct TrajectoryStep {
    std::size_t chosen;
    double probability;
    double reward;
    std::vector<std::size_t> active;
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;

    std::size_t length() const { return steps.size(); }
};

struct ReinforceGrad {
    double loss = 0.0;
    std::vector<double> d_weights;
    double d_bias = 0.0;
};

// L = -sum_t r_t log pi(a_t | s_t), with each step's distribution recomputed
// from the current head over that step's active candidates. Per step,
// dL/dz_i = -r_t (1[i = a_t] - p_i); chain through z_i = w.f_i + b.
inline ReinforceGrad reinforce_loss_and_grad(const PolicyHead& head,
                                             const Trajectory& trajectory,
                                             const std::vector<FeatureVector>& features) {
    if (trajectory.steps.empty())
        throw ArgumentError("reinforce: empty trajectory");
    ReinforceGrad out;
    out.d_weights.assign(head.weights.size(), 0.0);
    for (const TrajectoryStep& step : trajectory.steps) {
        std::vector<FeatureVector> active_features;
        active_features.reserve(step.active.size());
        std::size_t chosen_pos = step.active.size();
        for (std::size_t pos = 0; pos < step.active.size(); ++pos) {
            const std::size_t idx = step.active[pos];
            if (idx >= features.size())
                throw ArgumentError("reinforce: candidate index out of range");
            if (idx == step.chosen) chosen_pos = pos;
            active_features.push_back(features[idx]);
        }
        if (chosen_pos == step.active.size())
            throw ArgumentError("reinforce: chosen candidate not in active set");
        const PolicyDistribution p = softmax_policy(score_candidates(head, active_features));
        out.loss -= step.reward * std::log(p[chosen_pos]);
        for (std::size_t pos = 0; pos < step.active.size(); ++pos) {
            const double dz =
                -step.reward * ((pos == chosen_pos ? 1.0 : 0.0) - p[pos]);
            const FeatureVector& f = active_features[pos];
            for (std::size_t i = 0; i < f.size(); ++i) out.d_weights[i] += dz * f[i];
            out.d_bias += dz;
        }
    }
    return out;
}

inline double reinforce_loss(const PolicyHead& head, const Trajectory& trajectory,
                             const std::vector<FeatureVector>& features) {
    return reinforce_loss_and_grad(head, trajectory, features).loss;
}

namespace detail {

inline void adam_step(double grad, double& param, double& m, double& v, double lr,
                      double bias_corr1, double bias_corr2) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad * grad;
    param -= lr * (m / bias_corr1) / (std::sqrt(v / bias_corr2) + eps);
}

} // namespace detail

// One Adam step on the episode's accumulated gradient. Only head parameters
// move; features and embeddings stay frozen.
inline PolicyHead reinforce_update(PolicyHead head, const Trajectory& trajectory,
                                   const std::vector<FeatureVector>& features,
                                   double learning_rate) {
    const ReinforceGrad grad = reinforce_loss_and_grad(head, trajectory, features);
    AdamState& opt = head.optimizer;
    ++opt.step;
    const double bias_corr1 = 1.0 - std::pow(0.9, static_cast<double>(opt.step));
    const double bias_corr2 = 1.0 - std::pow(0.999, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < head.weights.size(); ++i)
        detail::adam_step(grad.d_weights[i], head.weights[i], opt.m_weights[i],
                          opt.v_weights[i], learning_rate, bias_corr1, bias_corr2);
    detail::adam_step(grad.d_bias, head.bias, opt.m_bias, opt.v_bias, learning_rate,
                      bias_corr1, bias_corr2);
    return head;
}

} // namespace drike
