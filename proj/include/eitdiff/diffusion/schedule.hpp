#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "eitdiff/core/error.hpp"

namespace eitdiff {

// Discrete variance-preserving schedule. Tables are indexed by t = 0..T with
// alpha_bar[0] = 1 (the clean image); beta, alpha and eta are meaningful for t >= 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> eta; // ((1 - alpha_bar[t-1]) / (1 - alpha_bar[t])) * beta[t]

    void check_t(int t) const { require(t >= 1 && t <= T, "schedule: timestep out of range"); }
};

inline NoiseSchedule cosine_schedule(int T, double s = 0.008, double max_beta = 0.999) {
    require(T >= 10, "cosine_schedule: T must be >= 10");
    auto f = [&](double t) {
        const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule sch;
    sch.T = T;
    sch.beta.assign(T + 1, 0.0);
    sch.alpha.assign(T + 1, 1.0);
    sch.alpha_bar.assign(T + 1, 1.0);
    sch.eta.assign(T + 1, 0.0);
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double target = f(t) / f0;
        const double b = std::clamp(1.0 - target / prev, 0.0, max_beta);
        sch.beta[t] = b;
        sch.alpha[t] = 1.0 - b;
        // products of the clipped alphas, so alpha_bar stays consistent with beta
        sch.alpha_bar[t] = sch.alpha_bar[t - 1] * sch.alpha[t];
        prev = sch.alpha_bar[t];
    }
    for (int t = 1; t <= T; ++t)
        sch.eta[t] = (1.0 - sch.alpha_bar[t - 1]) / (1.0 - sch.alpha_bar[t]) * sch.beta[t];
    return sch;
}

// Evenly spaced, strictly decreasing subsequence of 1..T with `steps` entries,
// starting at T. The sampler walks it and steps to 0 after the last entry.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    require(steps >= 1 && steps <= T, "ddim: steps must be in [1, T]");
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i) {
        const int t = T - static_cast<int>(std::llround(static_cast<double>(i) * T / steps));
        ts.push_back(t);
    }
    return ts;
}

} // namespace eitdiff
