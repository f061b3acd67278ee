#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "eitdiff/core/error.hpp"
#include "eitdiff/diffusion/schedule.hpp"

namespace eitdiff {

// Closed-form marginal sigma_t = sqrt(ab_t) sigma0 + sqrt(1 - ab_t) eps.
// t = 0 is accepted and returns sigma0.
inline std::vector<double> forward_sample(std::span<const double> sigma0, int t, std::span<const double> eps,
                                          const NoiseSchedule& sch) {
    require(t >= 0 && t <= sch.T, "forward_sample: timestep out of range");
    require(sigma0.size() == eps.size(), "forward_sample: image and noise sizes differ");
    const double a = std::sqrt(sch.alpha_bar[static_cast<std::size_t>(t)]);
    const double b = std::sqrt(1.0 - sch.alpha_bar[static_cast<std::size_t>(t)]);
    std::vector<double> out(sigma0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * sigma0[i] + b * eps[i];
    return out;
}

// The network predicts eps; the score is s = -eps / sqrt(1 - ab_t). Scores
// are kept in double so that converting back reproduces the float eps exactly.
inline std::vector<double> score_from_eps(std::span<const float> eps, int t, const NoiseSchedule& sch) {
    sch.check_t(t);
    const double r = std::sqrt(1.0 - sch.alpha_bar[static_cast<std::size_t>(t)]);
    std::vector<double> s(eps.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -static_cast<double>(eps[i]) / r;
    return s;
}

inline std::vector<float> eps_from_score(std::span<const double> score, int t, const NoiseSchedule& sch) {
    sch.check_t(t);
    const double r = std::sqrt(1.0 - sch.alpha_bar[static_cast<std::size_t>(t)]);
    std::vector<float> e(score.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<float>(-score[i] * r);
    return e;
}

// Tweedie estimate of the clean image: (sigma_t + (1 - ab_t) s) / sqrt(ab_t).
inline std::vector<double> posterior_mean_estimate(std::span<const double> sigma_t, std::span<const double> score, int t,
                                                   const NoiseSchedule& sch) {
    sch.check_t(t);
    require(sigma_t.size() == score.size(), "posterior_mean_estimate: image and score sizes differ");
    const double ab = sch.alpha_bar[static_cast<std::size_t>(t)];
    const double inv = 1.0 / std::sqrt(ab);
    std::vector<double> out(sigma_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (sigma_t[i] + (1.0 - ab) * score[i]) * inv;
    return out;
}

} // namespace eitdiff
