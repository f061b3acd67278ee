#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/diffusion/process.hpp"
#include "eitdiff/diffusion/schedule.hpp"
#include "eitdiff/fem/forward.hpp"
#include "eitdiff/models/train.hpp"
#include "eitdiff/nn/adam.hpp"
#include "eitdiff/nn/grad.hpp"
#include "eitdiff/phantom/raster.hpp"

namespace eitdiff {

enum class EtaMode { deterministic, paper };
enum class VcMode { off, during, after };
enum class VcAssign { literal, renoise };
// Which counter the interval test looks at: the original timestep t of the
// DDIM subsequence element, or the countdown N..1 of DDIM iterations.
enum class VcTrigger { timestep, iteration };

inline EtaMode parse_eta_mode(const std::string& s) {
    if (s == "deterministic") return EtaMode::deterministic;
    if (s == "paper") return EtaMode::paper;
    throw ConfigError("eta mode must be deterministic or paper, got '" + s + "'");
}
inline VcMode parse_vc_mode(const std::string& s) {
    if (s == "off") return VcMode::off;
    if (s == "during") return VcMode::during;
    if (s == "after") return VcMode::after;
    throw ConfigError("vc_mode must be off, during or after, got '" + s + "'");
}
inline VcAssign parse_vc_assign(const std::string& s) {
    if (s == "literal") return VcAssign::literal;
    if (s == "renoise") return VcAssign::renoise;
    throw ConfigError("vc_assign must be literal or renoise, got '" + s + "'");
}
inline VcTrigger parse_vc_trigger(const std::string& s) {
    if (s == "timestep") return VcTrigger::timestep;
    if (s == "iteration") return VcTrigger::iteration;
    throw ConfigError("vc_trigger must be timestep or iteration, got '" + s + "'");
}
inline std::string to_string(VcMode m) { return m == VcMode::off ? "off" : m == VcMode::during ? "during" : "after"; }
inline std::string to_string(EtaMode m) { return m == EtaMode::paper ? "paper" : "deterministic"; }
inline std::string to_string(VcAssign m) { return m == VcAssign::literal ? "literal" : "renoise"; }
inline std::string to_string(VcTrigger m) { return m == VcTrigger::timestep ? "timestep" : "iteration"; }

using WarnFn = std::function<void(const std::string&)>;

inline void default_warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

struct SamplerOptions {
    int ddim_steps = 50;
    EtaMode eta = EtaMode::paper;
    VcMode vc_mode = VcMode::off;
    int vc_interval = 10;
    int vc_iters = 5;
    double vc_lr = 1e-2;
    VcAssign vc_assign = VcAssign::literal;
    VcTrigger vc_trigger = VcTrigger::timestep;
    // Clamp the clean-image estimate to [-clip_x0, clip_x0] (normalized units)
    // before it is used; 0 disables. Near t = T the estimate divides by
    // sqrt(alpha_bar_T) ~ 5e-5 and would otherwise amplify network error.
    double clip_x0 = 1.0;
    std::uint64_t seed = 0;
    WarnFn warn = default_warn;

    void validate(const NoiseSchedule& sch) const {
        require(ddim_steps >= 1 && ddim_steps <= sch.T, "sampler: ddim_steps must be in [1, T]");
        require(vc_interval >= 1, "sampler: vc_interval must be >= 1");
        require(vc_iters >= 0, "sampler: vc_iters must be >= 0");
        require(vc_lr > 0.0, "sampler: vc_lr must be positive");
        require(clip_x0 >= 0.0, "sampler: clip_x0 must be >= 0");
    }
};

inline nlohmann::json to_json(const SamplerOptions& o) {
    return {{"ddim_steps", o.ddim_steps}, {"eta", to_string(o.eta)},           {"vc_mode", to_string(o.vc_mode)},
            {"vc_interval", o.vc_interval}, {"vc_iters", o.vc_iters},          {"vc_lr", o.vc_lr},
            {"vc_assign", to_string(o.vc_assign)}, {"vc_trigger", to_string(o.vc_trigger)}, {"clip_x0", o.clip_x0}, {"seed", o.seed}};
}

// One DDIM update from t to t_prev with eps_theta = -sqrt(1 - ab_t) score.
// The noise std is sqrt(eta_t) in paper mode, 0 in deterministic mode; it is
// clipped so the direction coefficient stays real. The step into t_prev = 0
// always has zero noise (alpha_bar = 1 leaves no room); that clip is silent.
inline std::vector<double> ddim_step(std::span<const double> sigma_t, std::span<const double> sigma0_hat,
                                     std::span<const double> score, int t, int t_prev, const NoiseSchedule& sch,
                                     EtaMode eta, Rng& rng, int* clipped = nullptr, const WarnFn& warn = default_warn) {
    sch.check_t(t);
    require(t_prev >= 0 && t_prev < t, "ddim_step: t_prev must be below t");
    require(sigma_t.size() == sigma0_hat.size() && sigma_t.size() == score.size(), "ddim_step: size mismatch");
    const double ab_t = sch.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_p = sch.alpha_bar[static_cast<std::size_t>(t_prev)];
    double var = eta == EtaMode::paper ? sch.eta[static_cast<std::size_t>(t)] : 0.0;
    if (1.0 - ab_p - var < 0.0) {
        if (clipped) ++*clipped;
        if (t_prev > 0 && warn)
            warn("ddim_step: noise variance " + std::to_string(var) + " at t=" + std::to_string(t) + " clipped to " +
                 std::to_string(1.0 - ab_p));
        var = 1.0 - ab_p;
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - var));
    const double sd = std::sqrt(var);
    const double r = std::sqrt(1.0 - ab_t);
    const double a = std::sqrt(ab_p);
    std::vector<double> out(sigma_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double eps = -r * score[i];
        out[i] = a * sigma0_hat[i] + dir * eps;
        if (sd > 0.0) out[i] += sd * standard_normal(rng);
    }
    return out;
}

struct VcResult {
    std::vector<double> sigma;
    double loss_before = 0.0;
    double loss_after = 0.0;
    int grad_passes = 0; // FVCN forward+backward
    int eval_passes = 0; // FVCN forward only (scoring the last iterate)
    bool finite = true;
};

// Adam on L(sigma) = 1/2 |V - F(sigma)|^2 from sigma0_hat; returns the iterate
// with the lowest L (the start wins ties), so L never increases.
inline VcResult vc_refine(std::span<const double> sigma0_hat, std::span<const float> v_norm, Fvcn& fvcn, int iters,
                          double lr, const WarnFn& warn = default_warn) {
    const int g = fvcn.arch().image;
    require(sigma0_hat.size() == static_cast<std::size_t>(g) * g, "vc_refine: image size differs from the FVCN grid");
    require(v_norm.size() == static_cast<std::size_t>(fvcn.arch().outputs), "vc_refine: voltage length mismatch");
    VcResult res;
    res.sigma.assign(sigma0_hat.begin(), sigma0_hat.end());
    if (iters <= 0) return res;

    nn::Tensor target({1, static_cast<int>(v_norm.size())});
    std::copy(v_norm.begin(), v_norm.end(), target.data.begin());
    auto head = [&](const nn::Tensor& y) { return nn::half_squared_error(y, target); };

    nn::Parameter<float> x("sigma", {1, 1, g, g});
    std::copy(sigma0_hat.begin(), sigma0_hat.end(), x.value.data.begin());
    nn::Adam<float> adam({&x}, {.lr = lr});
    double best = std::numeric_limits<double>::infinity();
    int best_iter = -1;
    std::vector<float> best_x;
    auto fail = [&](int k) {
        if (warn) warn("vc_refine: non-finite FVCN loss at iteration " + std::to_string(k) + "; keeping the input");
        VcResult out;
        out.sigma.assign(sigma0_hat.begin(), sigma0_hat.end());
        out.grad_passes = res.grad_passes;
        out.eval_passes = res.eval_passes;
        out.loss_before = out.loss_after = res.loss_before;
        out.finite = false;
        return out;
    };
    for (int k = 0; k <= iters; ++k) {
        float loss = 0.0f;
        if (k < iters) {
            x.grad = nn::grad_wrt_input(fvcn, x.value, head, &loss);
            ++res.grad_passes;
        } else {
            loss = head(fvcn.forward(x.value)).loss[0];
            ++res.eval_passes;
        }
        if (!std::isfinite(loss) || (k < iters && !x.grad.all_finite())) return fail(k);
        if (k == 0) res.loss_before = loss;
        if (loss < best) {
            best = loss;
            best_iter = k;
            best_x = x.value.data;
        }
        if (k < iters) adam.step();
    }
    res.loss_after = best;
    if (best_iter > 0) res.sigma.assign(best_x.begin(), best_x.end());
    return res;
}

struct StepRecord {
    int iteration = 0; // countdown N..1
    int t = 0;
    int t_prev = 0;
    bool triggered = false;
    double vc_loss_before = std::numeric_limits<double>::quiet_NaN();
    double vc_loss_after = std::numeric_limits<double>::quiet_NaN();
};

// Call counts for cost accounting plus the per-step diagnostic log.
struct SampleStats {
    int score_evals = 0;
    int triggered = 0;
    int fvcn_grad_passes = 0;
    int fvcn_eval_passes = 0;
    int clipped = 0;
    int vc_failures = 0;
    double vc_seconds = 0.0; // wall time spent inside vc_refine
    std::vector<StepRecord> steps;
};

inline void write_step_log(const std::filesystem::path& path, const SampleStats& st) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iteration,t,t_prev,triggered,vc_loss_before,vc_loss_after\n" << std::setprecision(9);
    for (const auto& s : st.steps)
        out << s.iteration << ',' << s.t << ',' << s.t_prev << ',' << (s.triggered ? 1 : 0) << ','
            << s.vc_loss_before << ',' << s.vc_loss_after << '\n';
}

inline bool norms_match(const NormStats& a, const NormStats& b) {
    return a.image_scale == b.image_scale && a.voltage_mean == b.voltage_mean && a.voltage_std == b.voltage_std;
}

// Conditional DDIM from sigma_T ~ N(0, I), optionally with voltage
// consistency. `cond` is the physical initial reconstruction, `v` the
// time-difference frame in volts; the result is physical delta-sigma.
inline PixelImage sample(const PixelImage& cond, const MeasurementFrame& v, ScoreModel& score, FvcnModel* fvcn,
                         const SamplerOptions& opts, SampleStats* stats = nullptr) {
    const auto& sch = score.schedule;
    opts.validate(sch);
    ScoreNet& net = *score.net;
    const int g = net.arch().image;
    require(cond.size == g, "sample: condition image size differs from the score network grid");
    const std::size_t px = static_cast<std::size_t>(g) * g;
    const double scale = score.norm.image_scale;

    std::vector<float> v_norm;
    if (opts.vc_mode != VcMode::off) {
        require(fvcn != nullptr && fvcn->net != nullptr, "sample: voltage consistency needs an FVCN");
        require(fvcn->net->arch().image == g, "sample: FVCN grid differs from the score network grid");
        require(norms_match(score.norm, fvcn->norm), "sample: score network and FVCN were trained with different normalization");
        require(v.kind == FrameKind::time_difference, "sample: voltage consistency needs a time-difference frame");
        v_norm = fvcn->norm.normalize_voltage(std::span<const double>(v.values));
    }

    SampleStats local;
    SampleStats& st = stats ? *stats : local;
    st = SampleStats{};
    Rng rng = make_rng(opts.seed);
    std::vector<double> x(px);
    for (auto& e : x) e = standard_normal(rng);

    nn::Tensor input({1, 2, g, g});
    for (std::size_t i = 0; i < px; ++i) input.plane(0, 1)[i] = static_cast<float>(cond.values[i] / scale);

    auto refine = [&](const std::vector<double>& s0, StepRecord& rec) {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = vc_refine(s0, v_norm, *fvcn->net, opts.vc_iters, opts.vc_lr, opts.warn);
        st.vc_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ++st.triggered;
        st.fvcn_grad_passes += r.grad_passes;
        st.fvcn_eval_passes += r.eval_passes;
        if (!r.finite) ++st.vc_failures;
        rec.triggered = true;
        rec.vc_loss_before = r.loss_before;
        rec.vc_loss_after = r.loss_after;
        return std::move(r.sigma);
    };

    // Clip warnings are collected and reported once per trajectory.
    int clip_warnings = 0;
    std::string first_clip;
    const WarnFn note_clip = [&](const std::string& w) {
        if (clip_warnings++ == 0) first_clip = w;
    };

    const auto ts = ddim_timesteps(sch.T, opts.ddim_steps);
    const int n = static_cast<int>(ts.size());
    for (int i = 0; i < n; ++i) {
        StepRecord rec;
        rec.iteration = n - i;
        rec.t = ts[static_cast<std::size_t>(i)];
        rec.t_prev = i + 1 < n ? ts[static_cast<std::size_t>(i + 1)] : 0;
        for (std::size_t k = 0; k < px; ++k) input.plane(0, 0)[k] = static_cast<float>(x[k]);
        const nn::Tensor eps = net.forward(input, {rec.t});
        ++st.score_evals;
        const auto s = score_from_eps(eps.data, rec.t, sch);
        auto x0 = posterior_mean_estimate(x, s, rec.t, sch);
        if (opts.clip_x0 > 0.0)
            for (auto& e : x0) e = std::clamp(e, -opts.clip_x0, opts.clip_x0);

        const int counter = opts.vc_trigger == VcTrigger::timestep ? rec.t : rec.iteration;
        if (opts.vc_mode == VcMode::during && counter % opts.vc_interval == 0) {
            auto refined = refine(x0, rec);
            if (opts.vc_assign == VcAssign::literal || rec.t_prev == 0) {
                x = std::move(refined);
            } else {
                std::vector<double> z(px);
                for (auto& e : z) e = standard_normal(rng);
                x = forward_sample(refined, rec.t_prev, z, sch);
            }
        } else {
            x = ddim_step(x, x0, s, rec.t, rec.t_prev, sch, opts.eta, rng, &st.clipped, note_clip);
        }
        for (double e : x)
            if (!std::isfinite(e))
                throw NumericalError("sample: non-finite state after DDIM iteration " + std::to_string(rec.iteration) +
                                     " (t=" + std::to_string(rec.t) + ")");
        st.steps.push_back(rec);
    }
    if (clip_warnings > 0 && opts.warn)
        opts.warn(first_clip + (clip_warnings > 1 ? " (and " + std::to_string(clip_warnings - 1) + " more steps)" : ""));
    if (opts.vc_mode == VcMode::after) {
        StepRecord rec;
        x = refine(x, rec);
        st.steps.push_back(rec);
    }

    PixelImage out(g, cond.radius);
    for (std::size_t i = 0; i < px; ++i) out.values[i] = x[i] * scale;
    return out;
}

} // namespace eitdiff
