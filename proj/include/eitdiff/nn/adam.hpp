#pragma once

#include <cmath>
#include <vector>

#include "eitdiff/core/error.hpp"
#include "eitdiff/nn/tensor.hpp"

namespace eitdiff::nn {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Moments are kept in the
// parameter scalar type; the update arithmetic runs in double.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(ParamList<T> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
        for (auto* p : params_) {
            m_.emplace_back(p->value.numel(), T(0));
            v_.emplace_back(p->value.numel(), T(0));
        }
    }

    long step_count() const { return t_; }
    AdamOptions& options() { return opts_; }
    const ParamList<T>& params() const { return params_; }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            require(p.grad.same_shape(p.value), "adam: gradient shape differs from " + p.name);
            for (std::size_t i = 0; i < p.value.numel(); ++i) {
                const double g = p.grad.data[i];
                const double m = opts_.beta1 * m_[k][i] + (1.0 - opts_.beta1) * g;
                const double v = opts_.beta2 * v_[k][i] + (1.0 - opts_.beta2) * g * g;
                m_[k][i] = static_cast<T>(m);
                v_[k][i] = static_cast<T>(v);
                p.value.data[i] = static_cast<T>(p.value.data[i] - opts_.lr * (m / c1) / (std::sqrt(v / c2) + opts_.eps));
            }
        }
    }

    // Flat state for checkpointing: all first moments, then all second moments.
    std::vector<T> state() const {
        std::vector<T> out;
        for (const auto& m : m_) out.insert(out.end(), m.begin(), m.end());
        for (const auto& v : v_) out.insert(out.end(), v.begin(), v.end());
        return out;
    }

    void load_state(const std::vector<T>& flat, long step) {
        std::size_t total = 0;
        for (const auto& m : m_) total += m.size();
        require(flat.size() == 2 * total, "adam: optimizer state size mismatch");
        std::size_t off = 0;
        for (auto& m : m_) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + m.size()), m.begin());
            off += m.size();
        }
        for (auto& v : v_) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
            off += v.size();
        }
        t_ = step;
    }

private:
    ParamList<T> params_;
    AdamOptions opts_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    long t_ = 0;
};

} // namespace eitdiff::nn
