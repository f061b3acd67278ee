#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/nn/tensor.hpp"

// Fixed layer zoo. Every layer caches what its backward pass needs from the
// most recent forward call, so each instance may appear once per graph.
// backward() returns the input gradient and, unless the layer is frozen,
// accumulates parameter gradients.

namespace eitdiff::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Plain left-to-right sum. Eigen's vectorized reductions peel a head that
// depends on the pointer's alignment, which makes results vary between runs.
template <typename T>
T ordered_sum(const T* p, int count, int stride) {
    T s = T(0);
    for (int i = 0; i < count; ++i) s += p[static_cast<std::size_t>(i) * stride];
    return s;
}

// U(-b, b) with b = sqrt(6 / fan_in), the ReLU-gain Kaiming bound.
template <typename T>
void kaiming_uniform(BasicTensor<T>& w, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : w.data) v = static_cast<T>(u(rng));
}

template <typename T>
class Conv2d {
public:
    Parameter<T> weight;
    Parameter<T> bias;
    bool frozen = false;

    Conv2d() = default;
    Conv2d(const std::string& name, int cin, int cout, int k, int stride = 1, int pad = -1)
        : weight(name + ".weight", {cout, cin, k, k}), bias(name + ".bias", {cout}), cin_(cin), cout_(cout), k_(k),
          stride_(stride), pad_(pad < 0 ? k / 2 : pad) {
        require(k % 2 == 1, "conv2d: kernel size must be odd");
        require(stride >= 1, "conv2d: stride must be >= 1");
    }

    void init(Rng& rng) {
        kaiming_uniform(weight.value, cin_ * k_ * k_, rng);
        bias.value.zero();
    }

    void params(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

    BasicTensor<T> forward(const BasicTensor<T>& x) {
        require(x.rank() == 4 && x.c() == cin_,
                "conv2d " + weight.name + ": expected " + std::to_string(cin_) + " channels, got " + shape_string(x.shape));
        x_ = x;
        const int ho = out_size(x.h()), wo = out_size(x.w());
        require(ho >= 1 && wo >= 1, "conv2d: input smaller than the kernel");
        BasicTensor<T> y({x.n(), cout_, ho, wo});
        const ConstMatMap<T> wm(weight.value.data.data(), cout_, cin_ * k_ * k_);
        for (int b = 0; b < x.n(); ++b) {
            MatMap<T> yb(y.item(b), cout_, ho * wo);
            yb.noalias() = wm * columns(x, b, ho, wo);
            for (int o = 0; o < cout_; ++o) yb.row(o).array() += bias.value[static_cast<std::size_t>(o)];
        }
        return y;
    }

    BasicTensor<T> backward(const BasicTensor<T>& gy) {
        const int ho = out_size(x_.h()), wo = out_size(x_.w());
        require(gy.rank() == 4 && gy.n() == x_.n() && gy.c() == cout_ && gy.h() == ho && gy.w() == wo,
                "conv2d: gradient shape mismatch");
        BasicTensor<T> gx(x_.shape);
        const ConstMatMap<T> wm(weight.value.data.data(), cout_, cin_ * k_ * k_);
        MatMap<T> gw(weight.grad.data.data(), cout_, cin_ * k_ * k_);
        RowMat<T> gcols;
        for (int b = 0; b < x_.n(); ++b) {
            const ConstMatMap<T> gyb(gy.item(b), cout_, ho * wo);
            if (!frozen) {
                gw.noalias() += gyb * columns(x_, b, ho, wo).transpose();
                for (int o = 0; o < cout_; ++o) bias.grad[static_cast<std::size_t>(o)] += ordered_sum(gy.item(b) + static_cast<std::size_t>(o) * ho * wo, ho * wo, 1);
            }
            gcols.noalias() = wm.transpose() * gyb;
            col2im(gcols, gx, b, ho, wo);
        }
        return gx;
    }

private:
    // (cin*k*k) x (ho*wo) patch matrix for batch item b.
    const RowMat<T>& columns(const BasicTensor<T>& x, int b, int ho, int wo) {
        const int h = x.h(), w = x.w();
        cols_.resize(cin_ * k_ * k_, ho * wo);
        for (int c = 0; c < cin_; ++c) {
            const T* src = x.plane(b, c);
            for (int ky = 0; ky < k_; ++ky) {
                for (int kx = 0; kx < k_; ++kx) {
                    T* dst = cols_.data() + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * ho * wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            dst[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
                        }
                    }
                }
            }
        }
        return cols_;
    }

    void col2im(const RowMat<T>& g, BasicTensor<T>& gx, int b, int ho, int wo) const {
        const int h = gx.h(), w = gx.w();
        for (int c = 0; c < cin_; ++c) {
            T* dst = gx.plane(b, c);
            for (int ky = 0; ky < k_; ++ky) {
                for (int kx = 0; kx < k_; ++kx) {
                    const T* src = g.data() + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * ho * wo;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }

    int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    BasicTensor<T> x_;
    RowMat<T> cols_;
};

// Affine map over the trailing axes: [N, ...] -> [N, out].
template <typename T>
class Dense {
public:
    Parameter<T> weight;
    Parameter<T> bias;
    bool frozen = false;

    Dense() = default;
    Dense(const std::string& name, int in, int out)
        : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

    void init(Rng& rng) {
        kaiming_uniform(weight.value, in_, rng);
        bias.value.zero();
    }

    void params(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    BasicTensor<T> forward(const BasicTensor<T>& x) {
        require(static_cast<int>(x.stride0()) == in_,
                "dense " + weight.name + ": expected " + std::to_string(in_) + " features, got " + shape_string(x.shape));
        x_ = x;
        BasicTensor<T> y({x.n(), out_});
        const ConstMatMap<T> xm(x.data.data(), x.n(), in_);
        const ConstMatMap<T> wm(weight.value.data.data(), out_, in_);
        MatMap<T> ym(y.data.data(), x.n(), out_);
        ym.noalias() = xm * wm.transpose();
        for (int b = 0; b < x.n(); ++b)
            for (int o = 0; o < out_; ++o) ym(b, o) += bias.value[static_cast<std::size_t>(o)];
        return y;
    }

    BasicTensor<T> backward(const BasicTensor<T>& gy) {
        require(gy.rank() == 2 && gy.n() == x_.n() && gy.dim(1) == out_, "dense: gradient shape mismatch");
        const ConstMatMap<T> gm(gy.data.data(), gy.n(), out_);
        const ConstMatMap<T> xm(x_.data.data(), x_.n(), in_);
        const ConstMatMap<T> wm(weight.value.data.data(), out_, in_);
        if (!frozen) {
            MatMap<T> gw(weight.grad.data.data(), out_, in_);
            gw.noalias() += gm.transpose() * xm;
            for (int o = 0; o < out_; ++o) bias.grad[static_cast<std::size_t>(o)] += ordered_sum(gy.data.data() + o, gy.n(), out_);
        }
        BasicTensor<T> gx(x_.shape);
        MatMap<T> gxm(gx.data.data(), x_.n(), in_);
        gxm.noalias() = gm * wm;
        return gx;
    }

private:
    int in_ = 0, out_ = 0;
    BasicTensor<T> x_;
};

template <typename T>
class ReLU {
public:
    BasicTensor<T> forward(const BasicTensor<T>& x) {
        x_ = x;
        BasicTensor<T> y = x;
        for (auto& v : y.data) v = v > T(0) ? v : T(0);
        return y;
    }
    BasicTensor<T> backward(const BasicTensor<T>& gy) const {
        BasicTensor<T> gx = gy;
        for (std::size_t i = 0; i < gx.numel(); ++i)
            if (!(x_.data[i] > T(0))) gx.data[i] = T(0);
        return gx;
    }

private:
    BasicTensor<T> x_;
};

template <typename T>
class SiLU {
public:
    BasicTensor<T> forward(const BasicTensor<T>& x) {
        x_ = x;
        BasicTensor<T> y = x;
        for (auto& v : y.data) v = v / (T(1) + std::exp(-v));
        return y;
    }
    BasicTensor<T> backward(const BasicTensor<T>& gy) const {
        BasicTensor<T> gx = gy;
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            const T x = x_.data[i];
            const T s = T(1) / (T(1) + std::exp(-x));
            gx.data[i] *= s * (T(1) + x * (T(1) - s));
        }
        return gx;
    }

private:
    BasicTensor<T> x_;
};

template <typename T>
class GroupNorm {
public:
    Parameter<T> gamma;
    Parameter<T> beta;
    bool frozen = false;

    GroupNorm() = default;
    GroupNorm(const std::string& name, int channels, int groups, double eps = 1e-5)
        : gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}), channels_(channels), groups_(groups),
          eps_(eps) {
        require(groups >= 1 && channels % groups == 0, "group_norm: channels must be divisible by groups");
        init();
    }

    void init() {
        std::fill(gamma.value.data.begin(), gamma.value.data.end(), T(1));
        beta.value.zero();
    }

    void params(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    BasicTensor<T> forward(const BasicTensor<T>& x) {
        require(x.rank() == 4 && x.c() == channels_, "group_norm " + gamma.name + ": channel mismatch");
        const int cg = channels_ / groups_;
        const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
        const std::size_t count = static_cast<std::size_t>(cg) * hw;
        xhat_ = BasicTensor<T>(x.shape);
        inv_std_.assign(static_cast<std::size_t>(x.n()) * groups_, T(0));
        BasicTensor<T> y(x.shape);
        for (int b = 0; b < x.n(); ++b) {
            for (int g = 0; g < groups_; ++g) {
                const std::size_t off = (static_cast<std::size_t>(b) * channels_ + g * cg) * hw;
                double mean = 0.0;
                for (std::size_t i = 0; i < count; ++i) mean += x.data[off + i];
                mean /= static_cast<double>(count);
                double var = 0.0;
                for (std::size_t i = 0; i < count; ++i) var += (x.data[off + i] - mean) * (x.data[off + i] - mean);
                var /= static_cast<double>(count);
                const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
                inv_std_[static_cast<std::size_t>(b) * groups_ + g] = inv;
                for (int c = 0; c < cg; ++c) {
                    const int ch = g * cg + c;
                    const T ga = gamma.value[static_cast<std::size_t>(ch)], be = beta.value[static_cast<std::size_t>(ch)];
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t k = off + c * hw + i;
                        xhat_.data[k] = static_cast<T>((x.data[k] - mean)) * inv;
                        y.data[k] = ga * xhat_.data[k] + be;
                    }
                }
            }
        }
        return y;
    }

    BasicTensor<T> backward(const BasicTensor<T>& gy) {
        require(gy.same_shape(xhat_), "group_norm: gradient shape mismatch");
        const int cg = channels_ / groups_;
        const std::size_t hw = static_cast<std::size_t>(gy.h()) * gy.w();
        const double count = static_cast<double>(cg) * static_cast<double>(hw);
        BasicTensor<T> gx(gy.shape);
        for (int b = 0; b < gy.n(); ++b) {
            for (int g = 0; g < groups_; ++g) {
                const std::size_t off = (static_cast<std::size_t>(b) * channels_ + g * cg) * hw;
                double mean_g = 0.0, mean_gx = 0.0;
                for (int c = 0; c < cg; ++c) {
                    const int ch = g * cg + c;
                    const T ga = gamma.value[static_cast<std::size_t>(ch)];
                    double sg = 0.0, sgx = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t k = off + c * hw + i;
                        sg += gy.data[k];
                        sgx += gy.data[k] * xhat_.data[k];
                    }
                    if (!frozen) {
                        gamma.grad[static_cast<std::size_t>(ch)] += static_cast<T>(sgx);
                        beta.grad[static_cast<std::size_t>(ch)] += static_cast<T>(sg);
                    }
                    mean_g += ga * sg;
                    mean_gx += ga * sgx;
                }
                mean_g /= count;
                mean_gx /= count;
                const T inv = inv_std_[static_cast<std::size_t>(b) * groups_ + g];
                for (int c = 0; c < cg; ++c) {
                    const T ga = gamma.value[static_cast<std::size_t>(g * cg + c)];
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t k = off + c * hw + i;
                        gx.data[k] = inv * static_cast<T>(ga * gy.data[k] - mean_g - xhat_.data[k] * mean_gx);
                    }
                }
            }
        }
        return gx;
    }

private:
    int channels_ = 0, groups_ = 1;
    double eps_ = 1e-5;
    BasicTensor<T> xhat_;
    std::vector<T> inv_std_;
};

// Nearest-neighbour 2x upsampling.
template <typename T>
BasicTensor<T> upsample2(const BasicTensor<T>& x) {
    BasicTensor<T> y({x.n(), x.c(), 2 * x.h(), 2 * x.w()});
    for (int b = 0; b < x.n(); ++b)
        for (int c = 0; c < x.c(); ++c) {
            const T* src = x.plane(b, c);
            T* dst = y.plane(b, c);
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j) dst[i * y.w() + j] = src[(i / 2) * x.w() + j / 2];
        }
    return y;
}

template <typename T>
BasicTensor<T> upsample2_backward(const BasicTensor<T>& gy) {
    BasicTensor<T> gx({gy.n(), gy.c(), gy.h() / 2, gy.w() / 2});
    for (int b = 0; b < gy.n(); ++b)
        for (int c = 0; c < gy.c(); ++c) {
            const T* src = gy.plane(b, c);
            T* dst = gx.plane(b, c);
            for (int i = 0; i < gy.h(); ++i)
                for (int j = 0; j < gy.w(); ++j) dst[(i / 2) * gx.w() + j / 2] += src[i * gy.w() + j];
        }
    return gx;
}

// Channel concatenation of two NCHW tensors and its gradient split.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require(a.rank() == 4 && b.rank() == 4 && a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
            "concat: shapes " + shape_string(a.shape) + " and " + shape_string(b.shape) + " differ outside channels");
    BasicTensor<T> y({a.n(), a.c() + b.c(), a.h(), a.w()});
    for (int n = 0; n < a.n(); ++n) {
        std::copy(a.item(n), a.item(n) + a.stride0(), y.item(n));
        std::copy(b.item(n), b.item(n) + b.stride0(), y.item(n) + a.stride0());
    }
    return y;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& gy, int first) {
    BasicTensor<T> ga({gy.n(), first, gy.h(), gy.w()});
    BasicTensor<T> gb({gy.n(), gy.c() - first, gy.h(), gy.w()});
    for (int n = 0; n < gy.n(); ++n) {
        std::copy(gy.item(n), gy.item(n) + ga.stride0(), ga.item(n));
        std::copy(gy.item(n) + ga.stride0(), gy.item(n) + gy.stride0(), gb.item(n));
    }
    return {ga, gb};
}

// Adds a per-(batch, channel) value to every pixel: x[n,c,:,:] += v[n,c].
template <typename T>
void add_channel_bias(BasicTensor<T>& x, const BasicTensor<T>& v) {
    require(v.rank() == 2 && v.n() == x.n() && v.dim(1) == x.c(), "channel bias: shape mismatch");
    const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            T* p = x.plane(n, c);
            const T s = v.data[static_cast<std::size_t>(n) * x.c() + c];
            for (std::size_t i = 0; i < hw; ++i) p[i] += s;
        }
}

template <typename T>
BasicTensor<T> channel_bias_backward(const BasicTensor<T>& gy) {
    BasicTensor<T> gv({gy.n(), gy.c()});
    const std::size_t hw = static_cast<std::size_t>(gy.h()) * gy.w();
    for (int n = 0; n < gy.n(); ++n)
        for (int c = 0; c < gy.c(); ++c) {
            const T* p = gy.plane(n, c);
            T s = T(0);
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
            gv.data[static_cast<std::size_t>(n) * gy.c() + c] = s;
        }
    return gv;
}

// Transformer-style sinusoidal embedding of integer timesteps: [sin(t f_i), cos(t f_i)].
template <typename T>
BasicTensor<T> timestep_embedding(const std::vector<int>& t, int dim) {
    require(dim >= 2 && dim % 2 == 0, "timestep embedding: dimension must be even");
    const int half = dim / 2;
    BasicTensor<T> e({static_cast<int>(t.size()), dim});
    for (std::size_t n = 0; n < t.size(); ++n)
        for (int i = 0; i < half; ++i) {
            const double f = std::exp(-std::log(10000.0) * i / half);
            e.data[n * dim + i] = static_cast<T>(std::sin(t[n] * f));
            e.data[n * dim + half + i] = static_cast<T>(std::cos(t[n] * f));
        }
    return e;
}

} // namespace eitdiff::nn
