#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/nn/layers.hpp"
#include "eitdiff/nn/tensor.hpp"

namespace eitdiff {

struct ScoreNetArch {
    int in_channels = 2; // noisy image + condition
    std::vector<int> channels{32, 64};
    int res_blocks = 2;
    int groups = 8;
    int time_dim = 64;
    int image = 64;
};

inline nlohmann::json to_json(const ScoreNetArch& a) {
    return {{"in_channels", a.in_channels}, {"channels", a.channels}, {"res_blocks", a.res_blocks},
            {"groups", a.groups},           {"time_dim", a.time_dim}, {"image", a.image}};
}

inline ScoreNetArch scorenet_arch_from_json(const nlohmann::json& j) {
    ScoreNetArch a;
    a.in_channels = j.at("in_channels").get<int>();
    a.channels = j.at("channels").get<std::vector<int>>();
    a.res_blocks = j.at("res_blocks").get<int>();
    a.groups = j.at("groups").get<int>();
    a.time_dim = j.at("time_dim").get<int>();
    a.image = j.at("image").get<int>();
    return a;
}

namespace detail {

// GN -> SiLU -> conv, time projection added per channel, GN -> SiLU -> conv,
// plus an identity (or 1x1 conv) shortcut.
template <typename T>
class ResBlock {
public:
    ResBlock(const std::string& name, int cin, int cout, int time_dim, int groups)
        : gn1_(name + ".gn1", cin, std::min(groups, cin)), conv1_(name + ".conv1", cin, cout, 3),
          tproj_(name + ".time", time_dim, cout), gn2_(name + ".gn2", cout, std::min(groups, cout)),
          conv2_(name + ".conv2", cout, cout, 3), has_skip_(cin != cout) {
        if (has_skip_) skip_ = nn::Conv2d<T>(name + ".skip", cin, cout, 1);
    }

    void init(Rng& rng) {
        conv1_.init(rng);
        tproj_.init(rng);
        conv2_.init(rng);
        if (has_skip_) skip_.init(rng);
    }

    void params(nn::ParamList<T>& out) {
        gn1_.params(out);
        conv1_.params(out);
        tproj_.params(out);
        gn2_.params(out);
        conv2_.params(out);
        if (has_skip_) skip_.params(out);
    }

    void set_frozen(bool f) {
        gn1_.frozen = conv1_.frozen = tproj_.frozen = gn2_.frozen = conv2_.frozen = skip_.frozen = f;
    }

    nn::BasicTensor<T> forward(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& temb) {
        nn::BasicTensor<T> h = conv1_.forward(act1_.forward(gn1_.forward(x)));
        nn::add_channel_bias(h, tproj_.forward(tact_.forward(temb)));
        h = conv2_.forward(act2_.forward(gn2_.forward(h)));
        h += has_skip_ ? skip_.forward(x) : x;
        return h;
    }

    // Returns the input gradient; the time-embedding gradient is added to gtemb.
    nn::BasicTensor<T> backward(const nn::BasicTensor<T>& gy, nn::BasicTensor<T>& gtemb) {
        nn::BasicTensor<T> gh = gn2_.backward(act2_.backward(conv2_.backward(gy)));
        gtemb += tact_.backward(tproj_.backward(nn::channel_bias_backward(gh)));
        nn::BasicTensor<T> gx = gn1_.backward(act1_.backward(conv1_.backward(gh)));
        gx += has_skip_ ? skip_.backward(gy) : gy;
        return gx;
    }

private:
    nn::GroupNorm<T> gn1_;
    nn::SiLU<T> act1_;
    nn::Conv2d<T> conv1_;
    nn::SiLU<T> tact_;
    nn::Dense<T> tproj_;
    nn::GroupNorm<T> gn2_;
    nn::SiLU<T> act2_;
    nn::Conv2d<T> conv2_;
    bool has_skip_;
    nn::Conv2d<T> skip_;
};

} // namespace detail

// Conditional U-Net: input [N, 2, H, W] (noisy image, condition), integer
// timesteps, output [N, 1, H, W] noise prediction. One resolution per entry
// of `channels`, halved by stride-2 convolutions and restored by
// nearest-neighbour upsampling with skip concatenation.
template <typename T>
class BasicScoreNet {
public:
    explicit BasicScoreNet(ScoreNetArch arch = {}) : arch_(std::move(arch)) {
        const auto& ch = arch_.channels;
        require(!ch.empty(), "scorenet: need at least one level");
        require(arch_.res_blocks >= 1, "scorenet: need at least one residual block per level");
        require(arch_.image % (1 << (ch.size() - 1)) == 0, "scorenet: image size must be divisible by 2^(levels-1)");
        const int td = arch_.time_dim;
        time1_ = nn::Dense<T>("time.dense1", td, td);
        time2_ = nn::Dense<T>("time.dense2", td, td);
        conv_in_ = nn::Conv2d<T>("conv_in", arch_.in_channels, ch[0], 3);
        const int levels = static_cast<int>(ch.size());
        for (int l = 0; l < levels; ++l) {
            for (int r = 0; r < arch_.res_blocks; ++r)
                down_blocks_.push_back(std::make_unique<detail::ResBlock<T>>(
                    "down" + std::to_string(l) + ".res" + std::to_string(r), ch[l], ch[l], td, arch_.groups));
            if (l + 1 < levels)
                downsample_.push_back(
                    std::make_unique<nn::Conv2d<T>>("down" + std::to_string(l) + ".downsample", ch[l], ch[l + 1], 3, 2));
        }
        for (int l = levels - 2; l >= 0; --l) {
            for (int r = 0; r < arch_.res_blocks; ++r) {
                const int cin = r == 0 ? ch[l + 1] + ch[l] : ch[l];
                up_blocks_.push_back(std::make_unique<detail::ResBlock<T>>(
                    "up" + std::to_string(l) + ".res" + std::to_string(r), cin, ch[l], td, arch_.groups));
            }
        }
        gn_out_ = nn::GroupNorm<T>("out.gn", ch[0], std::min(arch_.groups, ch[0]));
        conv_out_ = nn::Conv2d<T>("out.conv", ch[0], 1, 3);
    }

    BasicScoreNet(const BasicScoreNet&) = delete;
    BasicScoreNet& operator=(const BasicScoreNet&) = delete;

    const ScoreNetArch& arch() const { return arch_; }

    void init(Rng& rng) {
        time1_.init(rng);
        time2_.init(rng);
        conv_in_.init(rng);
        for (auto& b : down_blocks_) b->init(rng);
        for (auto& d : downsample_) d->init(rng);
        for (auto& b : up_blocks_) b->init(rng);
        conv_out_.init(rng);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        time1_.params(out);
        time2_.params(out);
        conv_in_.params(out);
        for (auto& b : down_blocks_) b->params(out);
        for (auto& d : downsample_) d->params(out);
        for (auto& b : up_blocks_) b->params(out);
        gn_out_.params(out);
        conv_out_.params(out);
        return out;
    }

    bool frozen() const { return frozen_; }

    void set_frozen(bool f) {
        frozen_ = f;
        time1_.frozen = time2_.frozen = conv_in_.frozen = gn_out_.frozen = conv_out_.frozen = f;
        for (auto& b : down_blocks_) b->set_frozen(f);
        for (auto& d : downsample_) d->frozen = f;
        for (auto& b : up_blocks_) b->set_frozen(f);
    }

    nn::BasicTensor<T> forward(const nn::BasicTensor<T>& x, const std::vector<int>& t) {
        require(x.rank() == 4 && x.c() == arch_.in_channels && x.h() == arch_.image && x.w() == arch_.image,
                "scorenet: expected input [N," + std::to_string(arch_.in_channels) + "," + std::to_string(arch_.image) +
                    "," + std::to_string(arch_.image) + "], got " + nn::shape_string(x.shape));
        require(static_cast<int>(t.size()) == x.n(), "scorenet: one timestep per batch item");
        temb_ = time2_.forward(time_act_.forward(time1_.forward(nn::timestep_embedding<T>(t, arch_.time_dim))));

        const int levels = static_cast<int>(arch_.channels.size());
        skips_.clear();
        nn::BasicTensor<T> h = conv_in_.forward(x);
        std::size_t bi = 0;
        for (int l = 0; l < levels; ++l) {
            for (int r = 0; r < arch_.res_blocks; ++r) h = down_blocks_[bi++]->forward(h, temb_);
            if (l + 1 < levels) {
                skips_.push_back(h);
                h = downsample_[static_cast<std::size_t>(l)]->forward(h);
            }
        }
        bi = 0;
        for (int l = levels - 2; l >= 0; --l) {
            h = nn::concat_channels(nn::upsample2(h), skips_[static_cast<std::size_t>(l)]);
            for (int r = 0; r < arch_.res_blocks; ++r) h = up_blocks_[bi++]->forward(h, temb_);
        }
        return conv_out_.forward(out_act_.forward(gn_out_.forward(h)));
    }

    // Gradient with respect to the network input [N, 2, H, W].
    nn::BasicTensor<T> backward(const nn::BasicTensor<T>& gy) {
        const auto& ch = arch_.channels;
        const int levels = static_cast<int>(ch.size());
        nn::BasicTensor<T> gtemb(temb_.shape);
        nn::BasicTensor<T> g = gn_out_.backward(out_act_.backward(conv_out_.backward(gy)));
        std::vector<nn::BasicTensor<T>> gskips(skips_.size());
        std::size_t bi = up_blocks_.size();
        for (int l = 0; l <= levels - 2; ++l) {
            for (int r = 0; r < arch_.res_blocks; ++r) g = up_blocks_[--bi]->backward(g, gtemb);
            auto [gup, gskip] = nn::split_channels(g, ch[static_cast<std::size_t>(l + 1)]);
            gskips[static_cast<std::size_t>(l)] = std::move(gskip);
            g = nn::upsample2_backward(gup);
        }
        bi = down_blocks_.size();
        for (int l = levels - 1; l >= 0; --l) {
            if (l + 1 < levels) {
                g = downsample_[static_cast<std::size_t>(l)]->backward(g);
                g += gskips[static_cast<std::size_t>(l)];
            }
            for (int r = 0; r < arch_.res_blocks; ++r) g = down_blocks_[--bi]->backward(g, gtemb);
        }
        nn::BasicTensor<T> gx = conv_in_.backward(g);
        time1_.backward(time_act_.backward(time2_.backward(gtemb)));
        return gx;
    }

private:
    bool frozen_ = false;
    ScoreNetArch arch_;
    nn::Dense<T> time1_;
    nn::SiLU<T> time_act_;
    nn::Dense<T> time2_;
    nn::Conv2d<T> conv_in_;
    std::vector<std::unique_ptr<detail::ResBlock<T>>> down_blocks_;
    std::vector<std::unique_ptr<nn::Conv2d<T>>> downsample_;
    std::vector<std::unique_ptr<detail::ResBlock<T>>> up_blocks_;
    nn::GroupNorm<T> gn_out_;
    nn::SiLU<T> out_act_;
    nn::Conv2d<T> conv_out_;
    nn::BasicTensor<T> temb_;
    std::vector<nn::BasicTensor<T>> skips_;
};

using ScoreNet = BasicScoreNet<float>;

} // namespace eitdiff
