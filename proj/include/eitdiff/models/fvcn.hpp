#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/nn/layers.hpp"
#include "eitdiff/nn/tensor.hpp"

namespace eitdiff {

struct FvcnArch {
    int image = 64;
    std::vector<int> channels{16, 32, 64};
    int hidden = 512;
    int outputs = 208;
};

inline nlohmann::json to_json(const FvcnArch& a) {
    return {{"image", a.image}, {"channels", a.channels}, {"hidden", a.hidden}, {"outputs", a.outputs}};
}

inline FvcnArch fvcn_arch_from_json(const nlohmann::json& j) {
    FvcnArch a;
    a.image = j.at("image").get<int>();
    a.channels = j.at("channels").get<std::vector<int>>();
    a.hidden = j.at("hidden").get<int>();
    a.outputs = j.at("outputs").get<int>();
    return a;
}

// Forward voltage surrogate: stride-2 3x3 convolutions with ReLU, then
// flatten -> dense(hidden) -> ReLU -> dense(outputs). Input [N, 1, H, W]
// normalized image, output [N, outputs] normalized voltages.
template <typename T>
class BasicFvcn {
public:
    explicit BasicFvcn(FvcnArch arch = {}) : arch_(std::move(arch)) {
        require(!arch_.channels.empty(), "fvcn: need at least one conv layer");
        int size = arch_.image;
        int cin = 1;
        convs_.reserve(arch_.channels.size());
        for (std::size_t i = 0; i < arch_.channels.size(); ++i) {
            convs_.emplace_back("conv" + std::to_string(i), cin, arch_.channels[i], 3, 2);
            size = convs_.back().out_size(size);
            cin = arch_.channels[i];
        }
        acts_.resize(convs_.size());
        flat_ = cin * size * size;
        fc1_ = nn::Dense<T>("fc1", flat_, arch_.hidden);
        fc2_ = nn::Dense<T>("fc2", arch_.hidden, arch_.outputs);
    }

    BasicFvcn(const BasicFvcn&) = delete;
    BasicFvcn& operator=(const BasicFvcn&) = delete;

    const FvcnArch& arch() const { return arch_; }

    void init(Rng& rng) {
        for (auto& c : convs_) c.init(rng);
        fc1_.init(rng);
        fc2_.init(rng);
    }

    nn::ParamList<T> params() {
        nn::ParamList<T> out;
        for (auto& c : convs_) c.params(out);
        fc1_.params(out);
        fc2_.params(out);
        return out;
    }

    bool frozen() const { return frozen_; }

    void set_frozen(bool f) {
        frozen_ = f;
        for (auto& c : convs_) c.frozen = f;
        fc1_.frozen = fc2_.frozen = f;
    }

    nn::BasicTensor<T> forward(const nn::BasicTensor<T>& x) {
        require(x.rank() == 4 && x.c() == 1 && x.h() == arch_.image && x.w() == arch_.image,
                "fvcn: expected input [N,1," + std::to_string(arch_.image) + "," + std::to_string(arch_.image) +
                    "], got " + nn::shape_string(x.shape));
        nn::BasicTensor<T> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i) h = acts_[i].forward(convs_[i].forward(h));
        conv_shape_ = h.shape;
        h = fc_act_.forward(fc1_.forward(h.reshaped({h.n(), flat_})));
        return fc2_.forward(h);
    }

    nn::BasicTensor<T> backward(const nn::BasicTensor<T>& gy) {
        nn::BasicTensor<T> g = fc1_.backward(fc_act_.backward(fc2_.backward(gy))).reshaped(conv_shape_);
        for (std::size_t i = convs_.size(); i-- > 0;) g = convs_[i].backward(acts_[i].backward(g));
        return g;
    }

private:
    bool frozen_ = false;
    FvcnArch arch_;
    std::vector<nn::Conv2d<T>> convs_;
    std::vector<nn::ReLU<T>> acts_;
    int flat_ = 0;
    std::vector<int> conv_shape_;
    nn::Dense<T> fc1_;
    nn::ReLU<T> fc_act_;
    nn::Dense<T> fc2_;
};

using Fvcn = BasicFvcn<float>;

} // namespace eitdiff
