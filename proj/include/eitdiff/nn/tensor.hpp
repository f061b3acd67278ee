#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "eitdiff/core/error.hpp"

namespace eitdiff::nn {

// Dense row-major tensor with up to four axes, (batch, channel, height, width)
// for images and (batch, features) for vectors. Training runs in float; the
// same code instantiated with double is used for gradient checks.
template <typename T>
struct BasicTensor {
    std::vector<int> shape;
    std::vector<T> data;

    BasicTensor() = default;
    explicit BasicTensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        require(!shape.empty() && shape.size() <= 4, "tensor: 1 to 4 axes");
        for (int d : shape) require(d > 0, "tensor: axes must be positive");
        data.assign(count(shape), fill);
    }

    static std::size_t count(const std::vector<int>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    }

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    // elements per batch item
    std::size_t stride0() const { return numel() / static_cast<std::size_t>(shape[0]); }

    T* item(int b) { return data.data() + static_cast<std::size_t>(b) * stride0(); }
    const T* item(int b) const { return data.data() + static_cast<std::size_t>(b) * stride0(); }
    T* plane(int b, int ch) { return data.data() + (static_cast<std::size_t>(b) * c() + ch) * h() * w(); }
    const T* plane(int b, int ch) const { return data.data() + (static_cast<std::size_t>(b) * c() + ch) * h() * w(); }

    T& operator[](std::size_t i) { return data[i]; }
    T operator[](std::size_t i) const { return data[i]; }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }
    bool same_shape(const BasicTensor& o) const { return shape == o.shape; }

    BasicTensor reshaped(std::vector<int> s) const {
        require(count(s) == numel(), "tensor: reshape changes the element count");
        BasicTensor out;
        out.shape = std::move(s);
        out.data = data;
        return out;
    }

    BasicTensor& operator+=(const BasicTensor& o) {
        require(same_shape(o), "tensor: shape mismatch in +=");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
    }
};

using Tensor = BasicTensor<float>;

template <typename U, typename T>
BasicTensor<U> tensor_cast(const BasicTensor<T>& t) {
    BasicTensor<U> out;
    out.shape = t.shape;
    out.data.assign(t.data.begin(), t.data.end());
    return out;
}

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

template <typename T>
void check_finite(const BasicTensor<T>& t, const std::string& where) {
    if (!t.all_finite()) throw NumericalError(where + ": non-finite value");
}

// Learnable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (auto* p : params) p->grad.zero();
}

} // namespace eitdiff::nn
