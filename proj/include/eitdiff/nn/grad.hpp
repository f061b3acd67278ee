#pragma once

#include <cmath>

#include "eitdiff/core/error.hpp"
#include "eitdiff/nn/tensor.hpp"

namespace eitdiff::nn {

// A loss head returns the loss (must hold a single element) and its gradient
// with respect to the model output.
template <typename T>
struct LossValue {
    BasicTensor<T> loss;
    BasicTensor<T> grad;
};

// 1/2 |y - target|^2 summed over all entries.
template <typename T>
LossValue<T> half_squared_error(const BasicTensor<T>& y, const BasicTensor<T>& target) {
    require(y.same_shape(target), "half_squared_error: shape mismatch");
    LossValue<T> out{BasicTensor<T>({1}), BasicTensor<T>(y.shape)};
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double d = static_cast<double>(y.data[i]) - target.data[i];
        acc += 0.5 * d * d;
        out.grad.data[i] = static_cast<T>(d);
    }
    out.loss.data[0] = static_cast<T>(acc);
    return out;
}

// Exact reverse-mode gradient of head(model(x)) with respect to x. The
// model's parameters are frozen for the call, so their gradient
// accumulators are left untouched.
template <typename Model, typename T, typename Head>
BasicTensor<T> grad_wrt_input(Model& model, const BasicTensor<T>& x, Head&& head, T* loss_out = nullptr) {
    const bool was_frozen = model.frozen();
    model.set_frozen(true);
    try {
        const BasicTensor<T> y = model.forward(x);
        const LossValue<T> lv = head(y);
        require(lv.loss.numel() == 1, "grad_wrt_input: loss must be a scalar, got " + shape_string(lv.loss.shape));
        require(lv.grad.same_shape(y), "grad_wrt_input: loss gradient shape differs from the model output");
        if (loss_out) *loss_out = lv.loss.data[0];
        BasicTensor<T> gx = model.backward(lv.grad);
        model.set_frozen(was_frozen);
        return gx;
    } catch (...) {
        model.set_frozen(was_frozen);
        throw;
    }
}

} // namespace eitdiff::nn
