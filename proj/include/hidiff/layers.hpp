#pragma once

#include "hidiff/ops.hpp"
#include "hidiff/params.hpp"

namespace hidiff {

// Thin parameter holders around the primitive ops.

template <std::floating_point T>
struct Conv {
    Var<T> weight, bias;  // bias undefined when disabled
    int stride = 1;

    Conv() = default;
    Conv(const ParamScope<T>& s, int cin, int cout, int k, int stride_ = 1, bool with_bias = true)
        : weight(s.param("weight", {cout, cin, k, k})), stride(stride_) {
        if (with_bias) bias = s.param("bias", {cout}, Init::zeros());
    }
    Var<T> operator()(const Var<T>& x) const {
        const int k = weight.shape()[2];
        auto y = ops::conv2d(x, weight, stride, k / 2);
        return bias.defined() ? ops::add_row_bias(y, bias) : y;
    }
};

// 1x1 convolution / linear layer over the leading dimension.
template <std::floating_point T>
struct Pointwise {
    Var<T> weight, bias;

    Pointwise() = default;
    Pointwise(const ParamScope<T>& s, int cin, int cout, bool with_bias = false)
        : weight(s.param("weight", {cout, cin})) {
        if (with_bias) bias = s.param("bias", {cout}, Init::zeros());
    }
    Var<T> operator()(const Var<T>& x) const {
        auto y = ops::pointwise(weight, x);
        return bias.defined() ? ops::add_row_bias(y, bias) : y;
    }
};

template <std::floating_point T>
struct Depthwise {
    Var<T> weight;

    Depthwise() = default;
    Depthwise(const ParamScope<T>& s, int channels) : weight(s.param("weight", {channels, 3, 3})) {}
    Var<T> operator()(const Var<T>& x) const { return ops::depthwise3x3(x, weight); }
};

template <std::floating_point T>
struct LayerNorm {
    Var<T> gain, bias;

    LayerNorm() = default;
    LayerNorm(const ParamScope<T>& s, int channels)
        : gain(s.param("gain", {channels}, Init::ones())), bias(s.param("bias", {channels}, Init::zeros())) {}
    Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gain, bias); }
};

}  // namespace hidiff
