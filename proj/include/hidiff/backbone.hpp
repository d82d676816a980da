#pragma once

#include "hidiff/him.hpp"
#include "hidiff/layers.hpp"
#include "hidiff/model_config.hpp"

#include <optional>
#include <vector>

namespace hidiff {

// Transposed (channel) self-attention: the attention matrix is C x C per
// head, so cost is linear in the number of pixels.
template <std::floating_point T>
class ChannelAttention {
public:
    ChannelAttention() = default;
    ChannelAttention(const ParamScope<T>& scope, int channels, int heads);

    // LN -> qkv (pointwise + depthwise) -> per-head softmax(norm(q) norm(k)^T * temp) v -> proj, residual
    Var<T> operator()(const Var<T>& x) const;
    std::vector<Tensor<T>> attention(const Var<T>& x) const;

    LayerNorm<T> norm;
    Pointwise<T> qkv;
    Depthwise<T> qkv_dw;
    std::vector<Var<T>> temperature;  // one scalar per head
    Pointwise<T> proj;

private:
    Var<T> forward(const Var<T>& x, std::vector<Tensor<T>>* maps) const;
    int channels_ = 0;
    int heads_ = 1;
};

// Gated depthwise feed-forward: gelu(branch1) * branch2, projected back.
template <std::floating_point T>
class GatedFfn {
public:
    GatedFfn() = default;
    GatedFfn(const ParamScope<T>& scope, int channels, double expansion);

    Var<T> operator()(const Var<T>& x) const;
    int hidden() const noexcept { return hidden_; }

    LayerNorm<T> norm;
    Pointwise<T> expand;
    Depthwise<T> expand_dw;
    Pointwise<T> project;

private:
    int hidden_ = 0;
};

template <std::floating_point T>
struct TransformerBlock {
    ChannelAttention<T> attn;
    GatedFfn<T> ffn;

    Var<T> operator()(const Var<T>& x) const { return ffn(attn(x)); }
};

// Four-level encoder-decoder with a HIM in front of every encoder level and
// every decoder level. The network predicts a residual added to the input.
template <std::floating_point T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const ParamScope<T>& scope, const BackboneConfig& cfg, int prior_dim);

    const BackboneConfig& config() const noexcept { return cfg_; }
    int him_count() const noexcept;

    // blur [3, H, W] with H, W divisible by 8. The prior must be given unless
    // the backbone was built without HIMs.
    Var<T> operator()(const Var<T>& blur, const MultiScalePrior<T>* prior) const;

    Conv<T> embed;
    Conv<T> output;
    std::array<std::optional<Him<T>>, 4> encoder_him;
    std::array<std::optional<Him<T>>, 3> decoder_him;  // levels 3, 2, 1

private:
    using Stack = std::vector<TransformerBlock<T>>;
    static Var<T> run(const Stack& stack, Var<T> x);
    Var<T> fuse(const std::optional<Him<T>>& him, int scale, const Var<T>& x, const MultiScalePrior<T>* prior) const;

    BackboneConfig cfg_;
    std::array<Stack, 4> encoder_;
    std::array<Stack, 3> decoder_;  // levels 3, 2, 1
    Stack refinement_;
    std::array<Pointwise<T>, 3> down_;    // after pixel unshuffle
    std::array<Pointwise<T>, 3> up_;      // before pixel shuffle; up_[0] is 4->3
    std::array<Pointwise<T>, 2> reduce_;  // skip fusion at levels 3 and 2
};

}  // namespace hidiff
