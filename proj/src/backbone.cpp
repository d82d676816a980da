#include "hidiff/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace hidiff {

template <std::floating_point T>
ChannelAttention<T>::ChannelAttention(const ParamScope<T>& scope, int channels, int heads)
    : norm(scope.sub("norm"), channels),
      qkv(scope.sub("qkv"), channels, 3 * channels),
      qkv_dw(scope.sub("qkv_dw"), 3 * channels),
      proj(scope.sub("proj"), channels, channels),
      channels_(channels),
      heads_(heads) {
    if (heads < 1 || channels % heads) throw std::invalid_argument("attention channels must be divisible by heads");
    for (int h = 0; h < heads; ++h) temperature.push_back(scope.param("temperature" + std::to_string(h), {1}, Init::ones()));
}

template <std::floating_point T>
Var<T> ChannelAttention<T>::forward(const Var<T>& x, std::vector<Tensor<T>>* maps) const {
    const int c = channels_;
    const int dh = c / heads_;
    auto qkv_map = qkv_dw(qkv(norm(x)));  // [3C, H, W]
    std::vector<Var<T>> outs;
    outs.reserve(heads_);
    for (int h = 0; h < heads_; ++h) {
        auto q = ops::l2_normalize_rows(ops::slice_rows(qkv_map, h * dh, (h + 1) * dh));
        auto k = ops::l2_normalize_rows(ops::slice_rows(qkv_map, c + h * dh, c + (h + 1) * dh));
        auto v = ops::slice_rows(qkv_map, 2 * c + h * dh, 2 * c + (h + 1) * dh);
        auto attn = ops::softmax_rows(ops::scale_by(ops::matmul(q, k, false, true), temperature[h]));  // [dh, dh]
        if (!attn.value().all_finite()) throw std::runtime_error("channel attention: non-finite activations");
        if (maps) maps->push_back(attn.value());
        outs.push_back(ops::matmul(attn, v));  // [dh, P]
    }
    auto merged = heads_ == 1 ? outs.front() : ops::concat_rows(outs);
    return ops::add(x, proj(merged));
}

template <std::floating_point T>
Var<T> ChannelAttention<T>::operator()(const Var<T>& x) const {
    return forward(x, nullptr);
}

template <std::floating_point T>
std::vector<Tensor<T>> ChannelAttention<T>::attention(const Var<T>& x) const {
    NoGradGuard guard;
    std::vector<Tensor<T>> maps;
    forward(x, &maps);
    return maps;
}

template <std::floating_point T>
GatedFfn<T>::GatedFfn(const ParamScope<T>& scope, int channels, double expansion)
    : hidden_(ffn_hidden_width(channels, expansion)) {
    norm = LayerNorm<T>(scope.sub("norm"), channels);
    expand = Pointwise<T>(scope.sub("expand"), channels, 2 * hidden_);
    expand_dw = Depthwise<T>(scope.sub("expand_dw"), 2 * hidden_);
    project = Pointwise<T>(scope.sub("project"), hidden_, channels);
}

template <std::floating_point T>
Var<T> GatedFfn<T>::operator()(const Var<T>& x) const {
    auto h = expand_dw(expand(norm(x)));
    auto gate = ops::gelu(ops::slice_rows(h, 0, hidden_));
    auto value = ops::slice_rows(h, hidden_, 2 * hidden_);
    return ops::add(x, project(ops::mul(gate, value)));
}

namespace {

template <std::floating_point T>
std::vector<TransformerBlock<T>> make_stack(const ParamScope<T>& scope, int count, int channels, int heads,
                                            double expansion) {
    std::vector<TransformerBlock<T>> stack;
    for (int i = 0; i < count; ++i) {
        auto s = scope.sub(std::to_string(i));
        stack.push_back({ChannelAttention<T>(s.sub("attn"), channels, heads), GatedFfn<T>(s.sub("ffn"), channels, expansion)});
    }
    return stack;
}

}  // namespace

template <std::floating_point T>
Backbone<T>::Backbone(const ParamScope<T>& scope, const BackboneConfig& cfg, int prior_dim) : cfg_(cfg) {
    const auto& ch = cfg.channels;
    const bool with_him = cfg.prior != PriorMode::none;
    embed = Conv<T>(scope.sub("embed"), 3, ch[0], 3, 1, false);
    for (int l = 0; l < 4; ++l) {
        const std::string name = "encoder" + std::to_string(l + 1);
        if (with_him) encoder_him[l].emplace(scope.sub(name + ".him"), ch[l], prior_dim, cfg.heads[l]);
        encoder_[l] = make_stack(scope.sub(name + ".blocks"), cfg.blocks[l], ch[l], cfg.heads[l], cfg.expansion);
        if (l < 3) down_[l] = Pointwise<T>(scope.sub("down" + std::to_string(l + 1)), 4 * ch[l], ch[l + 1]);
    }
    // decoder index d handles level 3 - d
    for (int d = 0; d < 3; ++d) {
        const int level = 2 - d;  // 0-based level index
        const int width = level == 0 ? 2 * ch[0] : ch[level];
        const std::string name = "decoder" + std::to_string(level + 1);
        up_[d] = Pointwise<T>(scope.sub("up" + std::to_string(level + 2)), ch[level + 1], 2 * ch[level + 1]);
        if (level > 0) reduce_[d] = Pointwise<T>(scope.sub(name + ".reduce"), 2 * ch[level], ch[level]);
        if (with_him) decoder_him[d].emplace(scope.sub(name + ".him"), width, prior_dim, cfg.heads[level]);
        decoder_[d] = make_stack(scope.sub(name + ".blocks"), cfg.blocks[level], width, cfg.heads[level], cfg.expansion);
    }
    refinement_ = make_stack(scope.sub("refinement"), cfg.refinement, 2 * ch[0], cfg.heads[0], cfg.expansion);
    output = Conv<T>(scope.sub("output"), 2 * ch[0], 3, 3, 1, false);
    output.weight.mutable_value().fill(T(0));  // starts as the identity on the blurry input
}

template <std::floating_point T>
int Backbone<T>::him_count() const noexcept {
    int n = 0;
    for (const auto& h : encoder_him) n += h.has_value();
    for (const auto& h : decoder_him) n += h.has_value();
    return n;
}

template <std::floating_point T>
Var<T> Backbone<T>::run(const Stack& stack, Var<T> x) {
    for (const auto& block : stack) x = block(x);
    return x;
}

template <std::floating_point T>
Var<T> Backbone<T>::fuse(const std::optional<Him<T>>& him, int scale, const Var<T>& x,
                         const MultiScalePrior<T>* prior) const {
    if (!him) return x;
    if (!prior) throw std::invalid_argument("backbone built with HIMs needs a prior");
    const Var<T>& tokens = prior->scale(scale);
    if (!tokens.defined()) throw std::invalid_argument("missing prior scale " + std::to_string(scale));
    return (*him)(x, tokens);
}

template <std::floating_point T>
Var<T> Backbone<T>::operator()(const Var<T>& blur, const MultiScalePrior<T>* prior) const {
    const Shape& s = blur.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] % 8 || s[2] % 8 || s[1] < 8 || s[2] < 8) {
        throw std::invalid_argument("backbone input must be [3, H, W] with H, W divisible by 8, got " + shape_str(s));
    }
    std::array<Var<T>, 4> skips;
    Var<T> x = embed(blur);
    for (int l = 0; l < 4; ++l) {
        x = fuse(encoder_him[l], cfg_.encoder_scales[l], x, prior);
        x = run(encoder_[l], x);
        skips[l] = x;
        if (l < 3) x = down_[l](ops::pixel_unshuffle(x));
    }
    for (int d = 0; d < 3; ++d) {
        const int level = 2 - d;
        x = ops::pixel_shuffle(up_[d](x));
        x = ops::concat_rows<T>({x, skips[level]});
        if (level > 0) x = reduce_[d](x);
        x = fuse(decoder_him[d], cfg_.decoder_scales[d], x, prior);
        x = run(decoder_[d], x);
    }
    x = run(refinement_, x);
    return ops::add(blur, output(x));
}

template class ChannelAttention<float>;
template class ChannelAttention<double>;
template class GatedFfn<float>;
template class GatedFfn<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace hidiff
