#include "hidiff/latent_codec.hpp"

#include <cmath>
#include <stdexcept>

namespace hidiff {

template <std::floating_point T>
LatentEncoder<T>::LatentEncoder(const ParamScope<T>& scope, const CodecConfig& cfg, int in_channels)
    : cfg_(cfg), in_channels_(in_channels) {
    grid_ = static_cast<int>(std::lround(std::sqrt(double(cfg.tokens))));
    if (grid_ * grid_ != cfg.tokens) {
        throw std::invalid_argument("token count " + std::to_string(cfg.tokens) + " is not a perfect square");
    }
    int width = cfg.width;
    embed_ = Conv<T>(scope.sub("embed"), in_channels, width, 3);
    for (int i = 0; i < cfg.blocks; ++i) {
        auto bs = scope.sub("block" + std::to_string(i));
        blocks_.push_back({Conv<T>(bs.sub("conv1"), width, width, 3), Conv<T>(bs.sub("conv2"), width, width, 3)});
        const bool pair_done = i % 2 == 1;
        if (pair_done && i + 1 < cfg.blocks) {
            downs_.emplace_back(scope.sub("down" + std::to_string(downs_.size())), width, 2 * width, 3, 2);
            width *= 2;
        }
    }
    proj1_ = Pointwise<T>(scope.sub("proj1"), width, cfg.dim, true);
    proj2_ = Pointwise<T>(scope.sub("proj2"), cfg.dim, cfg.dim, true);
}

template <std::floating_point T>
Var<T> LatentEncoder<T>::operator()(const Var<T>& image) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != in_channels_) {
        throw std::invalid_argument("latent encoder expects " + std::to_string(in_channels_) + " input channels, got " +
                                    shape_str(s));
    }
    Var<T> x = embed_(image);
    size_t next_down = 0;
    for (size_t i = 0; i < blocks_.size(); ++i) {
        auto h = ops::gelu(blocks_[i].conv1(x));
        x = ops::add(x, blocks_[i].conv2(h));
        if (i % 2 == 1 && next_down < downs_.size()) x = downs_[next_down++](x);
    }
    return token_pool(x);
}

template <std::floating_point T>
Var<T> LatentEncoder<T>::token_pool(const Var<T>& features) const {
    auto pooled = ops::adaptive_avg_pool(features, grid_);  // [C, g, g]
    auto h = ops::gelu(proj1_(pooled));
    return ops::transpose(proj2_(h));  // [N, C']
}

template <std::floating_point T>
Var<T> encode_prior(const LatentEncoder<T>& le, const Var<T>& gt, const Var<T>& blur) {
    if (le.in_channels() != 6) throw std::invalid_argument("encode_prior needs a 6-channel latent encoder");
    if (gt.shape() != blur.shape()) {
        throw std::invalid_argument("ground truth " + shape_str(gt.shape()) + " and blur " + shape_str(blur.shape()) +
                                    " differ in shape");
    }
    return le(ops::concat_rows<T>({gt, blur}));
}

template <std::floating_point T>
Var<T> encode_condition(const LatentEncoder<T>& le_dm, const Var<T>& blur) {
    if (le_dm.in_channels() != 3) throw std::invalid_argument("encode_condition needs a 3-channel latent encoder");
    return le_dm(blur);
}

template class LatentEncoder<float>;
template class LatentEncoder<double>;
template Var<float> encode_prior(const LatentEncoder<float>&, const Var<float>&, const Var<float>&);
template Var<double> encode_prior(const LatentEncoder<double>&, const Var<double>&, const Var<double>&);
template Var<float> encode_condition(const LatentEncoder<float>&, const Var<float>&);
template Var<double> encode_condition(const LatentEncoder<double>&, const Var<double>&);

}  // namespace hidiff
