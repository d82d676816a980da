#pragma once

#include "hidiff/layers.hpp"
#include "hidiff/model_config.hpp"

#include <vector>

namespace hidiff {

// Residual CNN that compresses an image (6 channels: ground truth and blur
// stacked, or 3 channels: blur only) into an N x C' token matrix whose size
// does not depend on the image size.
template <std::floating_point T>
class LatentEncoder {
public:
    LatentEncoder() = default;
    LatentEncoder(const ParamScope<T>& scope, const CodecConfig& cfg, int in_channels);

    int in_channels() const noexcept { return in_channels_; }
    int downsamplings() const noexcept { return static_cast<int>(downs_.size()); }

    // image [in_channels, H, W] -> [N, C']
    Var<T> operator()(const Var<T>& image) const;

    // feature map [C, h, w] -> adaptive pool to sqrt(N) x sqrt(N), row-major
    // flatten to N tokens, project to C'
    Var<T> token_pool(const Var<T>& features) const;

private:
    struct ResBlock {
        Conv<T> conv1, conv2;
    };

    CodecConfig cfg_;
    int in_channels_ = 0;
    int grid_ = 0;
    Conv<T> embed_;
    std::vector<ResBlock> blocks_;
    std::vector<Conv<T>> downs_;  // downs_[i] follows block 2i+1
    Pointwise<T> proj1_, proj2_;
};

// Stage one: concatenates ground truth and blur along channels.
template <std::floating_point T>
Var<T> encode_prior(const LatentEncoder<T>& le, const Var<T>& gt, const Var<T>& blur);

// Stage two condition latent from the blurry image alone.
template <std::floating_point T>
Var<T> encode_condition(const LatentEncoder<T>& le_dm, const Var<T>& blur);

}  // namespace hidiff
