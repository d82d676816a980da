#include "hidiff/model_config.hpp"

#include <cmath>
#include <stdexcept>

namespace hidiff {

std::string to_string(PriorMode mode) {
    switch (mode) {
        case PriorMode::multi_scale: return "multi";
        case PriorMode::single_guide: return "single";
        case PriorMode::none: return "none";
    }
    return "?";
}

PriorMode prior_mode_from_string(const std::string& s) {
    if (s == "multi") return PriorMode::multi_scale;
    if (s == "single") return PriorMode::single_guide;
    if (s == "none") return PriorMode::none;
    throw std::invalid_argument("unknown prior mode '" + s + "' (expected multi, single or none)");
}

int ffn_hidden_width(int channels, double expansion) {
    return static_cast<int>(std::ceil(expansion * channels - 1e-9));
}

void validate(const ModelConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    if (cfg.schedule.steps < 1) fail("schedule.steps must be >= 1");
    if (cfg.codec.blocks < 1) fail("codec.blocks must be >= 1");
    if (cfg.codec.width < 1 || cfg.codec.dim < 1) fail("codec widths must be positive");
    const int grid = static_cast<int>(std::lround(std::sqrt(double(cfg.codec.tokens))));
    if (cfg.codec.tokens < 1 || grid * grid != cfg.codec.tokens) fail("codec.tokens must be a perfect square");
    if (cfg.codec.tokens % 4) fail("codec.tokens must be divisible by 4 for the three prior scales");
    if (cfg.denoiser.layers < 1 || cfg.denoiser.heads < 1) fail("denoiser needs at least one layer and head");
    if (cfg.codec.dim % cfg.denoiser.heads) fail("codec.dim must be divisible by denoiser.heads");
    if (cfg.denoiser.ffn_mult <= 0.0) fail("denoiser.ffn_mult must be positive");
    const auto& b = cfg.backbone;
    for (int l = 0; l < 4; ++l) {
        if (b.blocks[l] < 1) fail("backbone.blocks entries must be >= 1");
        if (b.heads[l] < 1 || b.channels[l] % b.heads[l]) fail("backbone.channels must be divisible by heads");
        if (l > 0 && b.channels[l] != 2 * b.channels[l - 1]) fail("backbone.channels must double per level");
        if (b.encoder_scales[l] < 1 || b.encoder_scales[l] > 3) fail("backbone.him_encoder_scales must be in 1..3");
    }
    if ((2 * b.channels[0]) % b.heads[0]) fail("decoder level 1 width must be divisible by heads[0]");
    for (int s : b.decoder_scales)
        if (s < 1 || s > 3) fail("backbone.him_decoder_scales must be in 1..3");
    if (b.refinement < 0) fail("backbone.refinement must be >= 0");
    if (b.expansion <= 1.0) fail("backbone.expansion must exceed 1");
}

}  // namespace hidiff
