#pragma once

#include <array>
#include <string>

namespace hidiff {

struct ScheduleConfig {
    int steps = 8;
    double beta_start = 0.1;
    double beta_end = 0.99;
};

struct CodecConfig {
    int blocks = 6;   // residual blocks L
    int width = 16;   // channels of the first stage, doubled after each downsampling
    int tokens = 16;  // N, a perfect square
    int dim = 64;     // C'
};

struct DenoiserConfig {
    int layers = 4;
    int heads = 4;
    double ffn_mult = 2.0;
};

enum class PriorMode { multi_scale, single_guide, none };

std::string to_string(PriorMode mode);
PriorMode prior_mode_from_string(const std::string& s);

struct BackboneConfig {
    std::array<int, 4> blocks{1, 2, 2, 2};
    std::array<int, 4> channels{16, 32, 64, 128};
    std::array<int, 4> heads{1, 2, 4, 8};
    int refinement = 2;
    double expansion = 2.66;
    // Prior scale (1-based) consumed by the HIM in front of each encoder level
    // and decoder level (decoder listed deepest first: level 3, 2, 1).
    std::array<int, 4> encoder_scales{1, 2, 3, 3};
    std::array<int, 3> decoder_scales{3, 2, 1};
    PriorMode prior = PriorMode::multi_scale;
};

struct ModelConfig {
    ScheduleConfig schedule;
    CodecConfig codec;
    DenoiserConfig denoiser;
    BackboneConfig backbone;
};

// Throws std::invalid_argument describing the first violated constraint.
void validate(const ModelConfig& cfg);

// ceil(expansion * channels), tolerant of representation error in the product
int ffn_hidden_width(int channels, double expansion);

}  // namespace hidiff
