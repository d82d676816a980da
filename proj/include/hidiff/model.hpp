#pragma once

#include "hidiff/backbone.hpp"
#include "hidiff/latent_codec.hpp"
#include "hidiff/prior_diffusion.hpp"

#include <memory>

namespace hidiff {

// Everything learnable, under four parameter prefixes:
//   le.*        latent encoder over (ground truth, blur), stage one
//   le_dm.*     latent encoder over blur, conditions the denoiser
//   denoiser.*  eps_theta
//   backbone.*  deblurring transformer including its HIMs
// With PriorMode::none only backbone.* exists.
template <std::floating_point T>
class HiDiffModel {
public:
    HiDiffModel(const ModelConfig& cfg, uint64_t seed);
    HiDiffModel(const HiDiffModel&) = delete;
    HiDiffModel& operator=(const HiDiffModel&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    ParamStore<T>& params() noexcept { return *store_; }
    const ParamStore<T>& params() const noexcept { return *store_; }
    bool uses_prior() const noexcept { return cfg_.backbone.prior != PriorMode::none; }

    const LatentEncoder<T>& prior_encoder() const { return le_; }
    const LatentEncoder<T>& condition_encoder() const { return le_dm_; }
    const Denoiser<T>& denoiser() const { return denoiser_; }
    const Backbone<T>& backbone() const { return backbone_; }

    // z from (gt, blur); c from blur.
    Var<T> encode_prior(const Var<T>& gt, const Var<T>& blur) const;
    Var<T> encode_condition(const Var<T>& blur) const;
    // Reverse chain from pure noise drawn from `seed`.
    Var<T> sample_prior(const Var<T>& c, uint64_t seed) const;

    // Scales handed to the backbone for this model's prior mode.
    MultiScalePrior<T> guidance(const Var<T>& z) const;
    // `z` is ignored (and may be undefined) when the model has no prior.
    Var<T> deblur(const Var<T>& blur, const Var<T>& z) const;

    // Parameters needed at inference time: LE_DM, denoiser and backbone.
    size_t inference_parameter_count() const;

private:
    ModelConfig cfg_;
    NoiseSchedule schedule_;
    std::unique_ptr<ParamStore<T>> store_;
    LatentEncoder<T> le_, le_dm_;
    Denoiser<T> denoiser_;
    Backbone<T> backbone_;
};

}  // namespace hidiff
