#include "hidiff/model.hpp"

#include <stdexcept>

namespace hidiff {

template <std::floating_point T>
HiDiffModel<T>::HiDiffModel(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg), store_(std::make_unique<ParamStore<T>>(seed)) {
    validate(cfg_);
    schedule_ = NoiseSchedule::linear(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
    ParamScope<T> root(*store_, "");
    if (uses_prior()) {
        le_ = LatentEncoder<T>(root.sub("le"), cfg.codec, 6);
        le_dm_ = LatentEncoder<T>(root.sub("le_dm"), cfg.codec, 3);
        denoiser_ = Denoiser<T>(root.sub("denoiser"), cfg.codec, cfg.denoiser, schedule_);
    }
    backbone_ = Backbone<T>(root.sub("backbone"), cfg.backbone, cfg.codec.dim);
}

template <std::floating_point T>
Var<T> HiDiffModel<T>::encode_prior(const Var<T>& gt, const Var<T>& blur) const {
    if (!uses_prior()) throw std::logic_error("model without prior has no latent encoder");
    return hidiff::encode_prior(le_, gt, blur);
}

template <std::floating_point T>
Var<T> HiDiffModel<T>::encode_condition(const Var<T>& blur) const {
    if (!uses_prior()) throw std::logic_error("model without prior has no condition encoder");
    return hidiff::encode_condition(le_dm_, blur);
}

template <std::floating_point T>
Var<T> HiDiffModel<T>::sample_prior(const Var<T>& c, uint64_t seed) const {
    return hidiff::sample_prior(schedule_, denoiser_, c, seed);
}

template <std::floating_point T>
MultiScalePrior<T> HiDiffModel<T>::guidance(const Var<T>& z) const {
    return cfg_.backbone.prior == PriorMode::single_guide ? build_single_scale(z) : build_multiscale(z);
}

template <std::floating_point T>
Var<T> HiDiffModel<T>::deblur(const Var<T>& blur, const Var<T>& z) const {
    if (!uses_prior()) return backbone_(blur, nullptr);
    auto prior = guidance(z);
    return backbone_(blur, &prior);
}

template <std::floating_point T>
size_t HiDiffModel<T>::inference_parameter_count() const {
    return store_->count("le_dm.") + store_->count("denoiser.") + store_->count("backbone.");
}

template class HiDiffModel<float>;
template class HiDiffModel<double>;

}  // namespace hidiff
