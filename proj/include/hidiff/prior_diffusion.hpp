#pragma once

#include "hidiff/layers.hpp"
#include "hidiff/model_config.hpp"
#include "hidiff/noise_schedule.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace hidiff {

template <std::floating_point T>
struct NoisyLatent {
    Tensor<T> values;  // N x C'
    int step = 0;      // 0 means clean
};

// Standard normal tensor from a caller-owned engine.
template <std::floating_point T>
Tensor<T> standard_normal(Shape shape, std::mt19937_64& rng);

// sqrt(abar_t) z0 + sqrt(1 - abar_t) noise
template <std::floating_point T>
NoisyLatent<T> forward_marginal_sample(const NoiseSchedule& s, const Tensor<T>& z0, int t, const Tensor<T>& noise);

// Differentiable variant used by joint training (gradient flows into z0).
template <std::floating_point T>
Var<T> forward_marginal_sample(const NoiseSchedule& s, const Var<T>& z0, int t, const Tensor<T>& noise);

// One Markov step z_{t-1} -> z_t: sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) noise.
template <std::floating_point T>
NoisyLatent<T> forward_step(const NoiseSchedule& s, const NoisyLatent<T>& previous, const Tensor<T>& noise);

// mu_t = (z_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)
template <std::floating_point T>
Tensor<T> posterior_mean(const NoiseSchedule& s, const NoisyLatent<T>& z_t, const Tensor<T>& eps);

// z_{t-1} = mu_t(z_t, eps_hat) + sqrt(1 - alpha_t) step_noise; the noise term is
// dropped at t = 1.
template <std::floating_point T>
Var<T> reverse_step(const NoiseSchedule& s, const Var<T>& z_t, const Var<T>& eps_hat, int t,
                    const Tensor<T>& step_noise);

// Conditional noise predictor eps_theta(z_t, c, t): projects [z_t ; c] to
// 2N tokens, adds slot and step embeddings, then pre-norm self-attention and
// feed-forward layers. The first N tokens are read out as a clean estimate x
// and returned as eps = (z_t - sqrt(abar_t) x) / sqrt(1 - abar_t).
template <std::floating_point T>
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(const ParamScope<T>& scope, const CodecConfig& codec, const DenoiserConfig& cfg, const NoiseSchedule& s);

    int steps() const noexcept { return steps_; }

    // z_t, c: [N, C'] -> [N, C']
    Var<T> operator()(const Var<T>& z_t, const Var<T>& c, int t) const;
    Var<T> clean_estimate(const Var<T>& z_t, const Var<T>& c, int t) const;

    struct Layer {
        LayerNorm<T> norm1;
        Pointwise<T> qkv, proj;
        LayerNorm<T> norm2;
        Pointwise<T> ff1, ff2;
    };

    Pointwise<T> input;
    Var<T> slot_embedding;  // [C', 2N]
    Var<T> step_embedding;  // [T, C']
    std::vector<Layer> layers;
    LayerNorm<T> out_norm;
    Pointwise<T> out;

private:
    Var<T> attend(const Layer& layer, const Var<T>& x) const;

    int tokens_ = 0;
    int dim_ = 0;
    int heads_ = 1;
    int steps_ = 0;
    std::vector<T> signal_, noise_;  // sqrt(abar_t), sqrt(1 - abar_t)
};


// Pre-drawn randomness for one run of the reverse chain.
template <std::floating_point T>
struct SamplerNoise {
    Tensor<T> initial;               // z_T
    std::vector<Tensor<T>> step;     // step[t - 1] used by reverse_step(t)
};

template <std::floating_point T>
SamplerNoise<T> draw_sampler_noise(const NoiseSchedule& s, Shape shape, std::mt19937_64& rng);

// Runs reverse_step for t = T..1 starting from `start` (pure noise at
// inference, a forward-diffused z_T in joint training). predict(z_t, t)
// supplies eps_hat. Differentiable end to end when the inputs require grad.
template <std::floating_point T>
Var<T> run_reverse_chain(const NoiseSchedule& s, const std::function<Var<T>(const Var<T>&, int)>& predict,
                         const Var<T>& start, const SamplerNoise<T>& noise);

// Draws z_T ~ N(0, I) and step noises from `seed`, then runs the chain with
// the denoiser conditioned on c.
template <std::floating_point T>
Var<T> sample_prior(const NoiseSchedule& s, const Denoiser<T>& denoiser, const Var<T>& c, uint64_t seed);

}  // namespace hidiff
