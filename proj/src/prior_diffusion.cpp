#include "hidiff/prior_diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace hidiff {

template <std::floating_point T>
Tensor<T> standard_normal(Shape shape, std::mt19937_64& rng) {
    Tensor<T> out(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : out.values()) v = static_cast<T>(dist(rng));
    return out;
}

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

template <std::floating_point T>
NoisyLatent<T> forward_marginal_sample(const NoiseSchedule& s, const Tensor<T>& z0, int t, const Tensor<T>& noise) {
    require_same(z0, noise, "forward_marginal_sample");
    const auto [signal, spread] = s.marginal_coefficients(t);
    Tensor<T> out = z0;
    out.array() = T(signal) * z0.array() + T(spread) * noise.array();
    return {std::move(out), t};
}

template <std::floating_point T>
Var<T> forward_marginal_sample(const NoiseSchedule& s, const Var<T>& z0, int t, const Tensor<T>& noise) {
    require_same(z0.value(), noise, "forward_marginal_sample");
    const auto [signal, spread] = s.marginal_coefficients(t);
    return ops::affine(z0, T(signal), ops::constant(noise), T(spread));
}

template <std::floating_point T>
NoisyLatent<T> forward_step(const NoiseSchedule& s, const NoisyLatent<T>& previous, const Tensor<T>& noise) {
    require_same(previous.values, noise, "forward_step");
    const int t = previous.step + 1;
    if (t > s.steps()) throw std::out_of_range("forward_step beyond the final step " + std::to_string(s.steps()));
    const double beta = s.beta(t);
    Tensor<T> out = previous.values;
    out.array() = T(std::sqrt(1.0 - beta)) * out.array() + T(std::sqrt(beta)) * noise.array();
    return {std::move(out), t};
}

template <std::floating_point T>
Tensor<T> posterior_mean(const NoiseSchedule& s, const NoisyLatent<T>& z_t, const Tensor<T>& eps) {
    require_same(z_t.values, eps, "posterior_mean");
    const int t = z_t.step;
    const double alpha = s.alpha(t);
    const double coef = (1.0 - alpha) / std::sqrt(1.0 - s.alpha_bar(t));
    const double inv = 1.0 / std::sqrt(alpha);
    Tensor<T> out = z_t.values;
    out.array() = T(inv) * (z_t.values.array() - T(coef) * eps.array());
    return out;
}

template <std::floating_point T>
Var<T> reverse_step(const NoiseSchedule& s, const Var<T>& z_t, const Var<T>& eps_hat, int t,
                    const Tensor<T>& step_noise) {
    if (t < 1) throw std::out_of_range("reverse_step needs t >= 1");
    const double alpha = s.alpha(t);
    const double inv = 1.0 / std::sqrt(alpha);
    const double coef = (1.0 - alpha) / std::sqrt(1.0 - s.alpha_bar(t));
    auto mean = ops::affine(z_t, T(inv), eps_hat, T(-inv * coef));
    if (t == 1) return mean;
    require_same(z_t.value(), step_noise, "reverse_step");
    return ops::affine(mean, T(1), ops::constant(step_noise), T(std::sqrt(1.0 - alpha)));
}

template <std::floating_point T>
Denoiser<T>::Denoiser(const ParamScope<T>& scope, const CodecConfig& codec, const DenoiserConfig& cfg,
                      const NoiseSchedule& s)
    : tokens_(codec.tokens), dim_(codec.dim), heads_(cfg.heads), steps_(s.steps()) {
    const int steps = s.steps();
    for (int t = 1; t <= steps; ++t) {
        signal_.push_back(T(std::sqrt(s.alpha_bar(t))));
        noise_.push_back(T(std::sqrt(1.0 - s.alpha_bar(t))));
    }
    if (dim_ % heads_) throw std::invalid_argument("denoiser width must be divisible by heads");
    const int hidden = static_cast<int>(std::lround(cfg.ffn_mult * dim_));
    input = Pointwise<T>(scope.sub("input"), dim_, dim_, true);
    slot_embedding = scope.param("slot_embedding", {dim_, 2 * tokens_}, Init::normal(0.02));
    step_embedding = scope.param("step_embedding", {steps, dim_}, Init::normal(0.02));
    for (int i = 0; i < cfg.layers; ++i) {
        auto s = scope.sub("layer" + std::to_string(i));
        layers.push_back({LayerNorm<T>(s.sub("norm1"), dim_), Pointwise<T>(s.sub("qkv"), dim_, 3 * dim_),
                          Pointwise<T>(s.sub("proj"), dim_, dim_), LayerNorm<T>(s.sub("norm2"), dim_),
                          Pointwise<T>(s.sub("ff1"), dim_, hidden, true), Pointwise<T>(s.sub("ff2"), hidden, dim_, true)});
    }
    out_norm = LayerNorm<T>(scope.sub("out_norm"), dim_);
    out = Pointwise<T>(scope.sub("out"), dim_, dim_, true);
    out.weight.mutable_value().fill(T(0));
}

template <std::floating_point T>
Var<T> Denoiser<T>::attend(const Layer& layer, const Var<T>& x) const {
    const int dh = dim_ / heads_;
    const T scale = T(1) / std::sqrt(T(dh));
    auto qkv = layer.qkv(layer.norm1(x));  // [3d, 2N]
    std::vector<Var<T>> outs;
    for (int h = 0; h < heads_; ++h) {
        auto q = ops::slice_rows(qkv, h * dh, (h + 1) * dh);
        auto k = ops::slice_rows(qkv, dim_ + h * dh, dim_ + (h + 1) * dh);
        auto v = ops::slice_rows(qkv, 2 * dim_ + h * dh, 2 * dim_ + (h + 1) * dh);
        auto attn = ops::softmax_rows(ops::scale(ops::matmul(q, k, true, false), scale));  // [2N, 2N]
        outs.push_back(ops::matmul(v, attn, false, true));
    }
    return layer.proj(heads_ == 1 ? outs.front() : ops::concat_rows(outs));
}

template <std::floating_point T>
Var<T> Denoiser<T>::clean_estimate(const Var<T>& z_t, const Var<T>& c, int t) const {
    const Shape expected{tokens_, dim_};
    if (z_t.shape() != expected || c.shape() != expected) {
        throw std::invalid_argument("denoiser expects " + shape_str(expected) + " inputs, got " + shape_str(z_t.shape()) +
                                    " and " + shape_str(c.shape()));
    }
    if (t < 1 || t > steps_) throw std::out_of_range("denoiser step " + std::to_string(t) + " out of range");
    auto tokens = ops::transpose(ops::concat_rows<T>({z_t, c}));  // [d, 2N]
    auto x = ops::add(input(tokens), slot_embedding);
    x = ops::add_row_bias(x, ops::take_row(step_embedding, t - 1));
    for (const auto& layer : layers) {
        x = ops::add(x, attend(layer, x));
        x = ops::add(x, layer.ff2(ops::gelu(layer.ff1(layer.norm2(x)))));
    }
    auto head = ops::transpose(ops::slice_rows(ops::transpose(x), 0, tokens_));  // [d, N]
    auto x0 = ops::transpose(out(out_norm(head)));                                // [N, d]
    if (!x0.value().all_finite()) {
        throw std::runtime_error("denoiser produced non-finite output at step " + std::to_string(t));
    }
    return x0;
}

template <std::floating_point T>
Var<T> Denoiser<T>::operator()(const Var<T>& z_t, const Var<T>& c, int t) const {
    auto x0 = clean_estimate(z_t, c, t);
    const T inv = T(1) / noise_[t - 1];
    return ops::affine(z_t, inv, x0, -signal_[t - 1] * inv);
}

template <std::floating_point T>
SamplerNoise<T> draw_sampler_noise(const NoiseSchedule& s, Shape shape, std::mt19937_64& rng) {
    SamplerNoise<T> noise;
    noise.initial = standard_normal<T>(shape, rng);
    for (int t = 1; t <= s.steps(); ++t) noise.step.push_back(standard_normal<T>(shape, rng));
    return noise;
}

template <std::floating_point T>
Var<T> run_reverse_chain(const NoiseSchedule& s, const std::function<Var<T>(const Var<T>&, int)>& predict,
                         const Var<T>& start, const SamplerNoise<T>& noise) {
    if (static_cast<int>(noise.step.size()) < s.steps()) throw std::invalid_argument("missing step noise");
    Var<T> z = start;
    for (int t = s.steps(); t >= 1; --t) {
        z = reverse_step(s, z, predict(z, t), t, noise.step[t - 1]);
        if (!z.value().all_finite()) {
            throw std::runtime_error("reverse chain produced non-finite values at step " + std::to_string(t));
        }
    }
    return z;
}

template <std::floating_point T>
Var<T> sample_prior(const NoiseSchedule& s, const Denoiser<T>& denoiser, const Var<T>& c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto noise = draw_sampler_noise<T>(s, c.shape(), rng);
    auto predict = [&](const Var<T>& z, int t) { return denoiser(z, c, t); };
    return run_reverse_chain<T>(s, predict, ops::constant(noise.initial), noise);
}

#define HIDIFF_INSTANTIATE_DIFFUSION(T)                                                                         \
    template Tensor<T> standard_normal(Shape, std::mt19937_64&);                                                \
    template NoisyLatent<T> forward_marginal_sample(const NoiseSchedule&, const Tensor<T>&, int, const Tensor<T>&); \
    template Var<T> forward_marginal_sample(const NoiseSchedule&, const Var<T>&, int, const Tensor<T>&);         \
    template NoisyLatent<T> forward_step(const NoiseSchedule&, const NoisyLatent<T>&, const Tensor<T>&);         \
    template Tensor<T> posterior_mean(const NoiseSchedule&, const NoisyLatent<T>&, const Tensor<T>&);            \
    template Var<T> reverse_step(const NoiseSchedule&, const Var<T>&, const Var<T>&, int, const Tensor<T>&);     \
    template class Denoiser<T>;                                                                                  \
    template SamplerNoise<T> draw_sampler_noise(const NoiseSchedule&, Shape, std::mt19937_64&);                  \
    template Var<T> run_reverse_chain(const NoiseSchedule&, const std::function<Var<T>(const Var<T>&, int)>&,     \
                                      const Var<T>&, const SamplerNoise<T>&);                                    \
    template Var<T> sample_prior(const NoiseSchedule&, const Denoiser<T>&, const Var<T>&, uint64_t);

HIDIFF_INSTANTIATE_DIFFUSION(float)
HIDIFF_INSTANTIATE_DIFFUSION(double)

}  // namespace hidiff
