#include "hidiff/him.hpp"

#include <cmath>
#include <stdexcept>

namespace hidiff {

template <std::floating_point T>
MultiScalePrior<T> build_multiscale(const Var<T>& z) {
    if (z.shape().size() != 2 || z.shape()[0] % 4) {
        throw std::invalid_argument("multi-scale prior needs a token count divisible by 4, got " + shape_str(z.shape()));
    }
    auto z2 = ops::pair_pool_rows(z);
    auto z3 = ops::pair_pool_rows(z2);
    return {{z, z2, z3}};
}

template <std::floating_point T>
MultiScalePrior<T> build_single_scale(const Var<T>& z) {
    return {{z, z, z}};
}

template <std::floating_point T>
Him<T>::Him(const ParamScope<T>& scope, int channels, int prior_dim, int heads)
    : w_q(scope.param("w_q", {channels, channels})),
      w_k(scope.param("w_k", {channels, prior_dim})),
      w_v(scope.param("w_v", {channels, prior_dim})),
      w_out(scope.param("w_out", {channels, channels})),
      channels_(channels),
      prior_dim_(prior_dim),
      heads_(heads) {
    if (heads < 1 || channels % heads) throw std::invalid_argument("HIM channels must be divisible by heads");
}

template <std::floating_point T>
Var<T> Him<T>::forward(const Var<T>& x, const Var<T>& prior, std::vector<Tensor<T>>* maps) const {
    if (x.shape().empty() || x.shape()[0] != channels_) {
        throw std::invalid_argument("HIM expects " + std::to_string(channels_) + " channels, got " + shape_str(x.shape()));
    }
    if (prior.shape().size() != 2 || prior.shape()[1] != prior_dim_) {
        throw std::invalid_argument("HIM expects prior tokens of width " + std::to_string(prior_dim_) + ", got " +
                                    shape_str(prior.shape()));
    }
    const int dh = channels_ / heads_;
    const T scale = T(1) / std::sqrt(T(dh));
    auto q = ops::pointwise(w_q, x);            // [C, P]
    auto tokens = ops::transpose(prior);        // [C', Ni]
    auto k = ops::pointwise(w_k, tokens);       // [C, Ni]
    auto v = ops::pointwise(w_v, tokens);       // [C, Ni]
    std::vector<Var<T>> outs;
    outs.reserve(heads_);
    for (int h = 0; h < heads_; ++h) {
        auto qh = ops::slice_rows(q, h * dh, (h + 1) * dh);
        auto kh = ops::slice_rows(k, h * dh, (h + 1) * dh);
        auto vh = ops::slice_rows(v, h * dh, (h + 1) * dh);
        auto scores = ops::scale(ops::matmul(qh, kh, true, false), scale);  // [P, Ni]
        if (!scores.value().all_finite()) throw std::runtime_error("HIM: non-finite attention scores");
        auto attn = ops::softmax_rows(scores);
        if (maps) maps->push_back(attn.value());
        outs.push_back(ops::matmul(vh, attn, false, true));  // [dh, P]
    }
    auto merged = heads_ == 1 ? outs.front() : ops::concat_rows(outs);
    return ops::add(x, ops::pointwise(w_out, merged));
}

template <std::floating_point T>
Var<T> Him<T>::operator()(const Var<T>& x, const Var<T>& prior) const {
    return forward(x, prior, nullptr);
}

template <std::floating_point T>
std::vector<Tensor<T>> Him<T>::attention(const Var<T>& x, const Var<T>& prior) const {
    NoGradGuard guard;
    std::vector<Tensor<T>> maps;
    forward(x, prior, &maps);
    return maps;
}

template struct MultiScalePrior<float>;
template struct MultiScalePrior<double>;
template MultiScalePrior<float> build_multiscale(const Var<float>&);
template MultiScalePrior<double> build_multiscale(const Var<double>&);
template MultiScalePrior<float> build_single_scale(const Var<float>&);
template MultiScalePrior<double> build_single_scale(const Var<double>&);
template class Him<float>;
template class Him<double>;

}  // namespace hidiff
