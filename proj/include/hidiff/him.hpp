#pragma once

#include "hidiff/layers.hpp"

#include <array>
#include <vector>

namespace hidiff {

// {z1, z2, z3}: the prior at N, N/2 and N/4 tokens.
template <std::floating_point T>
struct MultiScalePrior {
    std::array<Var<T>, 3> scales;

    const Var<T>& scale(int s) const { return scales.at(static_cast<size_t>(s - 1)); }
};

// z1 = z, z2 and z3 by averaging adjacent token pairs.
template <std::floating_point T>
MultiScalePrior<T> build_multiscale(const Var<T>& z);

// Same token matrix at every scale (single-guide ablation).
template <std::floating_point T>
MultiScalePrior<T> build_single_scale(const Var<T>& z);

// Hierarchical integration module: cross-attention from backbone features
// (queries) to prior tokens (keys/values), added back residually. All
// projections are bias-free.
template <std::floating_point T>
class Him {
public:
    Him() = default;
    Him(const ParamScope<T>& scope, int channels, int prior_dim, int heads);

    int channels() const noexcept { return channels_; }
    int heads() const noexcept { return heads_; }

    // x [C, H, W], prior [Ni, C'] -> [C, H, W]
    Var<T> operator()(const Var<T>& x, const Var<T>& prior) const;

    // Softmax maps per head, each [H*W, Ni]. For inspection only.
    std::vector<Tensor<T>> attention(const Var<T>& x, const Var<T>& prior) const;

    Var<T> w_q, w_k, w_v, w_out;

private:
    Var<T> forward(const Var<T>& x, const Var<T>& prior, std::vector<Tensor<T>>* maps) const;

    int channels_ = 0;
    int prior_dim_ = 0;
    int heads_ = 1;
};

}  // namespace hidiff
