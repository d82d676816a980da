#pragma once

#include "hidiff/autograd.hpp"

#include <vector>

// Differentiable primitives. Feature maps are [C, H, W]; token sets used
// inside attention are feature-major [C, M]. "Rows" always means the leading
// dimension, "columns" everything after it.
namespace hidiff::ops {

template <std::floating_point T> Var<T> constant(Tensor<T> value);

// Elementwise.
template <std::floating_point T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> scale(const Var<T>& a, T s);
// alpha * a + beta * b
template <std::floating_point T> Var<T> affine(const Var<T>& a, T alpha, const Var<T>& b, T beta);
template <std::floating_point T> Var<T> gelu(const Var<T>& x);

// Multiplies every entry by the single entry of `s` (learnable temperature).
template <std::floating_point T> Var<T> scale_by(const Var<T>& x, const Var<T>& s);
// x[c, :] += b[c]
template <std::floating_point T> Var<T> add_row_bias(const Var<T>& x, const Var<T>& b);

// op(a) * op(b) on the 2D views; result is [m, n].
template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);
// w[Cout, Cin] applied to x[Cin, ...]; trailing dims are preserved.
template <std::floating_point T> Var<T> pointwise(const Var<T>& w, const Var<T>& x);
template <std::floating_point T> Var<T> transpose(const Var<T>& x);

// Dense k x k convolution, w[Cout, Cin, k, k], zero padding.
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad);
// 3x3 depthwise convolution, w[C, 3, 3], zero padding 1.
template <std::floating_point T> Var<T> depthwise3x3(const Var<T>& x, const Var<T>& w);

// Normalizes each column over the rows (per-pixel channel norm).
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));
// Softmax over each row's columns.
template <std::floating_point T> Var<T> softmax_rows(const Var<T>& x);
// Each row scaled to unit L2 norm (norm clamped below at eps).
template <std::floating_point T> Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12));

template <std::floating_point T> Var<T> slice_rows(const Var<T>& x, int begin, int end);
template <std::floating_point T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
// Row `index` of a 2D table as a vector of length cols.
template <std::floating_point T> Var<T> take_row(const Var<T>& table, int index);

template <std::floating_point T> Var<T> pixel_unshuffle(const Var<T>& x);
template <std::floating_point T> Var<T> pixel_shuffle(const Var<T>& x);
// [C, H, W] -> [C, g, g] by adaptive average pooling.
template <std::floating_point T> Var<T> adaptive_avg_pool(const Var<T>& x, int grid);
// [N, C] -> [N/2, C], averaging rows 2i and 2i+1.
template <std::floating_point T> Var<T> pair_pool_rows(const Var<T>& x);

// Scalar reductions.
template <std::floating_point T> Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b);
template <std::floating_point T> Var<T> sum(const Var<T>& x);
// sum(x .* w) for a constant weight tensor.
template <std::floating_point T> Var<T> dot_const(const Var<T>& x, const Tensor<T>& w);

}  // namespace hidiff::ops
