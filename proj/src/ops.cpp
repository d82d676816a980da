#include "hidiff/ops.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace hidiff::ops {
namespace {

template <typename T>
void require_same_size(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.value().size() != b.value().size()) {
        throw std::invalid_argument(std::string(op) + ": size mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

// c += op(a) * op(b)
template <typename MC, typename MA, typename MB>
void gemm_acc(MC&& c, const MA& a, bool ta, const MB& b, bool tb) {
    if (!ta && !tb) c.noalias() += a * b;
    else if (ta && !tb) c.noalias() += a.transpose() * b;
    else if (!ta && tb) c.noalias() += a * b.transpose();
    else c.noalias() += a.transpose() * b.transpose();
}

Shape with_leading(const Shape& s, int lead) {
    Shape out = s;
    if (out.empty()) out.push_back(lead);
    else out[0] = lead;
    return out;
}

}  // namespace

template <std::floating_point T>
Var<T> constant(Tensor<T> value) {
    return Var<T>(std::move(value), false);
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_size(a, b, "add");
    Tensor<T> out = a.value();
    out.array() += b.value().array();
    return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
        for (size_t i = 0; i < 2; ++i)
            if (auto* g = parent_grad(n, i)) g->array() += n.grad.array();
    });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_size(a, b, "sub");
    Tensor<T> out = a.value();
    out.array() -= b.value().array();
    return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += n.grad.array();
        if (auto* g = parent_grad(n, 1)) g->array() -= n.grad.array();
    });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_size(a, b, "mul");
    Tensor<T> out = a.value();
    out.array() *= b.value().array();
    return Var<T>::make(std::move(out), {a, b}, [](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += n.grad.array() * n.parents[1]->value.array();
        if (auto* g = parent_grad(n, 1)) g->array() += n.grad.array() * n.parents[0]->value.array();
    });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    out.array() *= s;
    return Var<T>::make(std::move(out), {a}, [s](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += s * n.grad.array();
    });
}

template <std::floating_point T>
Var<T> affine(const Var<T>& a, T alpha, const Var<T>& b, T beta) {
    require_same_size(a, b, "affine");
    Tensor<T> out = a.value();
    out.array() = alpha * out.array() + beta * b.value().array();
    return Var<T>::make(std::move(out), {a, b}, [alpha, beta](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += alpha * n.grad.array();
        if (auto* g = parent_grad(n, 1)) g->array() += beta * n.grad.array();
    });
}

template <std::floating_point T>
Var<T> gelu(const Var<T>& x) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    return Var<T>::make(std::move(out), {x}, [](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
        const T* xv = n.parents[0]->value.data();
        const T* gv = n.grad.data();
        T* dv = g->data();
        const size_t count = n.grad.size();
        for (size_t i = 0; i < count; ++i) {
            const T v = xv[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            dv[i] += gv[i] * (cdf + v * pdf);
        }
    });
}

template <std::floating_point T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
    if (s.value().size() != 1) throw std::invalid_argument("scale_by: scale must hold one value");
    Tensor<T> out = x.value();
    out.array() *= s.value()[0];
    return Var<T>::make(std::move(out), {x, s}, [](Node<T>& n) {
        const T sv = n.parents[1]->value[0];
        if (auto* g = parent_grad(n, 0)) g->array() += sv * n.grad.array();
        if (auto* g = parent_grad(n, 1)) (*g)[0] += (n.grad.array() * n.parents[0]->value.array()).sum();
    });
}

template <std::floating_point T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& b) {
    const int rows = x.value().rows();
    if (static_cast<int>(b.value().size()) != rows) {
        throw std::invalid_argument("add_row_bias: bias size " + std::to_string(b.value().size()) +
                                    " vs rows " + std::to_string(rows));
    }
    Tensor<T> out = x.value();
    auto m = out.matrix();
    for (int r = 0; r < rows; ++r) m.row(r).array() += b.value()[r];
    return Var<T>::make(std::move(out), {x, b}, [](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += n.grad.array();
        if (auto* g = parent_grad(n, 1)) {
            auto gm = n.grad.matrix();
            for (int r = 0; r < gm.rows(); ++r) (*g)[r] += gm.row(r).sum();
        }
    });
}

template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
    const auto A = a.value().matrix();
    const auto B = b.value().matrix();
    const int m = static_cast<int>(trans_a ? A.cols() : A.rows());
    const int k = static_cast<int>(trans_a ? A.rows() : A.cols());
    const int kb = static_cast<int>(trans_b ? B.cols() : B.rows());
    const int ncols = static_cast<int>(trans_b ? B.rows() : B.cols());
    if (k != kb) {
        throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    Tensor<T> out({m, ncols});
    gemm_acc(out.matrix(), A, trans_a, B, trans_b);
    return Var<T>::make(std::move(out), {a, b}, [trans_a, trans_b](Node<T>& n) {
        const auto G = n.grad.matrix();
        const auto A = n.parents[0]->value.matrix();
        const auto B = n.parents[1]->value.matrix();
        if (auto* ga = parent_grad(n, 0)) {
            if (!trans_a) gemm_acc(ga->matrix(), G, false, B, !trans_b);
            else gemm_acc(ga->matrix(), B, trans_b, G, true);
        }
        if (auto* gb = parent_grad(n, 1)) {
            if (!trans_b) gemm_acc(gb->matrix(), A, !trans_a, G, false);
            else gemm_acc(gb->matrix(), G, true, A, trans_a);
        }
    });
}

template <std::floating_point T>
Var<T> pointwise(const Var<T>& w, const Var<T>& x) {
    const auto W = w.value().matrix();
    const auto X = x.value().matrix();
    if (W.cols() != X.rows()) {
        throw std::invalid_argument("pointwise: weight " + shape_str(w.shape()) + " vs input " +
                                    shape_str(x.shape()));
    }
    Tensor<T> out(with_leading(x.shape(), static_cast<int>(W.rows())));
    out.matrix().noalias() = W * X;
    return Var<T>::make(std::move(out), {w, x}, [](Node<T>& n) {
        const auto G = n.grad.matrix();
        if (auto* gw = parent_grad(n, 0)) gw->matrix().noalias() += G * n.parents[1]->value.matrix().transpose();
        if (auto* gx = parent_grad(n, 1)) gx->matrix().noalias() += n.parents[0]->value.matrix().transpose() * G;
    });
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& x) {
    const auto X = x.value().matrix();
    Tensor<T> out({static_cast<int>(X.cols()), static_cast<int>(X.rows())});
    out.matrix() = X.transpose();
    return Var<T>::make(std::move(out), {x}, [](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->matrix() += n.grad.matrix().transpose();
    });
}

namespace {

struct ConvGeometry {
    int cin, h, w, k, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const int ncol = g.ho * g.wo;
    for (int c = 0; c < g.cin; ++c) {
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                T* dst = col + static_cast<size_t>((c * g.k + ki) * g.k + kj) * ncol;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    T* row = dst + static_cast<size_t>(oy) * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(row, row + g.wo, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<size_t>(c) * g.h + iy) * g.w;
                    if (g.stride == 1) {
                        const int lo = std::max(0, g.pad - kj), hi = std::min(g.wo, g.w + g.pad - kj);
                        std::fill(row, row + lo, T(0));
                        if (hi > lo) std::copy(src + lo - g.pad + kj, src + hi - g.pad + kj, row + lo);
                        std::fill(row + std::max(lo, hi), row + g.wo, T(0));
                        continue;
                    }
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kj;
                        row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, const ConvGeometry& g, T* dx) {
    const int ncol = g.ho * g.wo;
    for (int c = 0; c < g.cin; ++c) {
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                const T* srcrow = col + static_cast<size_t>((c * g.k + ki) * g.k + kj) * ncol;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    T* dst = dx + (static_cast<size_t>(c) * g.h + iy) * g.w;
                    const T* row = srcrow + static_cast<size_t>(oy) * g.wo;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kj;
                        if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3]) {
        throw std::invalid_argument("conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
    }
    ConvGeometry g{xs[0], xs[1], xs[2], ws[2], stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;
    const int cout = ws[0];
    const int krows = g.cin * g.k * g.k;
    Tensor<T> col({krows, g.ho * g.wo});
    im2col(x.value().data(), g, col.data());
    Tensor<T> out({cout, g.ho, g.wo});
    Eigen::Map<const RowMatrix<T>> W(w.value().data(), cout, krows);
    out.matrix().noalias() = W * col.matrix();
    return Var<T>::make(std::move(out), {x, w}, [g, cout, krows](Node<T>& n) {
        const auto G = n.grad.matrix();
        Eigen::Map<const RowMatrix<T>> W(n.parents[1]->value.data(), cout, krows);
        if (auto* gw = parent_grad(n, 1)) {
            Tensor<T> col({krows, g.ho * g.wo});
            im2col(n.parents[0]->value.data(), g, col.data());
            Eigen::Map<RowMatrix<T>> GW(gw->data(), cout, krows);
            GW.noalias() += G * col.matrix().transpose();
        }
        if (auto* gx = parent_grad(n, 0)) {
            Tensor<T> dcol({krows, g.ho * g.wo});
            dcol.matrix().noalias() = W.transpose() * G;
            col2im_acc(dcol.data(), g, gx->data());
        }
    });
}

namespace {

// out[c] (+)= sum_{i,j} w[c,i,j] * in[c, y+i-1, x+j-1] with zero padding
template <typename T>
void dw_forward_channel(const T* in, const T* w, T* out, int h, int wd) {
    for (int i = 0; i < 3; ++i) {
        const int dy = i - 1;
        for (int j = 0; j < 3; ++j) {
            const int dx = j - 1;
            const T k = w[i * 3 + j];
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            for (int y = y0; y < y1; ++y) {
                T* __restrict o = out + static_cast<size_t>(y) * wd;
                const T* __restrict s = in + static_cast<size_t>(y + dy) * wd + dx;
                for (int x = x0; x < x1; ++x) o[x] += k * s[x];
            }
        }
    }
}

}  // namespace

template <std::floating_point T>
Var<T> depthwise3x3(const Var<T>& x, const Var<T>& w) {
    const Shape& xs = x.shape();
    if (xs.size() != 3 || w.shape() != Shape{xs[0], 3, 3}) {
        throw std::invalid_argument("depthwise3x3: input " + shape_str(xs) + " weight " + shape_str(w.shape()));
    }
    const int c = xs[0], h = xs[1], wd = xs[2];
    const size_t plane = static_cast<size_t>(h) * wd;
    Tensor<T> out(xs);
    for (int ch = 0; ch < c; ++ch) {
        dw_forward_channel(x.value().data() + ch * plane, w.value().data() + ch * 9, out.data() + ch * plane, h, wd);
    }
    return Var<T>::make(std::move(out), {x, w}, [c, h, wd, plane](Node<T>& n) {
        const T* in = n.parents[0]->value.data();
        const T* wv = n.parents[1]->value.data();
        const T* gv = n.grad.data();
        auto* gx = parent_grad(n, 0);
        auto* gw = parent_grad(n, 1);
        for (int ch = 0; ch < c; ++ch) {
            const T* gin = gv + ch * plane;
            const T* xin = in + ch * plane;
            for (int i = 0; i < 3; ++i) {
                const int dy = i - 1;
                for (int j = 0; j < 3; ++j) {
                    const int dx = j - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    const int len = x1 - x0;
                    if (gw) {
                        T acc = 0;
                        for (int y = y0; y < y1; ++y) {
                            const size_t row = static_cast<size_t>(y) * wd + x0;
                            const size_t src = static_cast<size_t>(y + dy) * wd + dx + x0;
                            using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
                            acc += Eigen::Map<const Vec>(gin + row, len).dot(Eigen::Map<const Vec>(xin + src, len));
                        }
                        (*gw)[ch * 9 + i * 3 + j] += acc;
                    }
                    if (gx) {
                        const T k = wv[ch * 9 + i * 3 + j];
                        for (int y = y0; y < y1; ++y) {
                            const T* __restrict g = gin + static_cast<size_t>(y) * wd + x0;
                            T* __restrict d = gx->data() + ch * plane + static_cast<size_t>(y + dy) * wd + dx + x0;
                            for (int xx = 0; xx < len; ++xx) d[xx] += k * g[xx];
                        }
                    }
                }
            }
        }
    });
}

template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
    const int c = x.value().rows();
    const int p = x.value().cols();
    if (static_cast<int>(gain.value().size()) != c || static_cast<int>(bias.value().size()) != c) {
        throw std::invalid_argument("layer_norm: affine size mismatch for input " + shape_str(x.shape()));
    }
    const auto X = x.value().matrix();
    Eigen::Array<T, 1, Eigen::Dynamic> mean = X.colwise().sum().array() / T(c);
    Eigen::Array<T, 1, Eigen::Dynamic> var = Eigen::Array<T, 1, Eigen::Dynamic>::Zero(p);
    for (int r = 0; r < c; ++r) var += (X.row(r).array() - mean).square();
    Eigen::Array<T, 1, Eigen::Dynamic> rstd = (var / T(c) + eps).rsqrt();
    Tensor<T> out(x.shape());
    auto O = out.matrix();
    for (int r = 0; r < c; ++r) {
        O.row(r).array() = (X.row(r).array() - mean) * rstd * gain.value()[r] + bias.value()[r];
    }
    return Var<T>::make(std::move(out), {x, gain, bias}, [c, p, mean, rstd](Node<T>& n) {
        const auto X = n.parents[0]->value.matrix();
        const auto G = n.grad.matrix();
        const Tensor<T>& gv = n.parents[1]->value;
        auto* gx = parent_grad(n, 0);
        auto* gg = parent_grad(n, 1);
        auto* gb = parent_grad(n, 2);
        Eigen::Array<T, 1, Eigen::Dynamic> sum_g = Eigen::Array<T, 1, Eigen::Dynamic>::Zero(p);
        Eigen::Array<T, 1, Eigen::Dynamic> sum_gx = Eigen::Array<T, 1, Eigen::Dynamic>::Zero(p);
        Eigen::Array<T, 1, Eigen::Dynamic> xhat(p);
        for (int r = 0; r < c; ++r) {
            xhat = (X.row(r).array() - mean) * rstd;
            const auto grow = G.row(r).array();
            if (gg) (*gg)[r] += (grow * xhat).sum();
            if (gb) (*gb)[r] += grow.sum();
            sum_g += grow * gv[r];
            sum_gx += grow * gv[r] * xhat;
        }
        if (!gx) return;
        sum_g /= T(c);
        sum_gx /= T(c);
        auto GX = gx->matrix();
        for (int r = 0; r < c; ++r) {
            xhat = (X.row(r).array() - mean) * rstd;
            GX.row(r).array() += rstd * (G.row(r).array() * gv[r] - sum_g - xhat * sum_gx);
        }
    });
}

template <std::floating_point T>
Var<T> softmax_rows(const Var<T>& x) {
    Tensor<T> out = x.value();
    auto O = out.matrix();
    for (Eigen::Index r = 0; r < O.rows(); ++r) {
        auto row = O.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
    }
    return Var<T>::make(std::move(out), {x}, [](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        // recompute y from the input to avoid holding a copy
        const auto X = n.parents[0]->value.matrix();
        const auto G = n.grad.matrix();
        auto GX = g->matrix();
        Eigen::Array<T, 1, Eigen::Dynamic> y;
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            y = (X.row(r).array() - X.row(r).maxCoeff()).exp();
            y /= y.sum();
            const T dotv = (G.row(r).array() * y).sum();
            GX.row(r).array() += y * (G.row(r).array() - dotv);
        }
    });
}

template <std::floating_point T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps) {
    const auto X = x.value().matrix();
    Eigen::Array<T, Eigen::Dynamic, 1> norms = X.rowwise().norm().array().max(eps);
    Tensor<T> out(x.shape());
    out.matrix() = (X.array().colwise() / norms).matrix();
    return Var<T>::make(std::move(out), {x}, [norms, eps](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        const auto X = n.parents[0]->value.matrix();
        const auto G = n.grad.matrix();
        auto GX = g->matrix();
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            const T nr = norms[r];
            if (nr > eps) {
                const auto y = X.row(r).array() / nr;
                const T dotv = (G.row(r).array() * y).sum();
                GX.row(r).array() += (G.row(r).array() - y * dotv) / nr;
            } else {
                GX.row(r).array() += G.row(r).array() / nr;
            }
        }
    });
}

template <std::floating_point T>
Var<T> slice_rows(const Var<T>& x, int begin, int end) {
    const int rows = x.value().rows();
    if (begin < 0 || end > rows || begin >= end) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") outside " + shape_str(x.shape()));
    }
    const size_t cols = static_cast<size_t>(x.value().cols());
    Tensor<T> out(with_leading(x.shape(), end - begin));
    std::memcpy(out.data(), x.value().data() + begin * cols, out.size() * sizeof(T));
    return Var<T>::make(std::move(out), {x}, [begin, cols](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) {
            T* dst = g->data() + begin * cols;
            const T* src = n.grad.data();
            for (size_t i = 0; i < n.grad.size(); ++i) dst[i] += src[i];
        }
    });
}

template <std::floating_point T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int cols = parts.front().value().cols();
    int rows = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.value().rows();
    }
    Tensor<T> out(with_leading(parts.front().shape(), rows));
    size_t offset = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + offset, p.value().data(), p.value().size() * sizeof(T));
        offset += p.value().size();
    }
    return Var<T>::make(std::move(out), parts, [](Node<T>& n) {
        size_t offset = 0;
        for (size_t i = 0; i < n.parents.size(); ++i) {
            const size_t len = n.parents[i]->value.size();
            if (auto* g = parent_grad(n, i)) {
                for (size_t k = 0; k < len; ++k) (*g)[k] += n.grad[offset + k];
            }
            offset += len;
        }
    });
}

template <std::floating_point T>
Var<T> take_row(const Var<T>& table, int index) {
    const int rows = table.value().rows();
    if (index < 0 || index >= rows) throw std::out_of_range("take_row: index out of range");
    const int cols = table.value().cols();
    Tensor<T> out({cols});
    std::memcpy(out.data(), table.value().data() + static_cast<size_t>(index) * cols, cols * sizeof(T));
    return Var<T>::make(std::move(out), {table}, [index, cols](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) {
            for (int k = 0; k < cols; ++k) (*g)[static_cast<size_t>(index) * cols + k] += n.grad[k];
        }
    });
}

template <std::floating_point T>
Var<T> pixel_unshuffle(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] % 2 || s[2] % 2) throw std::invalid_argument("pixel_unshuffle: bad shape " + shape_str(s));
    const int c = s[0], h = s[1] / 2, w = s[2] / 2;
    Tensor<T> out({4 * c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) out.at(ch * 4 + i * 2 + j, y, xx) = x.value().at(ch, 2 * y + i, 2 * xx + j);
    return Var<T>::make(std::move(out), {x}, [c, h, w](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) g->at(ch, 2 * y + i, 2 * xx + j) += n.grad.at(ch * 4 + i * 2 + j, y, xx);
    });
}

template <std::floating_point T>
Var<T> pixel_shuffle(const Var<T>& x) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[0] % 4) throw std::invalid_argument("pixel_shuffle: bad shape " + shape_str(s));
    const int c = s[0] / 4, h = s[1], w = s[2];
    Tensor<T> out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) out.at(ch, 2 * y + i, 2 * xx + j) = x.value().at(ch * 4 + i * 2 + j, y, xx);
    return Var<T>::make(std::move(out), {x}, [c, h, w](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) g->at(ch * 4 + i * 2 + j, y, xx) += n.grad.at(ch, 2 * y + i, 2 * xx + j);
    });
}

template <std::floating_point T>
Var<T> adaptive_avg_pool(const Var<T>& x, int grid) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw std::invalid_argument("adaptive_avg_pool: expected [C,H,W], got " + shape_str(s));
    const int c = s[0], h = s[1], w = s[2];
    if (grid < 1 || h < grid || w < grid) {
        throw std::invalid_argument("adaptive_avg_pool: feature map " + shape_str(s) + " smaller than grid " +
                                    std::to_string(grid));
    }
    auto lo = [grid](int i, int n) { return (i * n) / grid; };
    auto hi = [grid](int i, int n) { return ((i + 1) * n + grid - 1) / grid; };
    Tensor<T> out({c, grid, grid});
    for (int ch = 0; ch < c; ++ch)
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                T acc = 0;
                const int y0 = lo(gy, h), y1 = hi(gy, h), x0 = lo(gx, w), x1 = hi(gx, w);
                for (int y = y0; y < y1; ++y)
                    for (int xx = x0; xx < x1; ++xx) acc += x.value().at(ch, y, xx);
                out.at(ch, gy, gx) = acc / T((y1 - y0) * (x1 - x0));
            }
    return Var<T>::make(std::move(out), {x}, [c, h, w, grid, lo, hi](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        for (int ch = 0; ch < c; ++ch)
            for (int gy = 0; gy < grid; ++gy)
                for (int gx = 0; gx < grid; ++gx) {
                    const int y0 = lo(gy, h), y1 = hi(gy, h), x0 = lo(gx, w), x1 = hi(gx, w);
                    const T share = n.grad.at(ch, gy, gx) / T((y1 - y0) * (x1 - x0));
                    for (int y = y0; y < y1; ++y)
                        for (int xx = x0; xx < x1; ++xx) g->at(ch, y, xx) += share;
                }
    });
}

template <std::floating_point T>
Var<T> pair_pool_rows(const Var<T>& x) {
    const int rows = x.value().rows();
    const int cols = x.value().cols();
    if (rows % 2) throw std::invalid_argument("pair_pool_rows: odd row count " + std::to_string(rows));
    Tensor<T> out({rows / 2, cols});
    auto X = x.value().matrix();
    for (int r = 0; r < rows / 2; ++r) out.matrix().row(r) = T(0.5) * (X.row(2 * r) + X.row(2 * r + 1));
    return Var<T>::make(std::move(out), {x}, [rows](Node<T>& n) {
        auto* g = parent_grad(n, 0);
        if (!g) return;
        auto GX = g->matrix();
        const auto G = n.grad.matrix();
        for (int r = 0; r < rows / 2; ++r) {
            GX.row(2 * r) += T(0.5) * G.row(r);
            GX.row(2 * r + 1) += T(0.5) * G.row(r);
        }
    });
}

template <std::floating_point T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    require_same_size(a, b, "mean_abs_diff");
    const T count = T(a.value().size());
    Tensor<T> out({1});
    out[0] = (a.value().array() - b.value().array()).abs().sum() / count;
    return Var<T>::make(std::move(out), {a, b}, [count](Node<T>& n) {
        const T g = n.grad[0] / count;
        const auto diff = n.parents[0]->value.array() - n.parents[1]->value.array();
        if (auto* ga = parent_grad(n, 0)) ga->array() += g * diff.sign();
        if (auto* gb = parent_grad(n, 1)) gb->array() -= g * diff.sign();
    });
}

template <std::floating_point T>
Var<T> mean_sq_diff(const Var<T>& a, const Var<T>& b) {
    require_same_size(a, b, "mean_sq_diff");
    const T count = T(a.value().size());
    Tensor<T> out({1});
    out[0] = (a.value().array() - b.value().array()).square().sum() / count;
    return Var<T>::make(std::move(out), {a, b}, [count](Node<T>& n) {
        const T g = T(2) * n.grad[0] / count;
        const auto diff = n.parents[0]->value.array() - n.parents[1]->value.array();
        if (auto* ga = parent_grad(n, 0)) ga->array() += g * diff;
        if (auto* gb = parent_grad(n, 1)) gb->array() -= g * diff;
    });
}

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
    Tensor<T> out({1});
    out[0] = x.value().array().sum();
    return Var<T>::make(std::move(out), {x}, [](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += n.grad[0];
    });
}

template <std::floating_point T>
Var<T> dot_const(const Var<T>& x, const Tensor<T>& w) {
    if (x.value().size() != w.size()) throw std::invalid_argument("dot_const: size mismatch");
    Tensor<T> out({1});
    out[0] = (x.value().array() * w.array()).sum();
    return Var<T>::make(std::move(out), {x}, [w](Node<T>& n) {
        if (auto* g = parent_grad(n, 0)) g->array() += n.grad[0] * w.array();
    });
}

#define HIDIFF_INSTANTIATE_OPS(T)                                                          \
    template Var<T> constant(Tensor<T>);                                                   \
    template Var<T> add(const Var<T>&, const Var<T>&);                                     \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                     \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                     \
    template Var<T> scale(const Var<T>&, T);                                               \
    template Var<T> affine(const Var<T>&, T, const Var<T>&, T);                            \
    template Var<T> gelu(const Var<T>&);                                                   \
    template Var<T> scale_by(const Var<T>&, const Var<T>&);                                \
    template Var<T> add_row_bias(const Var<T>&, const Var<T>&);                            \
    template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                      \
    template Var<T> pointwise(const Var<T>&, const Var<T>&);                               \
    template Var<T> transpose(const Var<T>&);                                              \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, int, int);                        \
    template Var<T> depthwise3x3(const Var<T>&, const Var<T>&);                            \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);            \
    template Var<T> softmax_rows(const Var<T>&);                                           \
    template Var<T> l2_normalize_rows(const Var<T>&, T);                                   \
    template Var<T> slice_rows(const Var<T>&, int, int);                                   \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                               \
    template Var<T> take_row(const Var<T>&, int);                                          \
    template Var<T> pixel_unshuffle(const Var<T>&);                                        \
    template Var<T> pixel_shuffle(const Var<T>&);                                          \
    template Var<T> adaptive_avg_pool(const Var<T>&, int);                                 \
    template Var<T> pair_pool_rows(const Var<T>&);                                         \
    template Var<T> mean_abs_diff(const Var<T>&, const Var<T>&);                           \
    template Var<T> mean_sq_diff(const Var<T>&, const Var<T>&);                            \
    template Var<T> sum(const Var<T>&);                                                    \
    template Var<T> dot_const(const Var<T>&, const Tensor<T>&);

HIDIFF_INSTANTIATE_OPS(float)
HIDIFF_INSTANTIATE_OPS(double)

}  // namespace hidiff::ops
