#pragma once

#include "aedet/tensor.h"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <limits>

// Dense conv / pool kernels. Each has a plain serial reference
// (*_ref) and an OpenMP variant. The parallel variants split work over
// indices that own disjoint outputs while keeping the per-element
// accumulation order identical to the reference, so results are
// bit-identical for any thread count. All convolutions are
// cross-correlations (no kernel flip).

namespace aedet::kernels {

inline Shape conv_out_shape(Shape in, Shape w, int stride, int pad) {
    if (w.c != in.c)
        throw ShapeError("conv2d: kernel in_ch " + std::to_string(w.c) +
                         " != input channels " + std::to_string(in.c));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    int oh = (in.h + 2 * pad - w.h) / stride + 1;
    int ow = (in.w + 2 * pad - w.w) / stride + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel " + w.str() + " too large for input " + in.str());
    return Shape{in.n, w.n, oh, ow};
}

// --- im2col-backed forward ---------------------------------------------
//
// Column buffer layout: [in.c*kh*kw][oh*ow] per batch item. The matrix
// product out[oc][p] = sum_k w[oc][k] * col[k][p] accumulates k in a
// fixed order for every output element, matching the reference loop
// nest (c, kh, kw).

template <typename T>
void im2col(const Tensor<T>& in, int b, int kh, int kw, int stride, int pad,
            int oh, int ow, T* col) {
    const int C = in.shape.c, H = in.shape.h, W = in.shape.w;
    const T* src = in.data() + static_cast<std::size_t>(b) * C * H * W;
    std::size_t k = 0;
    for (int c = 0; c < C; ++c)
        for (int di = 0; di < kh; ++di)
            for (int dj = 0; dj < kw; ++dj, ++k) {
                T* dst = col + k * static_cast<std::size_t>(oh) * ow;
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + di;
                    if (ii < 0 || ii >= H) {
                        for (int oj = 0; oj < ow; ++oj) *dst++ = T(0);
                        continue;
                    }
                    const T* row = src + (static_cast<std::size_t>(c) * H + ii) * W;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + dj;
                        *dst++ = (jj < 0 || jj >= W) ? T(0) : row[jj];
                    }
                }
            }
}

template <typename T>
void conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias,
                    int stride, int pad, Tensor<T>& out) {
    Shape os = conv_out_shape(in.shape, weight.shape, stride, pad);
    out = Tensor<T>(os);
    const int K = weight.shape.c * weight.shape.h * weight.shape.w;
    const int P = os.h * os.w;
    std::vector<T> col(static_cast<std::size_t>(K) * P);
    for (int b = 0; b < in.shape.n; ++b) {
        im2col(in, b, weight.shape.h, weight.shape.w, stride, pad, os.h, os.w, col.data());
        T* obase = out.data() + static_cast<std::size_t>(b) * os.c * P;
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < os.c; ++oc) {
            const T* wrow = weight.data() + static_cast<std::size_t>(oc) * K;
            T* orow = obase + static_cast<std::size_t>(oc) * P;
            T bv = bias.v.empty() ? T(0) : bias.v[oc];
            for (int p = 0; p < P; ++p) orow[p] = bv;
            for (int k = 0; k < K; ++k) {
                T wk = wrow[k];
                const T* crow = col.data() + static_cast<std::size_t>(k) * P;
                for (int p = 0; p < P; ++p) orow[p] += wk * crow[p];
            }
        }
    }
}

/// Direct 6-nested-loop forward, the serial reference the fast path is
/// tested against.
template <typename T>
void conv2d_forward_ref(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias,
                        int stride, int pad, Tensor<T>& out) {
    Shape os = conv_out_shape(in.shape, weight.shape, stride, pad);
    out = Tensor<T>(os);
    for (int b = 0; b < in.shape.n; ++b)
        for (int oc = 0; oc < os.c; ++oc)
            for (int oi = 0; oi < os.h; ++oi)
                for (int oj = 0; oj < os.w; ++oj) {
                    T acc = bias.v.empty() ? T(0) : bias.v[oc];
                    for (int c = 0; c < in.shape.c; ++c)
                        for (int di = 0; di < weight.shape.h; ++di)
                            for (int dj = 0; dj < weight.shape.w; ++dj) {
                                int ii = oi * stride - pad + di;
                                int jj = oj * stride - pad + dj;
                                if (ii < 0 || ii >= in.shape.h || jj < 0 || jj >= in.shape.w)
                                    continue;
                                acc += in.at(b, c, ii, jj) * weight.at(oc, c, di, dj);
                            }
                    out.at(b, oc, oi, oj) = acc;
                }
}

// --- backward -----------------------------------------------------------

/// Scatter a column buffer (layout as im2col) back into an image slice,
/// accumulating overlaps.
template <typename T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int oh,
            int ow, T* img) {
    std::size_t k = 0;
    for (int c = 0; c < C; ++c)
        for (int di = 0; di < kh; ++di)
            for (int dj = 0; dj < kw; ++dj, ++k) {
                const T* src = col + k * static_cast<std::size_t>(oh) * ow;
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + di;
                    if (ii < 0 || ii >= H) {
                        src += ow;
                        continue;
                    }
                    T* row = img + (static_cast<std::size_t>(c) * H + ii) * W;
                    for (int oj = 0; oj < ow; ++oj, ++src) {
                        int jj = oj * stride - pad + dj;
                        if (jj >= 0 && jj < W) row[jj] += *src;
                    }
                }
            }
}

/// grad wrt input: gcol = W^T * gout per batch item, then col2im.
/// Parallel over batch items; each owns a disjoint slice of gin.
template <typename T>
void conv2d_backward_input(const Tensor<T>& gout, const Tensor<T>& weight, int stride,
                           int pad, Shape in_shape, Tensor<T>& gin) {
    gin = Tensor<T>(in_shape);
    const Shape& os = gout.shape;
    const int K = weight.shape.c * weight.shape.h * weight.shape.w;
    const int P = os.h * os.w;
#pragma omp parallel
    {
        std::vector<T> gcol(static_cast<std::size_t>(K) * P);
#pragma omp for schedule(static)
        for (int b = 0; b < in_shape.n; ++b) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            const T* gbase = gout.data() + static_cast<std::size_t>(b) * os.c * P;
            for (int k = 0; k < K; ++k) {
                T* crow = gcol.data() + static_cast<std::size_t>(k) * P;
                for (int oc = 0; oc < os.c; ++oc) {
                    T wk = weight.v[static_cast<std::size_t>(oc) * K + k];
                    const T* grow = gbase + static_cast<std::size_t>(oc) * P;
                    for (int p = 0; p < P; ++p) crow[p] += wk * grow[p];
                }
            }
            col2im(gcol.data(), in_shape.c, in_shape.h, in_shape.w, weight.shape.h,
                   weight.shape.w, stride, pad, os.h, os.w,
                   gin.data() + static_cast<std::size_t>(b) * in_shape.c * in_shape.h *
                                    in_shape.w);
        }
    }
}

/// grad wrt weight and bias: gweight[oc][k] = sum_b <gout row, col row>.
/// Batch items are accumulated in order; within one item output channels
/// are parallel and own disjoint rows, so any thread count gives the
/// same result.
template <typename T>
void conv2d_backward_weight(const Tensor<T>& in, const Tensor<T>& gout, int stride, int pad,
                            Shape w_shape, Tensor<T>& gweight, Tensor<T>& gbias) {
    gweight = Tensor<T>(w_shape);
    gbias = Tensor<T>(Shape{1, 1, 1, w_shape.n});
    const Shape& os = gout.shape;
    const int K = w_shape.c * w_shape.h * w_shape.w;
    const int P = os.h * os.w;
    std::vector<T> col(static_cast<std::size_t>(K) * P);
    for (int b = 0; b < in.shape.n; ++b) {
        im2col(in, b, w_shape.h, w_shape.w, stride, pad, os.h, os.w, col.data());
        const T* gbase = gout.data() + static_cast<std::size_t>(b) * os.c * P;
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < os.c; ++oc) {
            const T* grow = gbase + static_cast<std::size_t>(oc) * P;
            // simd reductions: the summation order is fixed by codegen,
            // not by the thread count, so results stay reproducible
            T bias_acc = T(0);
#pragma omp simd reduction(+ : bias_acc)
            for (int p = 0; p < P; ++p) bias_acc += grow[p];
            gbias.v[oc] += bias_acc;
            T* wrow = gweight.data() + static_cast<std::size_t>(oc) * K;
            for (int k = 0; k < K; ++k) {
                const T* crow = col.data() + static_cast<std::size_t>(k) * P;
                T acc = T(0);
#pragma omp simd reduction(+ : acc)
                for (int p = 0; p < P; ++p) acc += grow[p] * crow[p];
                wrow[k] += acc;
            }
        }
    }
}

// --- max pooling ----------------------------------------------------------

/// Forward max pool; argmax records the flat index of the chosen input
/// element (first occurrence in row-major scan on ties).
template <typename T>
void max_pool2d_forward(const Tensor<T>& in, int k, int stride, Tensor<T>& out,
                        std::vector<std::size_t>& argmax) {
    if (in.shape.h < k || in.shape.w < k)
        throw ShapeError("max_pool2d: window " + std::to_string(k) + " larger than input " +
                         in.shape.str());
    Shape os{in.shape.n, in.shape.c, (in.shape.h - k) / stride + 1,
             (in.shape.w - k) / stride + 1};
    out = Tensor<T>(os);
    argmax.assign(os.size(), 0);
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < os.n; ++b)
        for (int c = 0; c < os.c; ++c)
            for (int oi = 0; oi < os.h; ++oi)
                for (int oj = 0; oj < os.w; ++oj) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) {
                            int ii = oi * stride + di, jj = oj * stride + dj;
                            std::size_t flat =
                                ((static_cast<std::size_t>(b) * in.shape.c + c) * in.shape.h + ii) *
                                    in.shape.w + jj;
                            if (in.v[flat] > best) {
                                best = in.v[flat];
                                best_idx = flat;
                            }
                        }
                    std::size_t o =
                        ((static_cast<std::size_t>(b) * os.c + c) * os.h + oi) * os.w + oj;
                    out.v[o] = best;
                    argmax[o] = best_idx;
                }
}

template <typename T>
void max_pool2d_backward(const Tensor<T>& gout, const std::vector<std::size_t>& argmax,
                         Shape in_shape, Tensor<T>& gin) {
    gin = Tensor<T>(in_shape);
    for (std::size_t o = 0; o < gout.size(); ++o) gin.v[argmax[o]] += gout.v[o];
}

}  // namespace aedet::kernels
