#pragma once

#include <vector>

#include "csunet/ops.hpp"

namespace csunet {
namespace detail {

// cols is [C*kh*kw, Ho*Wo], x is [C,H,W]; zero padding.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* cols) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                T* row = cols + ((c * kh + ky) * kw + kx) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        for (int64_t ox = 0; ox < Wo; ++ox) row[oy * Wo + ox] = T(0);
                        continue;
                    }
                    const T* xrow = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t ix = ox * stride - pad + kx;
                        row[oy * Wo + ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: x += scatter(cols).
template <typename T>
void col2im_add(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* x) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                const T* row = cols + ((c * kh + ky) * kw + kx) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    T* xrow = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) xrow[ix] += row[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, int64_t N, int64_t C, int64_t H, int64_t W,
                       int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t Ho, int64_t Wo,
                       T* y) {
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const T* xc = x + (n * C + c) * H * W;
            const T* wc = w + c * kh * kw;
            T* yc = y + (n * C + c) * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy) {
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    T acc = T(0);
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += xc[iy * W + ix] * wc[ky * kw + kx];
                        }
                    }
                    yc[oy * Wo + ox] = acc;
                }
            }
        }
    }
}

}  // namespace detail

// 2-d cross-correlation with zero padding.
// x [N,Cin,H,W], w [Cout,Cin/groups,kh,kw], bias [Cout] (optional).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {},
                 int64_t stride = 1, int64_t pad = 0, int64_t groups = 1) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (groups < 1 || Cin % groups != 0 || Cout % groups != 0)
        throw ConfigError("conv2d: channels (" + std::to_string(Cin) + "," + std::to_string(Cout) +
                          ") not divisible by groups " + std::to_string(groups));
    if (Cg != Cin / groups)
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " inconsistent with input " +
                         shape_str(x.shape()) + " at groups " + std::to_string(groups));
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (H + 2 * pad < kh || W + 2 * pad < kw || Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: output extent < 1 for input " + shape_str(x.shape()) +
                         " kernel " + shape_str(w.shape()));
    if (bias.defined() && bias.size() != Cout) throw ShapeError("conv2d: bad bias shape");

    Tensor<T> out = Tensor<T>::zeros({N, Cout, Ho, Wo});
    const bool depthwise = (groups == Cin && Cout == Cin && Cg == 1);
    const T* px = x.ptr();
    const T* pw = w.ptr();
    T* po = out.ptr();
    const int64_t cin_g = Cin / groups, cout_g = Cout / groups;
    if (depthwise) {
        detail::depthwise_forward(px, pw, N, Cin, H, W, kh, kw, stride, pad, Ho, Wo, po);
    } else {
        std::vector<T> cols(size_t(cin_g * kh * kw * Ho * Wo));
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t g = 0; g < groups; ++g) {
                detail::im2col(px + (n * Cin + g * cin_g) * H * W, cin_g, H, W, kh, kw, stride, pad,
                               Ho, Wo, cols.data());
                gemm(false, false, cout_g, Ho * Wo, cin_g * kh * kw, T(1),
                     pw + g * cout_g * cin_g * kh * kw, cin_g * kh * kw, cols.data(), Ho * Wo, T(0),
                     po + (n * Cout + g * cout_g) * Ho * Wo, Ho * Wo);
            }
        }
    }
    if (bias.defined()) {
        const T* pb = bias.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Cout; ++c) {
                T* yc = po + (n * Cout + c) * Ho * Wo;
                for (int64_t i = 0; i < Ho * Wo; ++i) yc[i] += pb[c];
            }
    }
    const Tensor<T>* binput = bias.defined() ? &bias : &x;
    detail::record_op(out, {&x, &w, binput},
        [xs = x.storage(), ws = w.storage(), bs = bias.defined() ? bias.storage() : nullptr,
         os = out.storage(), N, Cin, Cout, H, W, kh, kw, stride, pad, Ho, Wo, groups, cin_g, cout_g,
         depthwise] {
            const T* g = os->grad->data();
            const T* px = xs->data->data();
            const T* pw = ws->data->data();
            T* gx = xs->requires_grad ? xs->grad_buf().data() : nullptr;
            T* gw = ws->requires_grad ? ws->grad_buf().data() : nullptr;
            if (bs && bs->requires_grad) {
                T* gb = bs->grad_buf().data();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Cout; ++c) {
                        const T* gc = g + (n * Cout + c) * Ho * Wo;
                        T acc = T(0);
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += gc[i];
                        gb[c] += acc;
                    }
            }
            if (!gx && !gw) return;
            if (depthwise) {
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Cin; ++c) {
                        const T* xc = px + (n * Cin + c) * H * W;
                        const T* wc = pw + c * kh * kw;
                        const T* gc = g + (n * Cin + c) * Ho * Wo;
                        for (int64_t oy = 0; oy < Ho; ++oy)
                            for (int64_t ox = 0; ox < Wo; ++ox) {
                                const T gv = gc[oy * Wo + ox];
                                for (int64_t ky = 0; ky < kh; ++ky) {
                                    const int64_t iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int64_t kx = 0; kx < kw; ++kx) {
                                        const int64_t ix = ox * stride - pad + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        if (gw) gw[c * kh * kw + ky * kw + kx] += gv * xc[iy * W + ix];
                                        if (gx)
                                            gx[((n * Cin + c) * H + iy) * W + ix] +=
                                                gv * wc[ky * kw + kx];
                                    }
                                }
                            }
                    }
                return;
            }
            std::vector<T> cols(size_t(cin_g * kh * kw * Ho * Wo));
            std::vector<T> gcols(size_t(cin_g * kh * kw * Ho * Wo));
            for (int64_t n = 0; n < N; ++n) {
                for (int64_t gi = 0; gi < groups; ++gi) {
                    const T* gy = g + (n * Cout + gi * cout_g) * Ho * Wo;
                    if (gw) {
                        detail::im2col(px + (n * Cin + gi * cin_g) * H * W, cin_g, H, W, kh, kw,
                                       stride, pad, Ho, Wo, cols.data());
                        gemm(false, true, cout_g, cin_g * kh * kw, Ho * Wo, T(1), gy, Ho * Wo,
                             cols.data(), Ho * Wo, T(1), gw + gi * cout_g * cin_g * kh * kw,
                             cin_g * kh * kw);
                    }
                    if (gx) {
                        gemm(true, false, cin_g * kh * kw, Ho * Wo, cout_g, T(1),
                             pw + gi * cout_g * cin_g * kh * kw, cin_g * kh * kw, gy, Ho * Wo, T(0),
                             gcols.data(), Ho * Wo);
                        detail::col2im_add(gcols.data(), cin_g, H, W, kh, kw, stride, pad, Ho, Wo,
                                           gx + (n * Cin + gi * cin_g) * H * W);
                    }
                }
            }
        },
        "conv2d");
    return out;
}

// Adjoint of conv2d (padding 0). x [N,Cin,H,W], w [Cin,Cout,kh,kw].
// Output [N,Cout,(H-1)*stride+kh,(W-1)*stride+kw]; exact r-fold upsampling when kh=kw=stride=r.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {},
                           int64_t stride = 1) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv_transpose2d: expected 4-d input and weight");
    const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cin_w = w.dim(0), Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (Cin != Cin_w)
        throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
    if (bias.defined() && bias.size() != Cout) throw ShapeError("conv_transpose2d: bad bias shape");
    const int64_t Ho = (H - 1) * stride + kh;
    const int64_t Wo = (W - 1) * stride + kw;
    Tensor<T> out = Tensor<T>::zeros({N, Cout, Ho, Wo});
    const T* px = x.ptr();
    const T* pw = w.ptr();  // viewed as [Cin, Cout*kh*kw]
    T* po = out.ptr();
    std::vector<T> cols(size_t(Cout * kh * kw * H * W));
    for (int64_t n = 0; n < N; ++n) {
        gemm(true, false, Cout * kh * kw, H * W, Cin, T(1), pw, Cout * kh * kw, px + n * Cin * H * W,
             H * W, T(0), cols.data(), H * W);
        detail::col2im_add(cols.data(), Cout, Ho, Wo, kh, kw, stride, /*pad=*/0, H, W,
                           po + n * Cout * Ho * Wo);
    }
    if (bias.defined()) {
        const T* pb = bias.ptr();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Cout; ++c) {
                T* yc = po + (n * Cout + c) * Ho * Wo;
                for (int64_t i = 0; i < Ho * Wo; ++i) yc[i] += pb[c];
            }
    }
    const Tensor<T>* binput = bias.defined() ? &bias : &x;
    detail::record_op(out, {&x, &w, binput},
        [xs = x.storage(), ws = w.storage(), bs = bias.defined() ? bias.storage() : nullptr,
         os = out.storage(), N, Cin, Cout, H, W, kh, kw, stride, Ho, Wo] {
            const T* g = os->grad->data();
            const T* px = xs->data->data();
            const T* pw = ws->data->data();
            T* gx = xs->requires_grad ? xs->grad_buf().data() : nullptr;
            T* gw = ws->requires_grad ? ws->grad_buf().data() : nullptr;
            if (bs && bs->requires_grad) {
                T* gb = bs->grad_buf().data();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Cout; ++c) {
                        const T* gc = g + (n * Cout + c) * Ho * Wo;
                        T acc = T(0);
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += gc[i];
                        gb[c] += acc;
                    }
            }
            if (!gx && !gw) return;
            std::vector<T> gcols(size_t(Cout * kh * kw * H * W));
            for (int64_t n = 0; n < N; ++n) {
                // gcols = im2col of the output gradient under the forward geometry
                detail::im2col(g + n * Cout * Ho * Wo, Cout, Ho, Wo, kh, kw, stride, /*pad=*/0, H, W,
                               gcols.data());
                if (gx)
                    gemm(false, false, Cin, H * W, Cout * kh * kw, T(1), pw, Cout * kh * kw,
                         gcols.data(), H * W, T(1), gx + n * Cin * H * W, H * W);
                if (gw)
                    gemm(false, true, Cin, Cout * kh * kw, H * W, T(1), px + n * Cin * H * W, H * W,
                         gcols.data(), H * W, T(1), gw, Cout * kh * kw);
            }
        },
        "conv_transpose2d");
    return out;
}

}  // namespace csunet
