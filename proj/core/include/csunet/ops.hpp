#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "csunet/gemm.hpp"
#include "csunet/tensor.hpp"

namespace csunet {
namespace detail {

inline Shape pad_left(const Shape& s, size_t rank) {
    Shape r(rank, 1);
    std::copy(s.begin(), s.end(), r.begin() + (rank - s.size()));
    return r;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape pa = pad_left(a, rank), pb = pad_left(b, rank), out(rank);
    for (size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1)
            out[i] = std::max(pa[i], pb[i]);
        else
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    return out;
}

// Strides of `in` viewed under `out_shape`, 0 on broadcast dims.
inline Shape bcast_strides(const Shape& in, const Shape& out_shape) {
    Shape p = pad_left(in, out_shape.size());
    Shape st = row_major_strides(p);
    for (size_t i = 0; i < p.size(); ++i)
        if (p[i] == 1 && out_shape[i] != 1) st[i] = 0;
    return st;
}

// Odometer walk over `shape`, calling f(flat_out_index, offset_a, offset_b).
template <typename F>
void bcast_walk2(const Shape& shape, const Shape& sa, const Shape& sb, F&& f) {
    const size_t rank = shape.size();
    const int64_t total = numel(shape);
    if (rank == 0) {
        if (total) f(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(rank, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, oa, ob);
        for (int64_t d = int64_t(rank) - 1; d >= 0; --d) {
            oa += sa[d];
            ob += sb[d];
            if (++idx[d] < shape[d]) break;
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

template <typename F>
void bcast_walk1(const Shape& shape, const Shape& sa, F&& f) {
    bcast_walk2(shape, sa, sa, [&](int64_t i, int64_t oa, int64_t) { f(i, oa); });
}

// target_grad (of shape `target`) += grad (of shape `gshape`, reduced over broadcast dims)
template <typename T>
void reduce_to(const T* grad, const Shape& gshape, T* target_grad, const Shape& target) {
    Shape st = bcast_strides(target, gshape);
    bcast_walk1(gshape, st, [&](int64_t i, int64_t off) { target_grad[off] += grad[i]; });
}

template <typename T, typename F>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* name) {
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    if (a.shape() == b.shape()) {
        const int64_t n = a.size();
        for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    } else {
        bcast_walk2(os, bcast_strides(a.shape(), os), bcast_strides(b.shape(), os),
                    [&](int64_t i, int64_t oa, int64_t ob) { po[i] = f(pa[oa], pb[ob]); });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out = detail::binary_op(a, b, [](T x, T y) { return x + y; }, "add");
    detail::record_op(out, {&a, &b},
        [as = a.storage(), bs = b.storage(), os = out.storage()] {
            const T* g = os->grad->data();
            if (as->requires_grad) detail::reduce_to(g, os->shape, as->grad_buf().data(), as->shape);
            if (bs->requires_grad) detail::reduce_to(g, os->shape, bs->grad_buf().data(), bs->shape);
        },
        "add");
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out = detail::binary_op(a, b, [](T x, T y) { return x - y; }, "sub");
    detail::record_op(out, {&a, &b},
        [as = a.storage(), bs = b.storage(), os = out.storage()] {
            const int64_t n = int64_t(os->grad->size());
            const T* g = os->grad->data();
            if (as->requires_grad) detail::reduce_to(g, os->shape, as->grad_buf().data(), as->shape);
            if (bs->requires_grad) {
                std::vector<T> ng(size_t(n), T(0));
                for (int64_t i = 0; i < n; ++i) ng[i] = -g[i];
                detail::reduce_to(ng.data(), os->shape, bs->grad_buf().data(), bs->shape);
            }
        },
        "sub");
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out = detail::binary_op(a, b, [](T x, T y) { return x * y; }, "mul");
    detail::record_op(out, {&a, &b},
        [as = a.storage(), bs = b.storage(), os = out.storage()] {
            const T* g = os->grad->data();
            const Shape& osh = os->shape;
            if (as->requires_grad) {
                T* ga = as->grad_buf().data();
                const T* pb = bs->data->data();
                detail::bcast_walk2(osh, detail::bcast_strides(as->shape, osh),
                                    detail::bcast_strides(bs->shape, osh),
                                    [&](int64_t i, int64_t oa, int64_t ob) { ga[oa] += g[i] * pb[ob]; });
            }
            if (bs->requires_grad) {
                T* gb = bs->grad_buf().data();
                const T* pa = as->data->data();
                detail::bcast_walk2(osh, detail::bcast_strides(as->shape, osh),
                                    detail::bcast_strides(bs->shape, osh),
                                    [&](int64_t i, int64_t oa, int64_t ob) { gb[ob] += g[i] * pa[oa]; });
            }
        },
        "mul");
    return out;
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T c) {
    Tensor<T> out = a.clone();
    for (T& v : out.data()) v *= c;
    detail::record_op(out, {&a},
        [as = a.storage(), os = out.storage(), c] {
            if (!as->requires_grad) return;
            T* ga = as->grad_buf().data();
            const T* g = os->grad->data();
            for (size_t i = 0; i < os->grad->size(); ++i) ga[i] += c * g[i];
        },
        "scalar_mul");
    return out;
}

// ---- shape ops ----

// Alias: shares data and grad with the input; not a tape node.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    int64_t known = 1, infer = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one -1 extent");
            infer = int64_t(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) shape[size_t(infer)] = x.size() / known;
    if (numel(shape) != x.size())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    auto s = std::make_shared<Storage<T>>();
    s->shape = std::move(shape);
    s->data = x.storage()->data;
    s->requires_grad = x.requires_grad();
    s->leaf = x.storage()->leaf;
    s->recorded_on = x.storage()->recorded_on;
    if (x.requires_grad()) {
        x.storage()->grad_buf();  // make sure the alias shares an allocated buffer
        s->grad = x.storage()->grad;
    }
    return Tensor<T>(s);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& perm) {
    if (perm.size() != x.rank()) throw ShapeError("permute: rank mismatch");
    Shape os(perm.size());
    Shape xstr = row_major_strides(x.shape());
    Shape gstr(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        os[i] = x.shape()[perm[i]];
        gstr[i] = xstr[perm[i]];
    }
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.ptr();
    T* po = out.ptr();
    detail::bcast_walk1(os, gstr, [&](int64_t i, int64_t off) { po[i] = px[off]; });
    detail::record_op(out, {&x},
        [xs = x.storage(), ost = out.storage(), os, gstr] {
            if (!xs->requires_grad) return;
            T* gx = xs->grad_buf().data();
            const T* g = ost->grad->data();
            detail::bcast_walk1(os, gstr, [&](int64_t i, int64_t off) { gx[off] += g[i]; });
        },
        "permute");
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, size_t axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    Shape os = xs[0].shape();
    if (axis >= os.size()) throw ShapeError("concat: bad axis");
    int64_t total = 0;
    for (const auto& x : xs) {
        Shape s = x.shape();
        s[axis] = os[axis];
        if (s != os) throw ShapeError("concat: shape mismatch " + shape_str(x.shape()));
        total += x.dim(axis);
    }
    os[axis] = total;
    int64_t outer = 1, after = 1;
    for (size_t i = 0; i < axis; ++i) outer *= os[i];
    for (size_t i = axis + 1; i < os.size(); ++i) after *= os[i];
    Tensor<T> out = Tensor<T>::zeros(os);
    T* po = out.ptr();
    const int64_t orow = total * after;
    int64_t col = 0;
    for (const auto& x : xs) {
        const int64_t block = x.dim(axis) * after;
        const T* px = x.ptr();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(po + o * orow + col, px + o * block, size_t(block) * sizeof(T));
        col += block;
    }
    std::vector<const Tensor<T>*> ins;
    bool any = false;
    for (const auto& x : xs) any = any || x.requires_grad();
    if (Tape<T>::active() && any) {
        std::vector<std::shared_ptr<Storage<T>>> stores;
        std::vector<int64_t> blocks;
        for (const auto& x : xs) {
            stores.push_back(x.storage());
            blocks.push_back(x.dim(axis) * after);
        }
        out.storage()->requires_grad = true;
        Tape<T>::active()->record(out.storage(), [stores, blocks, outer, orow, os2 = out.storage()] {
            const T* g = os2->grad->data();
            int64_t col = 0;
            for (size_t xi = 0; xi < stores.size(); ++xi) {
                if (stores[xi]->requires_grad) {
                    T* gx = stores[xi]->grad_buf().data();
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t j = 0; j < blocks[xi]; ++j)
                            gx[o * blocks[xi] + j] += g[o * orow + col + j];
                }
                col += blocks[xi];
            }
        });
    }
    detail::check_finite(out, "concat");
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, const Shape& offsets, const Shape& extents) {
    if (offsets.size() != x.rank() || extents.size() != x.rank())
        throw ShapeError("slice: rank mismatch");
    for (size_t i = 0; i < x.rank(); ++i)
        if (offsets[i] < 0 || extents[i] < 1 || offsets[i] + extents[i] > x.shape()[i])
            throw ShapeError("slice out of range on axis " + std::to_string(i));
    Shape xstr = row_major_strides(x.shape());
    int64_t base = 0;
    for (size_t i = 0; i < x.rank(); ++i) base += offsets[i] * xstr[i];
    Tensor<T> out = Tensor<T>::zeros(extents);
    const T* px = x.ptr();
    T* po = out.ptr();
    detail::bcast_walk1(extents, xstr, [&](int64_t i, int64_t off) { po[i] = px[base + off]; });
    detail::record_op(out, {&x},
        [xs = x.storage(), os = out.storage(), extents, xstr, base] {
            if (!xs->requires_grad) return;
            T* gx = xs->grad_buf().data();
            const T* g = os->grad->data();
            detail::bcast_walk1(extents, xstr, [&](int64_t i, int64_t off) { gx[base + off] += g[i]; });
        },
        "slice");
    return out;
}

// ---- reductions ----

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::record_op(out, {&x},
        [xs = x.storage(), os = out.storage()] {
            if (!xs->requires_grad) return;
            const T g = (*os->grad)[0];
            for (T& v : xs->grad_buf()) v += g;
        },
        "sum");
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const T n = T(x.size());
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc / n);
    detail::record_op(out, {&x},
        [xs = x.storage(), os = out.storage(), n] {
            if (!xs->requires_grad) return;
            const T g = (*os->grad)[0] / n;
            for (T& v : xs->grad_buf()) v += g;
        },
        "mean");
    return out;
}

// ---- matrix ops ----

// Batched matrix product a[...,m,k] x b[...,k,n]; batch dims broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul requires rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
    const int64_t k2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
    if (k != k2)
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape abat(a.shape().begin(), a.shape().end() - 2);
    Shape bbat(b.shape().begin(), b.shape().end() - 2);
    Shape batch = detail::broadcast_shape(abat, bbat);
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    Tensor<T> out = Tensor<T>::zeros(os);

    Shape sa = detail::bcast_strides(abat, batch);
    Shape sb = detail::bcast_strides(bbat, batch);
    for (auto& v : sa) v *= m * k;
    for (auto& v : sb) v *= k * n;
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    detail::bcast_walk2(batch, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
        gemm(false, false, m, n, k, T(1), pa + oa, k, pb + ob, n, T(0), po + i * m * n, n);
    });
    detail::record_op(out, {&a, &b},
        [as = a.storage(), bs = b.storage(), ost = out.storage(), batch, sa, sb, m, n, k] {
            const T* g = ost->grad->data();
            const T* pa = as->data->data();
            const T* pb = bs->data->data();
            T* ga = as->requires_grad ? as->grad_buf().data() : nullptr;
            T* gb = bs->requires_grad ? bs->grad_buf().data() : nullptr;
            detail::bcast_walk2(batch, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
                const T* gc = g + i * m * n;
                if (ga) gemm(false, true, m, k, n, T(1), gc, n, pb + ob, n, T(1), ga + oa, k);
                if (gb) gemm(true, false, k, n, m, T(1), pa + oa, k, gc, n, T(1), gb + ob, n);
            });
        },
        "matmul");
    return out;
}

// Affine map over the last dimension: x[...,in] x w[in,out] (+ bias[out]).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be 2-d");
    const int64_t in = w.dim(0), outd = w.dim(1);
    if (x.shape().back() != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd))
        throw ShapeError("linear: bad bias shape");
    const int64_t rows = x.size() / in;
    Shape os = x.shape();
    os.back() = outd;
    Tensor<T> out = Tensor<T>::zeros(os);
    gemm(false, false, rows, outd, in, T(1), x.ptr(), in, w.ptr(), outd, T(0), out.ptr(), outd);
    if (bias.defined()) {
        T* po = out.ptr();
        const T* pb = bias.ptr();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < outd; ++j) po[r * outd + j] += pb[j];
    }
    const Tensor<T>* binput = bias.defined() ? &bias : &x;  // placeholder when no bias
    detail::record_op(out, {&x, &w, binput},
        [xs = x.storage(), ws = w.storage(), bs = bias.defined() ? bias.storage() : nullptr,
         ost = out.storage(), rows, in, outd] {
            const T* g = ost->grad->data();
            if (xs->requires_grad)
                gemm(false, true, rows, in, outd, T(1), g, outd, ws->data->data(), outd, T(1),
                     xs->grad_buf().data(), in);
            if (ws->requires_grad)
                gemm(true, false, in, outd, rows, T(1), xs->data->data(), in, g, outd, T(1),
                     ws->grad_buf().data(), outd);
            if (bs && bs->requires_grad) {
                T* gb = bs->grad_buf().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < outd; ++j) gb[j] += g[r * outd + j];
            }
        },
        "linear");
    return out;
}

// ---- nonlinearities and normalization ----

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    // Exact Gaussian-CDF form x * Phi(x).
    static const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    static const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * T(M_PI));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) {
        const T phi = T(0.5) * (T(1) + std::erf(px[i] * inv_sqrt2));
        po[i] = px[i] * phi;
    }
    detail::record_op(out, {&x},
        [xs = x.storage(), os = out.storage()] {
            if (!xs->requires_grad) return;
            const T* px = xs->data->data();
            const T* g = os->grad->data();
            T* gx = xs->grad_buf().data();
            const int64_t n = int64_t(xs->data->size());
            for (int64_t i = 0; i < n; ++i) {
                const T cdf = T(0.5) * (T(1) + std::erf(px[i] * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * px[i] * px[i]);
                gx[i] += g[i] * (cdf + px[i] * pdf);
            }
        },
        "gelu");
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax: rank >= 1 required");
    const int64_t d = x.shape().back();
    const int64_t rows = x.size() / d;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        T* orow = po + r * d;
        T mx = xr[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T z = T(0);
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            z += orow[j];
        }
        const T inv = T(1) / z;
        for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
    }
    detail::record_op(out, {&x},
        [xs = x.storage(), os = out.storage(), rows, d] {
            if (!xs->requires_grad) return;
            const T* p = os->data->data();
            const T* g = os->grad->data();
            T* gx = xs->grad_buf().data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* pr = p + r * d;
                const T* gr = g + r * d;
                T dot = T(0);
                for (int64_t j = 0; j < d; ++j) dot += pr[j] * gr[j];
                for (int64_t j = 0; j < d; ++j) gx[r * d + j] += pr[j] * (gr[j] - dot);
            }
        },
        "softmax");
    return out;
}

// Normalization over the last dimension with biased variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const int64_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm: gamma/beta must have extent " + std::to_string(d));
    const int64_t rows = x.size() / d;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto inv_std = std::make_shared<std::vector<T>>(size_t(rows));
    auto means = std::make_shared<std::vector<T>>(size_t(rows));
    const T* px = x.ptr();
    const T* pg = gamma.ptr();
    const T* pb = beta.ptr();
    T* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        T m = T(0);
        for (int64_t j = 0; j < d; ++j) m += xr[j];
        m /= T(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*means)[size_t(r)] = m;
        (*inv_std)[size_t(r)] = is;
        T* orow = po + r * d;
        for (int64_t j = 0; j < d; ++j) orow[j] = (xr[j] - m) * is * pg[j] + pb[j];
    }
    detail::record_op(out, {&x, &gamma, &beta},
        [xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), os = out.storage(), means,
         inv_std, rows, d] {
            const T* px = xs->data->data();
            const T* pg = gs->data->data();
            const T* g = os->grad->data();
            T* gx = xs->requires_grad ? xs->grad_buf().data() : nullptr;
            T* gg = gs->requires_grad ? gs->grad_buf().data() : nullptr;
            T* gb = bs->requires_grad ? bs->grad_buf().data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                const T m = (*means)[size_t(r)], is = (*inv_std)[size_t(r)];
                const T* xr = px + r * d;
                const T* gr = g + r * d;
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int64_t j = 0; j < d; ++j) {
                    const T xhat = (xr[j] - m) * is;
                    const T dxhat = gr[j] * pg[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gg) gg[j] += gr[j] * xhat;
                    if (gb) gb[j] += gr[j];
                }
                if (gx) {
                    const T c1 = sum_dxhat / T(d), c2 = sum_dxhat_xhat / T(d);
                    for (int64_t j = 0; j < d; ++j) {
                        const T xhat = (xr[j] - m) * is;
                        gx[r * d + j] += is * (gr[j] * pg[j] - c1 - xhat * c2);
                    }
                }
            }
        },
        "layer_norm");
    return out;
}

// ---- gathers ----

// out[g, :] = table[idx[g], :]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<int64_t> idx) {
    if (table.rank() != 2) throw ShapeError("gather_rows: table must be 2-d");
    const int64_t rows = table.dim(0), cols = table.dim(1);
    for (int64_t v : idx)
        if (v < 0 || v >= rows) throw ShapeError("gather_rows: index out of range");
    Tensor<T> out = Tensor<T>::zeros({int64_t(idx.size()), cols});
    const T* pt = table.ptr();
    T* po = out.ptr();
    for (size_t g = 0; g < idx.size(); ++g)
        std::memcpy(po + g * cols, pt + idx[g] * cols, size_t(cols) * sizeof(T));
    detail::record_op(out, {&table},
        [ts = table.storage(), os = out.storage(), idx = std::move(idx), cols] {
            if (!ts->requires_grad) return;
            T* gt = ts->grad_buf().data();
            const T* g = os->grad->data();
            for (size_t i = 0; i < idx.size(); ++i)
                for (int64_t j = 0; j < cols; ++j) gt[idx[i] * cols + j] += g[int64_t(i) * cols + j];
        },
        "gather_rows");
    return out;
}

// ---- segmentation losses ----

// Mean over rows of -log softmax(logits)[label]; logits [P,K].
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int32_t>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [P,K]");
    const int64_t P = logits.dim(0), K = logits.dim(1);
    if (int64_t(labels.size()) != P) throw ShapeError("cross_entropy: label count mismatch");
    const T* pl = logits.ptr();
    T acc = T(0);
    for (int64_t r = 0; r < P; ++r) {
        const T* row = pl + r * K;
        const int32_t y = labels[size_t(r)];
        if (y < 0 || y >= K) throw ShapeError("cross_entropy: label out of range");
        T mx = row[0];
        for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (int64_t j = 0; j < K; ++j) z += std::exp(row[j] - mx);
        acc += (std::log(z) + mx) - row[y];
    }
    Tensor<T> out = Tensor<T>::scalar(acc / T(P));
    detail::record_op(out, {&logits},
        [ls = logits.storage(), os = out.storage(), labels, P, K] {
            if (!ls->requires_grad) return;
            const T g = (*os->grad)[0] / T(P);
            const T* pl = ls->data->data();
            T* gl = ls->grad_buf().data();
            for (int64_t r = 0; r < P; ++r) {
                const T* row = pl + r * K;
                T mx = row[0];
                for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
                T z = T(0);
                for (int64_t j = 0; j < K; ++j) z += std::exp(row[j] - mx);
                for (int64_t j = 0; j < K; ++j) {
                    T p = std::exp(row[j] - mx) / z;
                    gl[r * K + j] += g * (p - T(labels[size_t(r)] == j ? 1 : 0));
                }
            }
        },
        "cross_entropy_mean");
    return out;
}

// 1 - mean over all K classes of (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps); probs [P,K].
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const std::vector<int32_t>& labels,
                         T eps = T(1e-5)) {
    if (probs.rank() != 2) throw ShapeError("soft_dice: probs must be [P,K]");
    const int64_t P = probs.dim(0), K = probs.dim(1);
    if (int64_t(labels.size()) != P) throw ShapeError("soft_dice: label count mismatch");
    std::vector<T> sum_p(size_t(K), T(0)), sum_pg(size_t(K), T(0)), sum_g(size_t(K), T(0));
    const T* pp = probs.ptr();
    for (int64_t r = 0; r < P; ++r) {
        const int32_t y = labels[size_t(r)];
        for (int64_t j = 0; j < K; ++j) sum_p[size_t(j)] += pp[r * K + j];
        sum_pg[size_t(y)] += pp[r * K + y];
        sum_g[size_t(y)] += T(1);
    }
    T dice = T(0);
    std::vector<T> numer(size_t(K), T(0)), denom(size_t(K), T(0));
    for (int64_t j = 0; j < K; ++j) {
        numer[size_t(j)] = T(2) * sum_pg[size_t(j)] + eps;
        denom[size_t(j)] = sum_p[size_t(j)] + sum_g[size_t(j)] + eps;
        dice += numer[size_t(j)] / denom[size_t(j)];
    }
    Tensor<T> out = Tensor<T>::scalar(T(1) - dice / T(K));
    detail::record_op(out, {&probs},
        [ps = probs.storage(), os = out.storage(), labels, numer, denom, P, K] {
            if (!ps->requires_grad) return;
            const T g = (*os->grad)[0];
            T* gp = ps->grad_buf().data();
            for (int64_t r = 0; r < P; ++r) {
                const int32_t y = labels[size_t(r)];
                for (int64_t j = 0; j < K; ++j) {
                    const T dd = (T(2) * T(y == j ? 1 : 0) * denom[size_t(j)] - numer[size_t(j)]) /
                                 (denom[size_t(j)] * denom[size_t(j)]);
                    gp[r * K + j] += g * (-dd / T(K));
                }
            }
        },
        "soft_dice_loss");
    return out;
}

}  // namespace csunet
