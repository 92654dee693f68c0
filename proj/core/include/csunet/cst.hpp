#pragma once

#include <array>
#include <tuple>

#include "csunet/conv.hpp"
#include "csunet/window.hpp"

namespace csunet {

template <typename T>
struct NormParams {
    Tensor<T> gamma, beta;
};

enum class QkvKind { Linear, ConvWholeMap, ConvWindowed };
enum class RefineKind { Linear, Depthwise };

// (S)W-CMSA parameters. Which fields are populated depends on the variant:
// conv kinds use the depthwise kernels + norms, Linear uses qkv_weight/bias.
template <typename T>
struct CmsaParams {
    int64_t heads = 1;
    QkvKind qkv_kind = QkvKind::ConvWindowed;
    RefineKind refine_kind = RefineKind::Depthwise;

    Tensor<T> q_kernel, k_kernel, v_kernel;  // depthwise [d,1,3,3]
    NormParams<T> q_norm, k_norm, v_norm;
    Tensor<T> qkv_weight, qkv_bias;          // [d,3d], [3d]

    Tensor<T> bias_table;                    // [(2M-1)^2, heads]; undefined when disabled

    Tensor<T> refine_kernel;                 // depthwise [d,1,3,3]
    Tensor<T> proj_weight, proj_bias;        // [d,d], [d]
};

// Feed-forward parameters; covers both the DSF module and the MLP ablation variant.
template <typename T>
struct DsfParams {
    bool conv = true;                        // false: plain pre-LN MLP
    Tensor<T> dw_kernel;                     // depthwise [d,1,7,7]
    NormParams<T> norm;                      // post-conv LN (DSF) / pre-MLP LN (MLP)
    Tensor<T> pw_expand_w, pw_expand_b;      // [d,4d], [4d]
    Tensor<T> pw_project_w, pw_project_b;    // [4d,d], [d]
};

template <typename T>
struct CstBlockParams {
    NormParams<T> pre_norm;
    CmsaParams<T> cmsa;
    DsfParams<T> dsf;
    Tensor<T> ls_attn, ls_dsf;               // per-channel layer-scale gains [d]
};

namespace detail {

// Depthwise conv on a channels-last map [B,H,W,d], stride 1, zero padding.
template <typename T>
Tensor<T> dwconv_nhwc(const Tensor<T>& x, const Tensor<T>& kernel, int64_t pad) {
    Tensor<T> nchw = permute(x, {0, 3, 1, 2});
    Tensor<T> y = conv2d(nchw, kernel, {}, /*stride=*/1, pad, /*groups=*/x.shape().back());
    return permute(y, {0, 2, 3, 1});
}

template <typename T>
Tensor<T> layer_scale(const Tensor<T>& branch, const Tensor<T>& gains) {
    Shape s(branch.rank(), 1);
    s.back() = gains.size();
    return mul(branch, reshape(gains, s));
}

}  // namespace detail

// Relative-coordinate index into the (2M-1)^2 bias table for each (query,key)
// position pair inside an M x M window; row-major over (i,j).
inline std::vector<int64_t> relative_position_index(int64_t M) {
    std::vector<int64_t> idx;
    idx.reserve(size_t(M * M * M * M));
    for (int64_t iy = 0; iy < M; ++iy)
        for (int64_t ix = 0; ix < M; ++ix)
            for (int64_t jy = 0; jy < M; ++jy)
                for (int64_t jx = 0; jx < M; ++jx) {
                    const int64_t dy = iy - jy + M - 1, dx = ix - jx + M - 1;
                    idx.push_back(dy * (2 * M - 1) + dx);
                }
    return idx;
}

// Pre-shift region id of every pixel of the cyclically shifted map (Swin's
// masking scheme): 3 bands per axis split at H-M and H-shift.
inline std::vector<int32_t> shift_region_ids(const WindowGrid& grid) {
    std::vector<int32_t> ids(size_t(grid.height * grid.width));
    auto band = [&](int64_t v, int64_t extent) {
        if (v < extent - grid.window) return 0;
        if (v < extent - grid.shift) return 1;
        return 2;
    };
    for (int64_t y = 0; y < grid.height; ++y)
        for (int64_t x = 0; x < grid.width; ++x)
            ids[size_t(y * grid.width + x)] = int32_t(band(y, grid.height) * 3 + band(x, grid.width));
    return ids;
}

// Additive mask [windows_per_image, M^2, M^2]: -1e9 between tokens from
// different pre-shift regions, 0 otherwise.
template <typename T>
Tensor<T> sw_attention_mask(const WindowGrid& grid) {
    grid.validate();
    const int64_t M = grid.window, nw = grid.windows_per_image();
    const std::vector<int32_t> ids = shift_region_ids(grid);
    Tensor<T> mask = Tensor<T>::zeros({nw, M * M, M * M});
    T* pm = mask.ptr();
    for (int64_t ty = 0; ty < grid.tiles_y(); ++ty)
        for (int64_t tx = 0; tx < grid.tiles_x(); ++tx) {
            const int64_t w = ty * grid.tiles_x() + tx;
            for (int64_t i = 0; i < M * M; ++i)
                for (int64_t j = 0; j < M * M; ++j) {
                    const int64_t yi = ty * M + i / M, xi = tx * M + i % M;
                    const int64_t yj = ty * M + j / M, xj = tx * M + j % M;
                    if (ids[size_t(yi * grid.width + xi)] != ids[size_t(yj * grid.width + xj)])
                        pm[(w * M * M + i) * M * M + j] = T(-1e9);
                }
        }
    return mask;
}

// Per-window convolutional Q/K/V: depthwise 3x3 (zero-padded at window
// borders), layer norm over channels, flatten to M^2 tokens.
template <typename T>
std::array<Tensor<T>, 3> conv_qkv(const Tensor<T>& wins, const CmsaParams<T>& p) {
    if (wins.rank() != 4) throw ShapeError("conv_qkv: expected [B,M,M,d]");
    const int64_t B = wins.dim(0), M = wins.dim(1), d = wins.dim(3);
    auto proj = [&](const Tensor<T>& kernel, const NormParams<T>& n) {
        Tensor<T> y = detail::dwconv_nhwc(wins, kernel, /*pad=*/1);
        y = layer_norm(y, n.gamma, n.beta);
        return reshape(y, {B, M * M, d});
    };
    return {proj(p.q_kernel, p.q_norm), proj(p.k_kernel, p.k_norm), proj(p.v_kernel, p.v_norm)};
}

// (Shifted-)window convolutional multi-head self-attention over [N,H,W,d].
template <typename T>
Tensor<T> w_cmsa(const Tensor<T>& x, const CmsaParams<T>& p, const WindowGrid& grid) {
    grid.validate();
    const int64_t N = x.dim(0), d = x.dim(3), M = grid.window, h = p.heads;
    if (d % h != 0)
        throw ConfigError("w_cmsa: dim " + std::to_string(d) + " not divisible by heads " +
                          std::to_string(h));
    const int64_t dh = d / h, S = M * M;

    Tensor<T> shifted = grid.shift > 0 ? cyclic_shift(x, -grid.shift, -grid.shift) : x;

    Tensor<T> q, k, v;
    switch (p.qkv_kind) {
        case QkvKind::ConvWindowed: {
            Tensor<T> wins = window_partition(shifted, grid);
            auto qkv = conv_qkv(wins, p);
            q = qkv[0];
            k = qkv[1];
            v = qkv[2];
            break;
        }
        case QkvKind::ConvWholeMap: {
            auto proj = [&](const Tensor<T>& kernel, const NormParams<T>& n) {
                Tensor<T> y = detail::dwconv_nhwc(shifted, kernel, /*pad=*/1);
                y = layer_norm(y, n.gamma, n.beta);
                Tensor<T> wins = window_partition(y, grid);
                return reshape(wins, {wins.dim(0), S, d});
            };
            q = proj(p.q_kernel, p.q_norm);
            k = proj(p.k_kernel, p.k_norm);
            v = proj(p.v_kernel, p.v_norm);
            break;
        }
        case QkvKind::Linear: {
            Tensor<T> qkv = linear(shifted, p.qkv_weight, p.qkv_bias);  // [N,H,W,3d]
            auto part = [&](int64_t slot) {
                Tensor<T> piece = slice(qkv, {0, 0, 0, slot * d}, {N, grid.height, grid.width, d});
                Tensor<T> wins = window_partition(piece, grid);
                return reshape(wins, {wins.dim(0), S, d});
            };
            q = part(0);
            k = part(1);
            v = part(2);
            break;
        }
    }
    const int64_t Bw = q.dim(0);

    auto split_heads = [&](const Tensor<T>& t) {
        return permute(reshape(t, {Bw, S, h, dh}), {0, 2, 1, 3});  // [Bw,h,S,dh]
    };
    Tensor<T> qh = split_heads(q), kh = split_heads(k), vh = split_heads(v);

    Tensor<T> logits = matmul(qh, permute(kh, {0, 1, 3, 2}));  // [Bw,h,S,S]
    logits = scalar_mul(logits, T(1) / std::sqrt(T(dh)));

    if (p.bias_table.defined()) {
        Tensor<T> b = gather_rows(p.bias_table, relative_position_index(M));  // [S*S,h]
        b = reshape(permute(reshape(b, {S, S, h}), {2, 0, 1}), {1, h, S, S});
        logits = add(logits, b);
    }
    if (grid.shift > 0) {
        const int64_t nw = grid.windows_per_image();
        Tensor<T> mask = sw_attention_mask<T>(grid);  // constant, [nw,S,S]
        logits = reshape(logits, {N, nw, h, S, S});
        logits = add(logits, reshape(mask, {1, nw, 1, S, S}));
        logits = reshape(logits, {Bw, h, S, S});
    }

    Tensor<T> attn = softmax(logits);
    Tensor<T> ctx = matmul(attn, vh);                           // [Bw,h,S,dh]
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), {Bw, M, M, d});

    Tensor<T> refined;
    if (p.refine_kind == RefineKind::Depthwise) {
        refined = detail::dwconv_nhwc(ctx, p.refine_kernel, /*pad=*/1);
    } else {
        refined = linear(ctx, p.proj_weight, p.proj_bias);
    }

    Tensor<T> out = window_reverse(refined, grid);
    if (grid.shift > 0) out = cyclic_shift(out, grid.shift, grid.shift);
    return out;
}

// Feed-forward branch (pre-residual): 7x7 depthwise -> LN -> pointwise 4d ->
// GELU -> pointwise d. The residual is owned by cst_block.
template <typename T>
Tensor<T> dsf(const Tensor<T>& x, const DsfParams<T>& p) {
    Tensor<T> y;
    if (p.conv) {
        y = detail::dwconv_nhwc(x, p.dw_kernel, /*pad=*/3);
        y = layer_norm(y, p.norm.gamma, p.norm.beta);
    } else {
        y = layer_norm(x, p.norm.gamma, p.norm.beta);
    }
    y = linear(y, p.pw_expand_w, p.pw_expand_b);
    y = gelu(y);
    return linear(y, p.pw_project_w, p.pw_project_b);
}

// One CST block: z_hat = x + ls_attn * W-CMSA(LN(x)); out = z_hat + ls_dsf * DSF(z_hat).
template <typename T>
Tensor<T> cst_block(const Tensor<T>& x, const CstBlockParams<T>& p, const WindowGrid& grid) {
    Tensor<T> attn = w_cmsa(layer_norm(x, p.pre_norm.gamma, p.pre_norm.beta), p.cmsa, grid);
    Tensor<T> zhat = add(x, detail::layer_scale(attn, p.ls_attn));
    Tensor<T> ffn = dsf(zhat, p.dsf);
    return add(zhat, detail::layer_scale(ffn, p.ls_dsf));
}

// One CST layer = W-CMSA block followed by its shifted twin.
template <typename T>
Tensor<T> cst_layer(const Tensor<T>& x, const std::array<CstBlockParams<T>, 2>& blocks,
                    WindowGrid grid) {
    grid.shift = 0;
    Tensor<T> y = cst_block(x, blocks[0], grid);
    grid.shift = grid.window / 2;
    return cst_block(y, blocks[1], grid);
}

}  // namespace csunet
