#pragma once

#include "csunet/ops.hpp"

namespace csunet {

// M x M window tiling of an [N,H,W,d] feature map.
struct WindowGrid {
    int64_t window = 0;  // M
    int64_t shift = 0;   // 0 for W-CMSA, floor(M/2) for SW-CMSA
    int64_t height = 0;
    int64_t width = 0;

    void validate() const {
        if (window < 1) throw ConfigError("window size must be >= 1");
        if (shift < 0 || shift >= window)
            throw ConfigError("window shift " + std::to_string(shift) + " out of [0," +
                              std::to_string(window) + ")");
        if (height % window != 0 || width % window != 0)
            throw ShapeError("feature extent " + std::to_string(height) + "x" +
                             std::to_string(width) + " not divisible by window " +
                             std::to_string(window));
    }
    int64_t tiles_y() const { return height / window; }
    int64_t tiles_x() const { return width / window; }
    int64_t windows_per_image() const { return tiles_y() * tiles_x(); }
};

namespace detail {

// Copy ops below share one pattern: a bijective index map with a scatter-add
// backward. `map` returns the source flat index for each output flat index.
template <typename T, typename M>
Tensor<T> gather_op(const Tensor<T>& x, Shape out_shape, M&& map, const char* name) {
    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
    const T* px = x.ptr();
    T* po = out.ptr();
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) po[i] = px[map(i)];
    detail::record_op(out, {&x},
        [xs = x.storage(), os = out.storage(), map = std::forward<M>(map), n] {
            if (!xs->requires_grad) return;
            T* gx = xs->grad_buf().data();
            const T* g = os->grad->data();
            for (int64_t i = 0; i < n; ++i) gx[map(i)] += g[i];
        },
        name);
    return out;
}

}  // namespace detail

// [N,H,W,d] -> [N*(H/M)*(W/M), M, M, d], tiles in row-major order.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowGrid& grid) {
    grid.validate();
    if (x.rank() != 4 || x.dim(1) != grid.height || x.dim(2) != grid.width)
        throw ShapeError("window_partition: input " + shape_str(x.shape()) +
                         " does not match grid");
    const int64_t N = x.dim(0), d = x.dim(3), M = grid.window;
    const int64_t tw = grid.tiles_x(), th = grid.tiles_y(), W = grid.width;
    auto map = [=](int64_t i) {
        const int64_t c = i % d;
        int64_t t = i / d;
        const int64_t mx = t % M;
        t /= M;
        const int64_t my = t % M;
        t /= M;
        const int64_t tx = t % tw;
        t /= tw;
        const int64_t ty = t % th;
        const int64_t n = t / th;
        return ((n * grid.height + ty * M + my) * W + tx * M + mx) * d + c;
    };
    return detail::gather_op(x, {N * th * tw, M, M, d}, map, "window_partition");
}

// Exact inverse of window_partition.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wins, const WindowGrid& grid) {
    grid.validate();
    const int64_t M = grid.window, th = grid.tiles_y(), tw = grid.tiles_x();
    if (wins.rank() != 4 || wins.dim(1) != M || wins.dim(2) != M ||
        wins.dim(0) % (th * tw) != 0)
        throw ShapeError("window_reverse: input " + shape_str(wins.shape()) +
                         " does not match grid");
    const int64_t N = wins.dim(0) / (th * tw), d = wins.dim(3);
    const int64_t W = grid.width;
    auto map = [=](int64_t i) {
        const int64_t c = i % d;
        int64_t t = i / d;
        const int64_t x = t % W;
        t /= W;
        const int64_t y = t % grid.height;
        const int64_t n = t / grid.height;
        const int64_t ty = y / M, my = y % M, tx = x / M, mx = x % M;
        return ((((n * th + ty) * tw + tx) * M + my) * M + mx) * d + c;
    };
    return detail::gather_op(wins, {N, grid.height, W, d}, map, "window_reverse");
}

// Torus roll: out[n,y,x,c] = x[n, (y-dy) mod H, (x-dx) mod W, c].
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, int64_t dy, int64_t dx) {
    if (x.rank() != 4) throw ShapeError("cyclic_shift: expected [N,H,W,d]");
    const int64_t H = x.dim(1), W = x.dim(2), d = x.dim(3);
    const int64_t sy = ((-dy) % H + H) % H, sx = ((-dx) % W + W) % W;
    auto map = [=](int64_t i) {
        const int64_t c = i % d;
        int64_t t = i / d;
        const int64_t xo = t % W;
        t /= W;
        const int64_t yo = t % H;
        const int64_t n = t / H;
        return ((n * H + (yo + sy) % H) * W + (xo + sx) % W) * d + c;
    };
    return detail::gather_op(x, x.shape(), map, "cyclic_shift");
}

// 2x2 neighborhood gather, order (even,even),(odd,even),(even,odd),(odd,odd):
// [N,h,w,c] -> [N,h/2,w/2,4c].
template <typename T>
Tensor<T> space_to_depth2(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("space_to_depth2: expected [N,h,w,c]");
    const int64_t N = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("space_to_depth2: odd extents in " + shape_str(x.shape()));
    auto map = [=](int64_t i) {
        const int64_t cc = i % (4 * c);
        int64_t t = i / (4 * c);
        const int64_t xo = t % (w / 2);
        t /= (w / 2);
        const int64_t yo = t % (h / 2);
        const int64_t n = t / (h / 2);
        const int64_t part = cc / c, ch = cc % c;
        const int64_t oy = (part == 1 || part == 3) ? 1 : 0;  // (ee),(oe),(eo),(oo)
        const int64_t ox = (part >= 2) ? 1 : 0;
        return ((n * h + 2 * yo + oy) * w + 2 * xo + ox) * c + ch;
    };
    return detail::gather_op(x, {N, h / 2, w / 2, 4 * c}, map, "space_to_depth2");
}

// [N,h,w,r*r*c] -> [N,r*h,r*w,c]; channel block (dy*r+dx) lands at sub-pixel (dy,dx).
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, int64_t r) {
    if (x.rank() != 4) throw ShapeError("depth_to_space: expected [N,h,w,C]");
    const int64_t N = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
    if (C % (r * r) != 0) throw ShapeError("depth_to_space: channels not divisible by r^2");
    const int64_t c = C / (r * r);
    auto map = [=](int64_t i) {
        const int64_t ch = i % c;
        int64_t t = i / c;
        const int64_t xo = t % (r * w);
        t /= (r * w);
        const int64_t yo = t % (r * h);
        const int64_t n = t / (r * h);
        const int64_t y = yo / r, dy = yo % r, x2 = xo / r, dx = xo % r;
        return ((n * h + y) * w + x2) * C + (dy * r + dx) * c + ch;
    };
    return detail::gather_op(x, {N, r * h, r * w, c}, map, "depth_to_space");
}

}  // namespace csunet
