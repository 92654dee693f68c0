#pragma once

#include <cstdint>
#include <vector>

#include "csunet/tensor.hpp"

namespace csunet::metrics {

using Mask = std::vector<int32_t>;  // row-major [h*w] class ids

// Per-class Dice 2|P∩G|/(|P|+|G|); a class absent from both masks scores 1.0.
std::vector<double> dice_per_class(const Mask& pred, const Mask& truth, int64_t num_classes);

// Mean over foreground classes (background class 0 excluded).
double mean_foreground(const std::vector<double>& per_class);

// Flat indices of the 8-connectivity boundary of {mask == cls}: member pixels
// with any neighbor (or the image edge) outside the region.
std::vector<int64_t> boundary_pixels(const Mask& mask, int64_t h, int64_t w, int32_t cls);

// Symmetric Hausdorff distance between the class boundaries of two masks, in
// pixels (Euclidean). The requested percentile is taken over the pooled set of
// directed nearest-boundary distances from both masks, so the measure is
// symmetric at every percentile. Both regions empty -> 0; exactly one empty ->
// image diagonal (sentinel for a completely missed structure).
double hausdorff(const Mask& pred, const Mask& truth, int64_t h, int64_t w, int32_t cls,
                 int percentile);

// Per-pixel argmax over channels of one [K,H,W] logit volume laid out row-major.
template <typename T>
Mask argmax_mask(const T* logits, int64_t K, int64_t hw) {
    Mask out(size_t(hw), 0);
    for (int64_t p = 0; p < hw; ++p) {
        T best = logits[p];
        int32_t arg = 0;
        for (int64_t k = 1; k < K; ++k) {
            const T v = logits[k * hw + p];
            if (v > best) {
                best = v;
                arg = int32_t(k);
            }
        }
        out[size_t(p)] = arg;
    }
    return out;
}

// Splits batched logits [N,K,H,W] into per-image argmax masks.
template <typename T>
std::vector<Mask> argmax_masks(const Tensor<T>& logits) {
    if (logits.rank() != 4) throw ShapeError("argmax_masks: expected [N,K,H,W]");
    const int64_t N = logits.dim(0), K = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    std::vector<Mask> out;
    out.reserve(size_t(N));
    for (int64_t n = 0; n < N; ++n) out.push_back(argmax_mask(logits.ptr() + n * K * hw, K, hw));
    return out;
}

}  // namespace csunet::metrics
