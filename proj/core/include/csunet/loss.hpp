#pragma once

#include "csunet/ops.hpp"

namespace csunet {

// Segmentation loss: 0.5 * pixelwise cross entropy + 0.5 * soft Dice.
// logits [N,K,H,W]; labels row-major [N*H*W] with values in [0,K).
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& logits, const std::vector<int32_t>& labels) {
    if (logits.rank() != 4) throw ShapeError("combined_loss: logits must be [N,K,H,W]");
    const int64_t K = logits.dim(1);
    const int64_t P = logits.dim(0) * logits.dim(2) * logits.dim(3);
    if (int64_t(labels.size()) != P)
        throw ShapeError("combined_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(P) + " pixels");
    Tensor<T> flat = reshape(permute(logits, {0, 2, 3, 1}), {P, K});
    Tensor<T> ce = cross_entropy_mean(flat, labels);
    Tensor<T> dice = soft_dice_loss(softmax(flat), labels);
    return scalar_mul(add(ce, dice), T(0.5));
}

}  // namespace csunet
