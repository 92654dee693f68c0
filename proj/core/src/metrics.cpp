#include "csunet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "csunet/common.hpp"

namespace csunet::metrics {

std::vector<double> dice_per_class(const Mask& pred, const Mask& truth, int64_t num_classes) {
    if (pred.size() != truth.size()) throw ShapeError("dice: mask size mismatch");
    std::vector<int64_t> np(size_t(num_classes), 0), ng(size_t(num_classes), 0),
        ni(size_t(num_classes), 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        const int32_t p = pred[i], g = truth[i];
        if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
            throw ShapeError("dice: class id out of range");
        ++np[size_t(p)];
        ++ng[size_t(g)];
        if (p == g) ++ni[size_t(p)];
    }
    std::vector<double> out(size_t(num_classes), 0.0);
    for (int64_t k = 0; k < num_classes; ++k) {
        const int64_t denom = np[size_t(k)] + ng[size_t(k)];
        out[size_t(k)] = denom == 0 ? 1.0 : 2.0 * double(ni[size_t(k)]) / double(denom);
    }
    return out;
}

double mean_foreground(const std::vector<double>& per_class) {
    if (per_class.size() < 2) throw UsageError("mean_foreground: need >= 2 classes");
    double acc = 0.0;
    for (size_t k = 1; k < per_class.size(); ++k) acc += per_class[k];
    return acc / double(per_class.size() - 1);
}

std::vector<int64_t> boundary_pixels(const Mask& mask, int64_t h, int64_t w, int32_t cls) {
    if (int64_t(mask.size()) != h * w) throw ShapeError("boundary: mask size mismatch");
    std::vector<int64_t> out;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (mask[size_t(y * w + x)] != cls) continue;
            bool edge = false;
            for (int64_t dy = -1; dy <= 1 && !edge; ++dy)
                for (int64_t dx = -1; dx <= 1 && !edge; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w ||
                        mask[size_t(ny * w + nx)] != cls)
                        edge = true;
                }
            if (edge) out.push_back(y * w + x);
        }
    return out;
}

namespace {

// For each point of `from`, Euclidean distance to the nearest point of `to`.
void directed_distances(const std::vector<int64_t>& from, const std::vector<int64_t>& to,
                        int64_t w, std::vector<double>& out) {
    for (int64_t a : from) {
        const int64_t ay = a / w, ax = a % w;
        int64_t best = INT64_MAX;
        for (int64_t b : to) {
            const int64_t dy = ay - b / w, dx = ax - b % w;
            best = std::min(best, dy * dy + dx * dx);
        }
        out.push_back(std::sqrt(double(best)));
    }
}

}  // namespace

double hausdorff(const Mask& pred, const Mask& truth, int64_t h, int64_t w, int32_t cls,
                 int percentile) {
    if (percentile < 1 || percentile > 100) throw UsageError("hausdorff: bad percentile");
    const std::vector<int64_t> bp = boundary_pixels(pred, h, w, cls);
    const std::vector<int64_t> bt = boundary_pixels(truth, h, w, cls);
    if (bp.empty() && bt.empty()) return 0.0;
    if (bp.empty() || bt.empty()) return std::sqrt(double(h * h + w * w));
    std::vector<double> d;
    d.reserve(bp.size() + bt.size());
    directed_distances(bp, bt, w, d);
    directed_distances(bt, bp, w, d);
    std::sort(d.begin(), d.end());
    const size_t idx =
        size_t(std::ceil(double(percentile) / 100.0 * double(d.size()))) - 1;
    return d[std::min(idx, d.size() - 1)];
}

}  // namespace csunet::metrics
