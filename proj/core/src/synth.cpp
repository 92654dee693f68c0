#include <cmath>
#include <filesystem>
#include <fstream>

#include "csunet/data.hpp"

namespace csunet {

namespace {

struct Shape2d {
    int kind;  // 0 ellipse, 1 rectangle, 2 annulus
    double cy, cx, ry, rx;
};

bool inside(const Shape2d& s, double y, double x) {
    const double dy = (y - s.cy) / s.ry, dx = (x - s.cx) / s.rx;
    switch (s.kind) {
        case 0: return dy * dy + dx * dx <= 1.0;
        case 1: return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        default: {
            const double r2 = dy * dy + dx * dx;
            return r2 <= 1.0 && r2 >= 0.30;  // ring with inner radius ~0.55
        }
    }
}

}  // namespace

std::vector<SegSample> synth_dataset(uint64_t seed, int64_t n_samples, int64_t size,
                                     int64_t num_classes) {
    if (num_classes < 2) throw ConfigError("synth_dataset: need num_classes >= 2");
    if (n_samples < 1 || size < 8) throw ConfigError("synth_dataset: bad sample count or size");
    Rng rng(seed);
    std::vector<SegSample> out;
    out.reserve(size_t(n_samples));
    const double S = double(size);

    for (int64_t si = 0; si < n_samples; ++si) {
        SegSample smp;
        smp.h = smp.w = size;
        smp.id = "synth-" + std::to_string(seed) + "-" + std::to_string(si);
        smp.mask.assign(size_t(size * size), 0);
        smp.image = Tensor<float>::zeros({3, size, size});

        // Textured background: base level + random plane gradient.
        const double b0 = rng.uniform(0.25, 0.45);
        const double gy = rng.uniform(-0.10, 0.10), gx = rng.uniform(-0.10, 0.10);

        // One organ per foreground class, centers spread on a ring so later
        // classes rarely occlude earlier ones entirely.
        std::vector<Shape2d> shapes;
        std::vector<double> levels;
        for (int64_t k = 1; k < num_classes; ++k) {
            Shape2d sh;
            sh.kind = int(rng.uniform_int(0, 2));
            const double ang =
                2.0 * M_PI * double(k - 1) / double(num_classes - 1) + rng.uniform(-0.5, 0.5);
            const double rad = rng.uniform(0.16, 0.30) * S;
            sh.cy = 0.5 * S + rad * std::sin(ang);
            sh.cx = 0.5 * S + rad * std::cos(ang);
            sh.ry = rng.uniform(0.09, 0.20) * S;
            sh.rx = rng.uniform(0.09, 0.20) * S;
            shapes.push_back(sh);
            // Characteristic intensity with enough jitter that neighboring
            // classes overlap in brightness; shape must disambiguate.
            levels.push_back(0.20 + 0.60 * double(k - 1) / double(std::max<int64_t>(1, num_classes - 2)) +
                             rng.uniform(-0.12, 0.12));
        }
        const double cgain[3] = {rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1),
                                 rng.uniform(0.9, 1.1)};

        float* img = smp.image.ptr();
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                double v = b0 + gy * (double(y) / S - 0.5) + gx * (double(x) / S - 0.5);
                int32_t cls = 0;
                for (int64_t k = 1; k < num_classes; ++k)
                    if (inside(shapes[size_t(k - 1)], double(y) + 0.5, double(x) + 0.5)) {
                        cls = int32_t(k);  // later classes occlude
                        v = levels[size_t(k - 1)];
                    }
                smp.mask[size_t(y * size + x)] = cls;
                for (int64_t c = 0; c < 3; ++c) {
                    const double n = rng.normal(0.0, 0.06);
                    img[(c * size + y) * size + x] =
                        float(std::min(1.0, std::max(0.0, v * cgain[c] + n)));
                }
            }
        out.push_back(std::move(smp));
    }
    return out;
}

void flip_h(SegSample& s) {
    float* img = s.image.ptr();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < s.h; ++y)
            for (int64_t x = 0; x < s.w / 2; ++x)
                std::swap(img[(c * s.h + y) * s.w + x], img[(c * s.h + y) * s.w + (s.w - 1 - x)]);
    for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w / 2; ++x)
            std::swap(s.mask[size_t(y * s.w + x)], s.mask[size_t(y * s.w + s.w - 1 - x)]);
}

void flip_v(SegSample& s) {
    float* img = s.image.ptr();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < s.h / 2; ++y)
            for (int64_t x = 0; x < s.w; ++x)
                std::swap(img[(c * s.h + y) * s.w + x], img[(c * s.h + (s.h - 1 - y)) * s.w + x]);
    for (int64_t y = 0; y < s.h / 2; ++y)
        for (int64_t x = 0; x < s.w; ++x)
            std::swap(s.mask[size_t(y * s.w + x)], s.mask[size_t((s.h - 1 - y) * s.w + x)]);
}

void rot90(SegSample& s, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return;
    if (s.h != s.w) throw ShapeError("rot90: square samples only");
    const int64_t n = s.h;
    for (int r = 0; r < k; ++r) {
        Tensor<float> rimg = Tensor<float>::zeros({3, n, n});
        std::vector<int32_t> rmask(size_t(n * n));
        const float* src = s.image.ptr();
        float* dst = rimg.ptr();
        // 90-degree counter-clockwise: out[y][x] = in[x][n-1-y]
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x)
                    dst[(c * n + y) * n + x] = src[(c * n + x) * n + (n - 1 - y)];
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x)
                rmask[size_t(y * n + x)] = s.mask[size_t(x * n + n - 1 - y)];
        s.image = rimg;
        s.mask = std::move(rmask);
    }
}

void augment(SegSample& s, Rng& rng) {
    if (rng.bernoulli(0.5)) flip_h(s);
    if (rng.bernoulli(0.5)) flip_v(s);
    if (rng.bernoulli(0.5)) rot90(s, int(rng.uniform_int(1, 3)));
}

std::vector<SegSample> load_dataset_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    std::ifstream idx(root / "index.txt");
    if (!idx) throw IoError("cannot open dataset index " + (root / "index.txt").string());
    std::vector<SegSample> out;
    std::string id;
    while (std::getline(idx, id)) {
        if (id.empty()) continue;
        SegSample s;
        s.id = id;
        s.image = raster::read_image((root / (id + ".ppm")).string());
        s.mask = raster::read_mask_p2((root / (id + ".pgm")).string(), s.h, s.w);
        if (s.image.dim(1) != s.h || s.image.dim(2) != s.w)
            throw IoError("image/mask extent mismatch for sample " + id);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("dataset " + dir + " lists no samples");
    return out;
}

}  // namespace csunet
