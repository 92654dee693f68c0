#pragma once

#include <string>
#include <vector>

#include "csunet/rng.hpp"
#include "csunet/tensor.hpp"

namespace csunet {

// One 2D slice: 3-channel image in [0,1] plus an integer class mask.
struct SegSample {
    Tensor<float> image;         // [3,H,W]
    std::vector<int32_t> mask;   // row-major [H*W], values in [0, num_classes)
    int64_t h = 0, w = 0;
    std::string id;
};

namespace raster {

// Binary pixmap/graymap readers. P6 -> [3,H,W], P5 -> channel replicated to
// [3,H,W]; 8-bit samples scaled to [0,1].
Tensor<float> read_image(const std::string& path);
void write_image_p6(const std::string& path, const Tensor<float>& img);

// ASCII graymap masks (class ids as pixel values).
std::vector<int32_t> read_mask_p2(const std::string& path, int64_t& h, int64_t& w);
void write_mask_p2(const std::string& path, const std::vector<int32_t>& mask, int64_t h,
                   int64_t w, int64_t maxval);

}  // namespace raster

// Deterministic synthetic segmentation corpus: per-class "organs" (ellipses,
// rectangles, annuli) of characteristic intensity over a textured background,
// later classes occluding earlier ones where they overlap.
std::vector<SegSample> synth_dataset(uint64_t seed, int64_t n_samples, int64_t size,
                                     int64_t num_classes);

// In-place horizontal/vertical flip and k*90-degree rotation of a square sample.
void flip_h(SegSample& s);
void flip_v(SegSample& s);
void rot90(SegSample& s, int k);

// Training-time augmentation: each of {hflip, vflip, rot90 in {1,2,3}} applied
// with probability 1/2, draws taken from `rng` in that order.
void augment(SegSample& s, Rng& rng);

// Loads `<dir>/<id>.ppm` + `<dir>/<id>.pgm` pairs for every id listed in
// `<dir>/index.txt` (one id per line).
std::vector<SegSample> load_dataset_dir(const std::string& dir);

}  // namespace csunet
