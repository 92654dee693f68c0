#include <fstream>
#include <sstream>

#include "csunet/data.hpp"

namespace csunet::raster {

namespace {

// Netpbm header token reader: skips whitespace and '#' comment lines.
std::string next_token(std::istream& is, const std::string& path) {
    std::string tok;
    for (;;) {
        int c = is.get();
        if (c == EOF) throw IoError(path + ": truncated header");
        if (std::isspace(c)) continue;
        if (c == '#') {
            std::string line;
            std::getline(is, line);
            continue;
        }
        tok.push_back(char(c));
        while ((c = is.peek()) != EOF && !std::isspace(c)) tok.push_back(char(is.get()));
        return tok;
    }
}

int64_t int_token(std::istream& is, const std::string& path) {
    const std::string t = next_token(is, path);
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(t, &pos);
        if (pos != t.size() || v < 0) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw IoError(path + ": bad header token '" + t + "'");
    }
}

}  // namespace

Tensor<float> read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image " + path);
    const std::string magic = next_token(is, path);
    if (magic != "P5" && magic != "P6") throw IoError(path + ": expected P5/P6, got " + magic);
    const int64_t w = int_token(is, path), h = int_token(is, path), maxv = int_token(is, path);
    if (w < 1 || h < 1 || maxv < 1 || maxv > 255)
        throw IoError(path + ": unsupported raster geometry");
    is.get();  // single whitespace after maxval
    const int64_t ch = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> raw(size_t(w * h * ch));
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (is.gcount() != std::streamsize(raw.size())) throw IoError(path + ": truncated pixel data");

    Tensor<float> img = Tensor<float>::zeros({3, h, w});
    float* p = img.ptr();
    const float scale = 1.0f / float(maxv);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const unsigned char v = ch == 3 ? raw[size_t((y * w + x) * 3 + c)]
                                                : raw[size_t(y * w + x)];
                p[(c * h + y) * w + x] = float(v) * scale;
            }
    return img;
}

void write_image_p6(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("write_image_p6: expected [3,H,W]");
    const int64_t h = img.dim(1), w = img.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image " + path);
    os << "P6\n" << w << ' ' << h << "\n255\n";
    const float* p = img.ptr();
    std::vector<unsigned char> raw(size_t(w * h * 3));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const float v = std::min(1.0f, std::max(0.0f, p[(c * h + y) * w + x]));
                raw[size_t((y * w + x) * 3 + c)] = (unsigned char)std::lround(v * 255.0f);
            }
    os.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!os) throw IoError("short write to " + path);
}

std::vector<int32_t> read_mask_p2(const std::string& path, int64_t& h, int64_t& w) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open mask " + path);
    const std::string magic = next_token(is, path);
    if (magic != "P2") throw IoError(path + ": expected P2, got " + magic);
    w = int_token(is, path);
    h = int_token(is, path);
    const int64_t maxv = int_token(is, path);
    if (w < 1 || h < 1 || maxv < 1) throw IoError(path + ": unsupported mask geometry");
    std::vector<int32_t> mask(size_t(h * w));
    for (auto& v : mask) {
        const int64_t s = int_token(is, path);
        if (s > maxv) throw IoError(path + ": sample exceeds declared maxval");
        v = int32_t(s);
    }
    return mask;
}

void write_mask_p2(const std::string& path, const std::vector<int32_t>& mask, int64_t h,
                   int64_t w, int64_t maxval) {
    if (int64_t(mask.size()) != h * w) throw ShapeError("write_mask_p2: mask size mismatch");
    std::ofstream os(path);
    if (!os) throw IoError("cannot write mask " + path);
    os << "P2\n" << w << ' ' << h << '\n' << std::max<int64_t>(1, maxval) << '\n';
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (mask[size_t(y * w + x)] < 0) throw ShapeError("write_mask_p2: negative class id");
            os << mask[size_t(y * w + x)] << (x + 1 == w ? '\n' : ' ');
        }
    }
    if (!os) throw IoError("short write to " + path);
}

}  // namespace csunet::raster
