#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "csunet/tensor.hpp"

namespace csunet {

namespace serialize {

// Raw-tensor container: "CSTC" magic, u32 version, u32 entry count, manifest
// (name, dtype, extents, offset/length into the payload), then the packed
// little-endian payload. Versions other than kVersion are rejected on load.
inline constexpr uint32_t kVersion = 1;

enum class Dtype : uint32_t { F32 = 1, F64 = 2, I64 = 3, U8 = 4 };

struct Entry {
    std::string name;
    Dtype dtype = Dtype::U8;
    Shape shape;
    std::vector<unsigned char> bytes;
};

void write_container(const std::string& path, const std::vector<Entry>& entries);
std::vector<Entry> read_container(const std::string& path);

template <typename T>
Entry tensor_entry(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    Entry e;
    e.name = name;
    e.dtype = std::is_same_v<T, float> ? Dtype::F32 : Dtype::F64;
    e.shape = t.shape();
    e.bytes.resize(size_t(t.size()) * sizeof(T));
    std::memcpy(e.bytes.data(), t.ptr(), e.bytes.size());
    return e;
}

template <typename T>
Tensor<T> entry_tensor(const Entry& e) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    const Dtype want = std::is_same_v<T, float> ? Dtype::F32 : Dtype::F64;
    if (e.dtype != want) throw IoError("entry " + e.name + ": dtype mismatch");
    if (e.bytes.size() != size_t(numel(e.shape)) * sizeof(T))
        throw IoError("entry " + e.name + ": payload length mismatch");
    std::vector<T> v(size_t(numel(e.shape)));
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return Tensor<T>::from(std::move(v), e.shape);
}

inline Entry string_entry(const std::string& name, const std::string& text) {
    Entry e;
    e.name = name;
    e.dtype = Dtype::U8;
    e.shape = {int64_t(text.size())};
    e.bytes.assign(text.begin(), text.end());
    return e;
}

inline Entry int_entry(const std::string& name, int64_t value) {
    Entry e;
    e.name = name;
    e.dtype = Dtype::I64;
    e.shape = {1};
    e.bytes.resize(sizeof(int64_t));
    std::memcpy(e.bytes.data(), &value, sizeof(int64_t));
    return e;
}

}  // namespace serialize

// Full training snapshot: resolved config text, parameters, optimizer moments,
// epoch/step counters and RNG state. Save/load round-trips bitwise.
struct Checkpoint {
    std::string config_text;
    int64_t epoch = 0;      // epochs completed
    int64_t opt_step = 0;   // optimizer steps taken
    std::string rng_state;
    std::map<std::string, Tensor<float>> params;
    std::map<std::string, Tensor<float>> opt_m, opt_v;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace csunet
