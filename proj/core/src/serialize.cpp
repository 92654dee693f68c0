#include "csunet/serialize.hpp"

#include <fstream>

namespace csunet {

namespace serialize {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'T', 'C'};

template <typename U>
void put(std::ostream& os, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::string& path) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw IoError(path + ": truncated container");
    return v;
}

}  // namespace

void write_container(const std::string& path, const std::vector<Entry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write(kMagic, 4);
    put<uint32_t>(os, kVersion);
    put<uint32_t>(os, uint32_t(entries.size()));
    uint64_t offset = 0;
    for (const Entry& e : entries) {
        put<uint32_t>(os, uint32_t(e.name.size()));
        os.write(e.name.data(), std::streamsize(e.name.size()));
        put<uint32_t>(os, uint32_t(e.dtype));
        put<uint32_t>(os, uint32_t(e.shape.size()));
        for (int64_t d : e.shape) put<int64_t>(os, d);
        put<uint64_t>(os, offset);
        put<uint64_t>(os, uint64_t(e.bytes.size()));
        offset += e.bytes.size();
    }
    for (const Entry& e : entries)
        os.write(reinterpret_cast<const char*>(e.bytes.data()), std::streamsize(e.bytes.size()));
    if (!os) throw IoError("short write to " + path);
}

std::vector<Entry> read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError(path + ": not a tensor container");
    const uint32_t version = get<uint32_t>(is, path);
    if (version != kVersion)
        throw IoError(path + ": container version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kVersion) + ")");
    const uint32_t count = get<uint32_t>(is, path);
    std::vector<Entry> entries(count);
    std::vector<std::pair<uint64_t, uint64_t>> spans(count);
    for (uint32_t i = 0; i < count; ++i) {
        Entry& e = entries[i];
        const uint32_t nlen = get<uint32_t>(is, path);
        e.name.resize(nlen);
        is.read(e.name.data(), nlen);
        const uint32_t dt = get<uint32_t>(is, path);
        if (dt < 1 || dt > 4) throw IoError(path + ": bad dtype code");
        e.dtype = Dtype(dt);
        const uint32_t ndim = get<uint32_t>(is, path);
        e.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) e.shape[d] = get<int64_t>(is, path);
        spans[i].first = get<uint64_t>(is, path);
        spans[i].second = get<uint64_t>(is, path);
        if (!is) throw IoError(path + ": truncated manifest");
    }
    const std::streampos payload_base = is.tellg();
    for (uint32_t i = 0; i < count; ++i) {
        entries[i].bytes.resize(spans[i].second);
        is.seekg(payload_base + std::streamoff(spans[i].first));
        is.read(reinterpret_cast<char*>(entries[i].bytes.data()),
                std::streamsize(spans[i].second));
        if (!is) throw IoError(path + ": truncated payload for " + entries[i].name);
    }
    return entries;
}

}  // namespace serialize

void Checkpoint::save(const std::string& path) const {
    using namespace serialize;
    std::vector<Entry> es;
    es.push_back(string_entry("__config__", config_text));
    es.push_back(int_entry("__epoch__", epoch));
    es.push_back(int_entry("__opt_step__", opt_step));
    es.push_back(string_entry("__rng__", rng_state));
    for (const auto& [k, v] : params) es.push_back(tensor_entry("param." + k, v));
    for (const auto& [k, v] : opt_m) es.push_back(tensor_entry("adam_m." + k, v));
    for (const auto& [k, v] : opt_v) es.push_back(tensor_entry("adam_v." + k, v));
    write_container(path, es);
}

Checkpoint Checkpoint::load(const std::string& path) {
    using namespace serialize;
    Checkpoint ck;
    for (const Entry& e : read_container(path)) {
        if (e.name == "__config__") {
            ck.config_text.assign(e.bytes.begin(), e.bytes.end());
        } else if (e.name == "__epoch__") {
            std::memcpy(&ck.epoch, e.bytes.data(), sizeof(int64_t));
        } else if (e.name == "__opt_step__") {
            std::memcpy(&ck.opt_step, e.bytes.data(), sizeof(int64_t));
        } else if (e.name == "__rng__") {
            ck.rng_state.assign(e.bytes.begin(), e.bytes.end());
        } else if (e.name.rfind("param.", 0) == 0) {
            ck.params.emplace(e.name.substr(6), entry_tensor<float>(e));
        } else if (e.name.rfind("adam_m.", 0) == 0) {
            ck.opt_m.emplace(e.name.substr(7), entry_tensor<float>(e));
        } else if (e.name.rfind("adam_v.", 0) == 0) {
            ck.opt_v.emplace(e.name.substr(7), entry_tensor<float>(e));
        } else {
            throw IoError(path + ": unrecognized entry " + e.name);
        }
    }
    return ck;
}

}  // namespace csunet
