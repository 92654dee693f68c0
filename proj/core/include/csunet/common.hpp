#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace csunet {

// Error taxonomy; the CLI maps these onto its exit-code contract.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct VerifyError : Error {
    using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (int64_t i = int64_t(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// Debug assertion mode: when enabled, every op verifies its output is finite.
inline bool& nan_debug_mode() {
    static bool enabled = false;
    return enabled;
}

}  // namespace csunet
