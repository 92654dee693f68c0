#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>

#include "csunet/common.hpp"

namespace csunet {

// Deterministic RNG. Gaussian samples are drawn via Box-Muller from the raw
// engine so the stream does not depend on the standard library's
// normal_distribution implementation.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t raw() { return eng_(); }

    double uniform() {  // [0,1)
        return double(eng_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + int64_t(uniform() * double(hi - lo + 1));
    }
    bool bernoulli(double p) { return uniform() < p; }

    double normal(double mean = 0.0, double std = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + std * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return mean + std * r * std::cos(2.0 * M_PI * u2);
    }

    // Truncated at +-2 std, Swin-style initializer.
    double trunc_normal(double std) {
        for (;;) {
            double v = normal(0.0, std);
            if (std::abs(v) <= 2.0 * std) return v;
        }
    }

    template <typename It>
    void shuffle(It first, It last) {
        const int64_t n = last - first;
        for (int64_t i = n - 1; i > 0; --i) std::swap(first[i], first[uniform_int(0, i)]);
    }

    std::string state() const {
        std::ostringstream os;
        os.precision(17);
        os << eng_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << spare_;
        return os.str();
    }
    void restore(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        is >> eng_ >> hs >> spare_;
        if (!is) throw IoError("bad RNG state string");
        have_spare_ = hs != 0;
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace csunet
