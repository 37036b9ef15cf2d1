#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "trml/matrix.hpp"

namespace trml {

/// Counter-mixing generator (splitmix64 core). Identical seed and call
/// sequence give identical outputs; no libc distribution state involved.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        Rng r(a ^ (0x632be59bd9b4e019ULL + (b << 1)));
        r.next_u64();
        return r.next_u64();
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    /// Standard normal via Box-Muller with a cached spare.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double gaussian(double mean, double std) { return mean + std * gaussian(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// std = 0 yields the constant matrix of `mean`.
inline Matrix seeded_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double mean,
                              double std) {
    if (std < 0.0) throw config_error("seeded_gaussian: std must be >= 0");
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = mean + std * rng.gaussian();
    return m;
}

}  // namespace trml
