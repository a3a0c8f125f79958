#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace enhanceppg {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stage-specific seed: hash of the run seed and a stage name.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
    std::uint64_t h = splitmix64(seed);
    for (char c : stage) h = splitmix64(h ^ static_cast<unsigned char>(c));
    return h;
}

/// Counter-based generator: the stream is a pure function of (key, a, b),
/// so draws for window i never depend on how many windows came before it.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t a = 0, std::uint64_t b = 0)
        : base_(splitmix64(splitmix64(splitmix64(key) ^ a) ^ (b * 0xD1B54A32D192ED03ULL))) {}

    std::uint64_t next() { return splitmix64(base_ + counter_++ * 0x9E3779B97F4A7C15ULL); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform in [0, n).
    std::size_t uniform_index(std::size_t n) {
        return n == 0 ? 0 : static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by a CounterRng.
template <class Vec>
void shuffle(Vec& v, CounterRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        using std::swap;
        swap(v[i - 1], v[j]);
    }
}

} // namespace enhanceppg
