#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "random.hpp"

namespace enhanceppg {

struct Transform {
    enum class Kind { Divide, Multiply };
    Kind kind;
    double factor;  // d for Divide (integer >= 2), k for Multiply (> 1)

    static Transform divide(int d) { return {Kind::Divide, static_cast<double>(d)}; }
    static Transform multiply(double k) { return {Kind::Multiply, k}; }
    friend bool operator==(const Transform&, const Transform&) = default;
};

struct AugmentationSpec {
    std::vector<Transform> transforms;
    std::uint64_t rng_seed = 0;

    std::size_t expansion_factor() const { return 1 + transforms.size(); }
};

namespace detail {

// Linear interpolation of src at fractional index pos.
inline float lerp_at(std::span<const float> src, double pos) {
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= src.size()) return src.back();
    const double frac = pos - static_cast<double>(lo);
    return static_cast<float>(src[lo] + frac * (static_cast<double>(src[lo + 1]) - src[lo]));
}

// Maps src onto n samples spanning the same start and end points.
inline void stretch(std::span<const float> src, std::span<float> dst) {
    const double scale = dst.size() > 1 ? static_cast<double>(src.size() - 1) /
                                              static_cast<double>(dst.size() - 1)
                                        : 0.0;
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = lerp_at(src, static_cast<double>(i) * scale);
}

} // namespace detail

/// Divide_d: picks a random T/d section (same offset on every channel) and
/// stretches it back to T samples, dividing apparent frequencies by ~d.
inline SignalWindow divide(const SignalWindow& w, int d, CounterRng rng) {
    if (d < 2) throw ArgumentError("divide: factor must be an integer >= 2");
    const std::size_t section = kWindowLength / static_cast<std::size_t>(d);
    if (section < 2) throw ArgumentError("divide: section T/d shorter than 2 samples");
    const std::size_t offset = rng.uniform_index(kWindowLength - section + 1);
    SignalWindow out = w;
    for (std::size_t c = 0; c < kChannels; ++c)
        detail::stretch(w.channel(c).subspan(offset, section), out.channel(c));
    return out;
}

/// Length of the time-compressed segment produced by multiply(., k).
inline std::size_t compressed_length(double k) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(kWindowLength) / k));
}

/// Multiply_k: compresses the window to round(T/k) samples (raising apparent
/// frequencies by k) and tiles that segment periodically to refill T samples.
inline SignalWindow multiply(const SignalWindow& w, double k) {
    if (!(k > 1.0)) throw ArgumentError("multiply: factor must be > 1");
    const std::size_t n = compressed_length(k);
    if (n < 8) throw ArgumentError("multiply: compressed length round(T/k) below 8 samples");
    SignalWindow out = w;
    std::vector<float> segment(n);
    for (std::size_t c = 0; c < kChannels; ++c) {
        detail::stretch(w.channel(c), segment);
        auto dst = out.channel(c);
        for (std::size_t i = 0; i < kWindowLength; ++i) dst[i] = segment[i % n];
    }
    return out;
}

inline SignalWindow apply_transform(const SignalWindow& w, const Transform& t, CounterRng rng) {
    if (t.kind == Transform::Kind::Divide) return divide(w, static_cast<int>(std::lround(t.factor)), rng);
    return multiply(w, t.factor);
}

/// Originals first, then one block of transformed copies per transform, in spec order.
inline WindowedDataset expand_dataset(const WindowedDataset& ds, const AugmentationSpec& spec) {
    WindowedDataset out;
    out.stats = ds.stats;
    out.normalized = ds.normalized;
    out.windows.reserve(ds.size() * spec.expansion_factor());
    out.windows = ds.windows;
    for (std::size_t t = 0; t < spec.transforms.size(); ++t)
        for (std::size_t i = 0; i < ds.size(); ++i)
            out.windows.push_back(apply_transform(
                ds.windows[i], spec.transforms[t],
                CounterRng(spec.rng_seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t))));
    return out;
}

/// Multiply factors start, start+step, ..., end (inclusive, integer step count).
inline std::vector<double> multiply_range(double start, double end, double step) {
    if (!(step > 0.0) || end < start)
        throw ArgumentError("multiply range needs step > 0 and end >= start");
    const auto steps = static_cast<long>(std::floor((end - start) / step + 1e-9));
    std::vector<double> out;
    for (long i = 0; i <= steps; ++i) {
        // Round to 10 decimals so 1.2 + 3 * 0.1 reads back as 1.5.
        const double k = std::round((start + static_cast<double>(i) * step) * 1e10) / 1e10;
        out.push_back(k);
    }
    return out;
}

/// Parses "divide:2,multiply:1.2-2.0:0.1" (also "multiply:1.5") into transforms.
inline std::vector<Transform> parse_grid(const std::string& grid) {
    std::vector<Transform> out;
    std::stringstream ss(grid);
    for (std::string item; std::getline(ss, item, ',');) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ArgumentError("augmentation grid item '" + item + "' lacks ':'");
        const auto name = item.substr(0, colon);
        const auto rest = item.substr(colon + 1);
        try {
            if (name == "divide") {
                std::size_t used = 0;
                const int d = std::stoi(rest, &used);
                if (used != rest.size() || d < 2)
                    throw ArgumentError("divide factor must be an integer >= 2 in '" + item + "'");
                out.push_back(Transform::divide(d));
            } else if (name == "multiply") {
                const auto dash = rest.find('-');
                if (dash == std::string::npos) {
                    const double k = std::stod(rest);
                    if (!(k > 1.0)) throw ArgumentError("multiply factor must be > 1 in '" + item + "'");
                    out.push_back(Transform::multiply(k));
                } else {
                    const auto colon2 = rest.find(':', dash);
                    if (colon2 == std::string::npos)
                        throw ArgumentError("multiply range needs a step: '" + item + "'");
                    const double lo = std::stod(rest.substr(0, dash));
                    const double hi = std::stod(rest.substr(dash + 1, colon2 - dash - 1));
                    const double step = std::stod(rest.substr(colon2 + 1));
                    if (!(lo > 1.0)) throw ArgumentError("multiply factors must be > 1 in '" + item + "'");
                    for (double k : multiply_range(lo, hi, step)) out.push_back(Transform::multiply(k));
                }
            } else {
                throw ArgumentError("unknown augmentation '" + name + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ArgumentError("malformed augmentation grid item '" + item + "'");
        }
    }
    return out;
}

inline constexpr std::string_view kDefaultGrid = "divide:2,multiply:1.2-2.0:0.1";

inline AugmentationSpec default_augmentation(std::uint64_t seed = 0) {
    return {parse_grid(std::string(kDefaultGrid)), seed};
}

} // namespace enhanceppg
