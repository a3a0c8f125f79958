#pragma once

// Shared test oracles: brute-force DFT, tone windows, scratch directories.

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <enhanceppg/data.hpp>
#include <enhanceppg/model.hpp>

namespace testsupport {

using namespace enhanceppg;

// |X[k]| for k = 0..N/2 by the O(N^2) definition; no FFT library involved.
inline std::vector<double> dft_magnitude(std::span<const float> x) {
    const std::size_t n = x.size();
    std::vector<double> mag(n / 2 + 1);
    for (std::size_t k = 0; k < mag.size(); ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t t = 0; t < n; ++t)
            acc += static_cast<double>(x[t]) *
                   std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
        mag[k] = std::abs(acc);
    }
    return mag;
}

// Strongest non-DC bin.
inline std::size_t peak_bin(std::span<const float> x) {
    const auto mag = dft_magnitude(x);
    std::size_t best = 1;
    for (std::size_t k = 2; k < mag.size(); ++k)
        if (mag[k] > mag[best]) best = k;
    return best;
}

// Bin width of a 256-sample window at 32 Hz.
inline constexpr double kBinHz = kSampleRate / static_cast<double>(kWindowLength);

inline SignalWindow tone_window(double f_hz, double phase = 0.0, std::string subject = "T1") {
    SignalWindow w;
    w.subject_id = std::move(subject);
    for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t t = 0; t < kWindowLength; ++t)
            w.data[c * kWindowLength + t] = static_cast<float>(
                std::sin(2.0 * std::numbers::pi * f_hz * static_cast<double>(t) / kSampleRate + phase + 0.3 * c));
    return w;
}

inline ModelConfig tiny_config(Variant v = Variant::Estimator) {
    ModelConfig c;
    c.block_channels = {2, 3, 4};
    c.layers_per_block = 2;
    c.kernel_len = 5;
    c.attention_heads = 2;
    c.head_hidden = 3;
    c.input_length = 32;
    c.variant = v;
    return c;
}

inline ModelConfig small_config(Variant v = Variant::Estimator) {
    ModelConfig c;
    c.block_channels = {8, 12, 16};
    c.layers_per_block = 2;
    c.attention_heads = 2;
    c.head_hidden = 16;
    c.variant = v;
    return c;
}

template <class T>
Mat<T> random_input(Index rows, Index cols, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat<T> x(rows, cols);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(n(gen));
    return x;
}

// Moves every parameter off its initial value so that no ReLU input sits exactly on
// the kink (zero biases over zero activations would), which central differences cannot handle.
template <class T>
void jitter_params(nn::ParamStore<T>& ps, unsigned seed, double scale = 0.1) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (Index k = 0; k < ps[i].size(); ++k) ps[i].data()[k] += static_cast<T>(n(gen));
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("enhanceppg_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::filesystem::path fixture(const std::string& rel) {
    return std::filesystem::path(ENHANCEPPG_TEST_DATA) / rel;
}

} // namespace testsupport
