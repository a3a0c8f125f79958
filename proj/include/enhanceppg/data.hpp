#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace enhanceppg {

inline constexpr std::size_t kChannels = 4;        // PPG, ACC_x, ACC_y, ACC_z
inline constexpr std::size_t kWindowLength = 256;  // 8 s at 32 Hz
inline constexpr std::size_t kWindowSize = kChannels * kWindowLength;
inline constexpr double kSampleRate = 32.0;
inline constexpr double kWindowSeconds = 8.0;
inline constexpr double kShiftSeconds = 2.0;

inline constexpr std::array<std::string_view, kChannels> kChannelNames = {
    "ppg", "acc_x", "acc_y", "acc_z"};

enum class Source { Dalia, Wesad, Unlabeled, Synthetic };

inline std::string_view to_string(Source s) {
    switch (s) {
    case Source::Dalia: return "dalia";
    case Source::Wesad: return "wesad";
    case Source::Unlabeled: return "unlabeled";
    case Source::Synthetic: return "synthetic";
    }
    return "unknown";
}

inline Source parse_source(std::string_view s) {
    if (s == "dalia") return Source::Dalia;
    if (s == "wesad") return Source::Wesad;
    if (s == "unlabeled") return Source::Unlabeled;
    if (s == "synthetic") return Source::Synthetic;
    throw ArgumentError("unknown source kind '" + std::string(s) + "'");
}

struct Stream {
    std::vector<float> samples;
    double rate_hz = 0.0;
};

struct SubjectRecording {
    std::string subject_id;
    Stream ppg;
    Stream acc_x, acc_y, acc_z;
    std::optional<std::vector<float>> hr_labels;
    Source source = Source::Unlabeled;
};

/// Checks the structural invariants of a recording; throws LoadError.
inline void validate(const SubjectRecording& rec) {
    if (rec.ppg.samples.empty()) throw LoadError("missing channel ppg");
    const Stream* acc[] = {&rec.acc_x, &rec.acc_y, &rec.acc_z};
    for (std::size_t i = 0; i < 3; ++i)
        if (acc[i]->samples.empty())
            throw LoadError("missing channel " + std::string(kChannelNames[i + 1]));
    if (rec.ppg.rate_hz <= 0.0 || rec.acc_x.rate_hz <= 0.0)
        throw LoadError("non-positive sample rate in subject " + rec.subject_id);
    for (const Stream* s : {&rec.acc_y, &rec.acc_z})
        if (s->samples.size() != rec.acc_x.samples.size() || s->rate_hz != rec.acc_x.rate_hz)
            throw LoadError("accelerometer axes differ in length or rate in subject " +
                            rec.subject_id);
    if (rec.hr_labels) {
        for (float v : *rec.hr_labels)
            if (!std::isfinite(v) || v <= 20.0f || v >= 250.0f)
                throw LoadError("heart-rate label " + std::to_string(v) +
                                " outside (20, 250) BPM in subject " + rec.subject_id);
    }
}

struct SignalWindow {
    std::array<float, kWindowSize> data{};  // channel-major: data[c * 256 + t]
    std::string subject_id;
    std::optional<float> label;

    std::span<float, kWindowLength> channel(std::size_t c) {
        return std::span<float, kWindowLength>(data.data() + c * kWindowLength, kWindowLength);
    }
    std::span<const float, kWindowLength> channel(std::size_t c) const {
        return std::span<const float, kWindowLength>(data.data() + c * kWindowLength,
                                                     kWindowLength);
    }
};

enum class Provenance { PretrainCorpus, TrainSplit };

inline std::string_view to_string(Provenance p) {
    return p == Provenance::PretrainCorpus ? "pretrain_corpus" : "train_split";
}

inline Provenance parse_provenance(std::string_view s) {
    if (s == "pretrain_corpus") return Provenance::PretrainCorpus;
    if (s == "train_split") return Provenance::TrainSplit;
    throw FormatError("unknown normalization provenance '" + std::string(s) + "'");
}

struct NormStats {
    std::array<double, kChannels> mean{};
    std::array<double, kChannels> std{1.0, 1.0, 1.0, 1.0};
    Provenance provenance = Provenance::TrainSplit;

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct WindowedDataset {
    std::vector<SignalWindow> windows;
    std::optional<NormStats> stats;
    bool normalized = false;

    std::size_t size() const { return windows.size(); }
    bool empty() const { return windows.empty(); }

    /// Distinct subject ids in order of first appearance.
    std::vector<std::string> subjects() const {
        std::vector<std::string> out;
        for (const auto& w : windows)
            if (std::find(out.begin(), out.end(), w.subject_id) == out.end())
                out.push_back(w.subject_id);
        return out;
    }

    bool all_labeled() const {
        return std::all_of(windows.begin(), windows.end(),
                           [](const SignalWindow& w) { return w.label.has_value(); });
    }
};

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

// Windowed-sinc low-pass, Hamming window, unit DC gain.
inline std::vector<double> lowpass_taps(double cutoff_ratio, std::size_t half_width) {
    std::vector<double> taps(2 * half_width + 1);
    const double n0 = static_cast<double>(half_width);
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const double n = static_cast<double>(i) - n0;
        const double sinc = n == 0.0 ? 2.0 * cutoff_ratio
                                     : std::sin(2.0 * std::numbers::pi * cutoff_ratio * n) /
                                           (std::numbers::pi * n);
        const double hamming =
            0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(taps.size() - 1));
        taps[i] = sinc * hamming;
    }
    return taps;
}

} // namespace detail

/// Sample-rate conversion: anti-alias FIR when decimating, then linear
/// interpolation. Output length is round(len * fs_out / fs_in). The FIR is
/// renormalized at the edges so constant signals come back unchanged.
inline std::vector<float> resample(std::span<const float> signal, double fs_in, double fs_out) {
    if (!(fs_in > 0.0) || !(fs_out > 0.0))
        throw ArgumentError("resample: sample rates must be positive");
    const std::size_t n = signal.size();
    const auto n_out =
        static_cast<std::size_t>(std::llround(static_cast<double>(n) * fs_out / fs_in));
    if (n == 0 || n_out == 0) return {};
    if (fs_in == fs_out) return {signal.begin(), signal.end()};

    std::vector<double> src(signal.begin(), signal.end());
    if (fs_out < fs_in) {
        const double ratio = fs_in / fs_out;
        const auto half = static_cast<std::size_t>(std::ceil(8.0 * ratio));
        const auto taps = detail::lowpass_taps(0.45 / ratio, half);
        std::vector<double> filtered(n);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0, weight = 0.0;
            for (std::size_t j = 0; j < taps.size(); ++j) {
                const auto k = static_cast<std::ptrdiff_t>(i + j) - static_cast<std::ptrdiff_t>(half);
                if (k < 0 || k >= static_cast<std::ptrdiff_t>(n)) continue;
                acc += taps[j] * src[static_cast<std::size_t>(k)];
                weight += taps[j];
            }
            filtered[i] = acc / weight;
        }
        src = std::move(filtered);
    }

    std::vector<float> out(n_out);
    const double step = fs_in / fs_out;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = std::min(static_cast<double>(i) * step, static_cast<double>(n - 1));
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        out[i] = static_cast<float>(frac == 0.0 ? src[lo] : src[lo] + frac * (src[hi] - src[lo]));
    }
    return out;
}

/// Brings every stream of the recording to `fs` Hz.
inline SubjectRecording resample_recording(const SubjectRecording& rec, double fs = kSampleRate) {
    SubjectRecording out = rec;
    for (Stream* s : {&out.ppg, &out.acc_x, &out.acc_y, &out.acc_z}) {
        s->samples = resample(s->samples, s->rate_hz, fs);
        s->rate_hz = fs;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation and normalization

/// floor((n - win) / shift) + 1 for n >= win, else 0 (all in samples).
inline std::size_t window_count(std::size_t n_samples, std::size_t win, std::size_t shift) {
    return n_samples < win ? 0 : (n_samples - win) / shift + 1;
}

inline WindowedDataset segment_windows(const SubjectRecording& rec,
                                       double win_s = kWindowSeconds,
                                       double shift_s = kShiftSeconds,
                                       double fs = kSampleRate) {
    for (const Stream* s : {&rec.ppg, &rec.acc_x, &rec.acc_y, &rec.acc_z})
        if (s->rate_hz != fs)
            throw ArgumentError("segment_windows: streams of subject " + rec.subject_id +
                                " are not at " + std::to_string(fs) + " Hz; resample first");
    const auto win = static_cast<std::size_t>(std::llround(win_s * fs));
    const auto shift = static_cast<std::size_t>(std::llround(shift_s * fs));
    if (win != kWindowLength)
        throw ArgumentError("segment_windows: window must span 256 samples");
    if (shift == 0) throw ArgumentError("segment_windows: shift must be positive");

    const std::size_t n = std::min({rec.ppg.samples.size(), rec.acc_x.samples.size(),
                                    rec.acc_y.samples.size(), rec.acc_z.samples.size()});
    std::size_t count = window_count(n, win, shift);
    if (rec.hr_labels) count = std::min(count, rec.hr_labels->size());

    WindowedDataset ds;
    if (count == 0) {
        warn("subject " + rec.subject_id + " is shorter than one window; no windows produced");
        return ds;
    }
    ds.windows.resize(count);
    const std::vector<float>* streams[] = {&rec.ppg.samples, &rec.acc_x.samples,
                                           &rec.acc_y.samples, &rec.acc_z.samples};
    for (std::size_t w = 0; w < count; ++w) {
        auto& out = ds.windows[w];
        out.subject_id = rec.subject_id;
        for (std::size_t c = 0; c < kChannels; ++c)
            std::copy_n(streams[c]->begin() + static_cast<std::ptrdiff_t>(w * shift), win,
                        out.data.begin() + static_cast<std::ptrdiff_t>(c * kWindowLength));
        if (rec.hr_labels) out.label = (*rec.hr_labels)[w];
    }
    return ds;
}

/// Per-channel population mean/std over every sample of every window.
/// A flat channel gets std = 1 and a warning.
inline NormStats compute_norm_stats(std::span<const WindowedDataset> corpora,
                                    Provenance provenance) {
    std::array<double, kChannels> sum{}, sq{};
    std::size_t count = 0;
    for (const auto& ds : corpora) {
        for (const auto& w : ds.windows)
            for (std::size_t c = 0; c < kChannels; ++c)
                for (float v : w.channel(c)) sum[c] += v;
        count += ds.size();
    }
    if (count == 0) throw ArgumentError("compute_norm_stats: corpus has no windows");
    const double n = static_cast<double>(count * kWindowLength);

    NormStats stats;
    stats.provenance = provenance;
    for (std::size_t c = 0; c < kChannels; ++c) stats.mean[c] = sum[c] / n;
    for (const auto& ds : corpora)
        for (const auto& w : ds.windows)
            for (std::size_t c = 0; c < kChannels; ++c)
                for (float v : w.channel(c)) {
                    const double d = v - stats.mean[c];
                    sq[c] += d * d;
                }
    for (std::size_t c = 0; c < kChannels; ++c) {
        const double sd = std::sqrt(sq[c] / n);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(stats.mean[c])))) {
            warn("channel " + std::string(kChannelNames[c]) +
                 " has zero variance; using std = 1");
            stats.std[c] = 1.0;
        } else {
            stats.std[c] = sd;
        }
    }
    return stats;
}

inline NormStats compute_norm_stats(const WindowedDataset& ds, Provenance provenance) {
    return compute_norm_stats(std::span<const WindowedDataset>(&ds, 1), provenance);
}

inline WindowedDataset apply_zscore(WindowedDataset ds, const NormStats& stats) {
    if (ds.normalized) throw StateError("apply_zscore: dataset already normalized");
    for (auto& w : ds.windows)
        for (std::size_t c = 0; c < kChannels; ++c)
            for (float& v : w.channel(c))
                v = static_cast<float>((v - stats.mean[c]) / stats.std[c]);
    ds.stats = stats;
    ds.normalized = true;
    return ds;
}

inline WindowedDataset denormalize(WindowedDataset ds) {
    if (!ds.normalized || !ds.stats) throw StateError("denormalize: dataset is not normalized");
    const NormStats& stats = *ds.stats;
    for (auto& w : ds.windows)
        for (std::size_t c = 0; c < kChannels; ++c)
            for (float& v : w.channel(c))
                v = static_cast<float>(v * stats.std[c] + stats.mean[c]);
    ds.normalized = false;
    ds.stats.reset();
    return ds;
}

/// Concatenates datasets that share normalization state.
inline WindowedDataset concat(std::span<const WindowedDataset> parts) {
    WindowedDataset out;
    bool first = true;
    for (const auto& p : parts) {
        if (first) {
            out.normalized = p.normalized;
            out.stats = p.stats;
            first = false;
        } else if (p.normalized != out.normalized || p.stats != out.stats) {
            throw StateError("concat: datasets carry different normalization");
        }
        out.windows.insert(out.windows.end(), p.windows.begin(), p.windows.end());
    }
    return out;
}

} // namespace enhanceppg
