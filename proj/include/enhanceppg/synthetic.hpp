#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "data.hpp"
#include "random.hpp"

namespace enhanceppg {

struct ToneCorpusOptions {
    std::size_t windows_per_subject = 64;
    double hr_min_bpm = 60.0;
    double hr_max_bpm = 150.0;
    double harmonic = 0.3;      // relative amplitude of the 2f component
    double noise = 0.05;        // white noise std on every channel
    double motion = 0.3;        // amplitude of the accelerometer motion tone
    bool labeled = true;
};

/// Windows carrying a pulse-like tone of frequency f on the PPG channel and
/// an unrelated motion tone on the accelerometer axes; label = 60 f BPM.
inline WindowedDataset synthetic_tone_windows(const std::string& subject, const ToneCorpusOptions& opt,
                                              std::uint64_t seed) {
    WindowedDataset ds;
    ds.windows.resize(opt.windows_per_subject);
    CounterRng subject_rng(seed, 0x5B1EC7);
    const double gain = subject_rng.uniform(0.7, 1.3);   // per-subject perfusion amplitude
    const double offset = subject_rng.uniform(-0.5, 0.5);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CounterRng rng(seed, i + 1);
        auto& w = ds.windows[i];
        w.subject_id = subject;
        const double bpm = rng.uniform(opt.hr_min_bpm, opt.hr_max_bpm);
        const double f = bpm / 60.0;
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        auto ppg = w.channel(0);
        for (std::size_t t = 0; t < kWindowLength; ++t) {
            const double s = static_cast<double>(t) / kSampleRate;
            ppg[t] = static_cast<float>(offset + gain * (std::sin(2.0 * std::numbers::pi * f * s + phase) +
                                                        opt.harmonic * std::sin(4.0 * std::numbers::pi * f * s + phase2)) +
                                        opt.noise * rng.normal());
        }
        for (std::size_t c = 1; c < kChannels; ++c) {
            const double fm = rng.uniform(0.2, 3.0);
            const double pm = rng.uniform(0.0, 2.0 * std::numbers::pi);
            auto acc = w.channel(c);
            for (std::size_t t = 0; t < kWindowLength; ++t) {
                const double s = static_cast<double>(t) / kSampleRate;
                acc[t] = static_cast<float>(opt.motion * std::sin(2.0 * std::numbers::pi * fm * s + pm) +
                                            opt.noise * rng.normal());
            }
        }
        if (opt.labeled) w.label = static_cast<float>(bpm);
    }
    return ds;
}

/// A continuous recording in E4 layout (PPG 64 Hz, ACC 32 Hz) whose heart rate
/// drifts smoothly; labels are the mean instantaneous HR of each 8 s / 2 s window.
inline SubjectRecording synthetic_recording(const std::string& subject, double duration_s,
                                            std::uint64_t seed, bool labeled = true) {
    SubjectRecording rec;
    rec.subject_id = subject;
    rec.source = Source::Synthetic;
    CounterRng rng(seed, 0xEC0);
    const double base = rng.uniform(65.0, 110.0), swing = rng.uniform(5.0, 25.0);
    const double period = rng.uniform(120.0, 600.0);
    auto hr_at = [&](double s) { return base + swing * std::sin(2.0 * std::numbers::pi * s / period); };

    const auto n_ppg = static_cast<std::size_t>(duration_s * 64.0);
    rec.ppg.rate_hz = 64.0;
    rec.ppg.samples.resize(n_ppg);
    double phase = 0.0;
    for (std::size_t i = 0; i < n_ppg; ++i) {
        const double s = static_cast<double>(i) / 64.0;
        phase += 2.0 * std::numbers::pi * hr_at(s) / 60.0 / 64.0;
        rec.ppg.samples[i] = static_cast<float>(std::sin(phase) + 0.3 * std::sin(2.0 * phase) + 0.05 * rng.normal());
    }
    const auto n_acc = static_cast<std::size_t>(duration_s * 32.0);
    for (Stream* s : {&rec.acc_x, &rec.acc_y, &rec.acc_z}) {
        s->rate_hz = 32.0;
        s->samples.resize(n_acc);
        const double fm = rng.uniform(0.3, 2.5);
        for (std::size_t i = 0; i < n_acc; ++i)
            s->samples[i] = static_cast<float>(0.4 * std::sin(2.0 * std::numbers::pi * fm * static_cast<double>(i) / 32.0) +
                                               0.05 * rng.normal());
    }
    if (labeled) {
        const std::size_t count = window_count(n_acc, kWindowLength, 64);
        std::vector<float> labels(count);
        for (std::size_t w = 0; w < count; ++w) {
            double sum = 0.0;
            for (int k = 0; k < 80; ++k) sum += hr_at(2.0 * static_cast<double>(w) + 8.0 * (k + 0.5) / 80.0);
            labels[w] = static_cast<float>(sum / 80.0);
        }
        rec.hr_labels = std::move(labels);
    }
    return rec;
}

} // namespace enhanceppg
