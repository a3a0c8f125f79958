#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "pickle.hpp"

namespace enhanceppg {

// Empatica E4 wrist rates, as distributed in the DaLiA/WESAD pickles (which
// carry samples but not rates).
inline constexpr double kE4BvpRate = 64.0;
inline constexpr double kE4AccRate = 32.0;

namespace detail {

inline pickle::ObjectPtr require(const pickle::ObjectPtr& obj, const std::string& key,
                                 const std::string& field_name) {
    auto v = pickle::find(obj, key);
    if (!v) throw LoadError("missing field " + field_name);
    return v;
}

inline const pickle::NdArray& require_array(const pickle::ObjectPtr& obj, const std::string& what) {
    const auto* arr = pickle::as_array(obj);
    if (!arr) throw LoadError("field " + what + " is not a numeric array");
    return *arr;
}

inline std::vector<float> column(const pickle::NdArray& arr, std::size_t col) {
    const std::size_t rows = arr.shape.empty() ? 0 : arr.shape[0];
    const std::size_t cols = arr.shape.size() > 1 ? arr.shape[1] : 1;
    std::vector<float> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = static_cast<float>(arr.values[r * cols + col]);
    return out;
}

inline std::size_t columns(const pickle::NdArray& arr) {
    return arr.shape.size() > 1 ? arr.shape[1] : (arr.shape.empty() ? 0 : 1);
}

inline SubjectRecording load_e4_pickle(const std::filesystem::path& file, Source source) {
    const auto root = pickle::load_file(file);
    SubjectRecording rec;
    rec.source = source;
    rec.subject_id = file.stem().string();
    if (auto subj = pickle::find(root, "subject")) {
        if (const auto* s = std::get_if<std::string>(&subj->value)) rec.subject_id = *s;
        else if (const auto* b = std::get_if<pickle::Bytes>(&subj->value)) rec.subject_id = b->data;
    }
    const auto signal = require(root, "signal", "signal");
    const auto wrist = require(signal, "wrist", "signal.wrist");

    const auto bvp_obj = pickle::find(wrist, "BVP");
    if (!bvp_obj) throw LoadError("missing channel ppg");
    const auto& bvp = require_array(bvp_obj, "signal.wrist.BVP");
    if (bvp.values.empty()) throw LoadError("missing channel ppg");
    rec.ppg = {column(bvp, 0), kE4BvpRate};

    const auto acc_obj = pickle::find(wrist, "ACC");
    if (!acc_obj) throw LoadError("missing channel acc_x");
    const auto& acc = require_array(acc_obj, "signal.wrist.ACC");
    const std::size_t ncols = columns(acc);
    Stream* axes[] = {&rec.acc_x, &rec.acc_y, &rec.acc_z};
    for (std::size_t i = 0; i < 3; ++i) {
        if (ncols <= i || acc.values.empty())
            throw LoadError("missing channel " + std::string(kChannelNames[i + 1]));
        *axes[i] = {column(acc, i), kE4AccRate};
    }

    if (source == Source::Dalia) {
        const auto& label = require_array(require(root, "label", "label"), "label");
        rec.hr_labels = column(label, 0);
    }
    validate(rec);
    return rec;
}

// Empatica E4 CSV export: row 1 = start timestamp(s), row 2 = rate(s), then samples.
inline std::vector<std::vector<float>> read_e4_csv(const std::filesystem::path& file,
                                                   std::size_t expected_cols, double& rate) {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot open " + file.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> parts;
        std::stringstream ss(line);
        for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
        return parts;
    };
    std::string line;
    if (!std::getline(in, line) || !std::getline(in, line))
        throw LoadError(file.string() + ": corrupt archive (missing E4 header rows)");
    const auto rate_parts = split(line);
    try {
        rate = std::stod(rate_parts.at(0));
    } catch (const std::exception&) {
        throw LoadError(file.string() + ": corrupt archive (bad sample-rate row)");
    }
    std::vector<std::vector<float>> cols(expected_cols);
    std::size_t row = 2;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto parts = split(line);
        if (parts.size() < expected_cols)
            throw LoadError(file.string() + ": corrupt archive (row " + std::to_string(row) +
                            " has " + std::to_string(parts.size()) + " columns)");
        for (std::size_t c = 0; c < expected_cols; ++c) {
            try {
                cols[c].push_back(std::stof(parts[c]));
            } catch (const std::exception&) {
                throw LoadError(file.string() + ": corrupt archive (row " + std::to_string(row) +
                                " is not numeric)");
            }
        }
    }
    return cols;
}

inline SubjectRecording load_e4_csv_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    SubjectRecording rec;
    rec.source = Source::Unlabeled;
    rec.subject_id = dir.filename().string();
    if (!fs::exists(dir / "BVP.csv")) throw LoadError("missing channel ppg");
    if (!fs::exists(dir / "ACC.csv")) throw LoadError("missing channel acc_x");
    double rate = 0.0;
    auto bvp = read_e4_csv(dir / "BVP.csv", 1, rate);
    rec.ppg = {std::move(bvp[0]), rate};
    double acc_rate = 0.0;
    std::vector<std::vector<float>> acc;
    try {
        acc = read_e4_csv(dir / "ACC.csv", 3, acc_rate);
    } catch (const LoadError&) {
        // Distinguish a short ACC file from a generally corrupt one.
        std::ifstream in(dir / "ACC.csv");
        std::string l1, l2, l3;
        std::getline(in, l1);
        std::getline(in, l2);
        if (std::getline(in, l3)) {
            const auto commas = std::count(l3.begin(), l3.end(), ',');
            if (commas < 2)
                throw LoadError("missing channel " +
                                std::string(kChannelNames[static_cast<std::size_t>(commas) + 2]));
        }
        throw;
    }
    rec.acc_x = {std::move(acc[0]), acc_rate};
    rec.acc_y = {std::move(acc[1]), acc_rate};
    rec.acc_z = {std::move(acc[2]), acc_rate};
    validate(rec);
    return rec;
}

} // namespace detail

/// Loads one subject archive in its native distributed form:
///   dalia / wesad: the per-subject pickle (S<n>.pkl), or a directory holding it;
///   unlabeled:     a directory with Empatica E4 BVP.csv and ACC.csv exports.
/// Streams keep their original rates. Only DaLiA carries HR labels.
inline SubjectRecording load_subject(const std::filesystem::path& path, Source source) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw LoadError("no such archive: " + path.string());
    switch (source) {
    case Source::Dalia:
    case Source::Wesad: {
        fs::path file = path;
        if (fs::is_directory(path)) {
            std::vector<fs::path> pkls;
            for (const auto& e : fs::directory_iterator(path))
                if (e.path().extension() == ".pkl") pkls.push_back(e.path());
            if (pkls.size() != 1)
                throw LoadError(path.string() + ": expected exactly one .pkl archive");
            file = pkls.front();
        }
        return detail::load_e4_pickle(file, source);
    }
    case Source::Unlabeled: return detail::load_e4_csv_dir(path);
    case Source::Synthetic: break;
    }
    throw LoadError("unknown source kind for " + path.string());
}

/// Per-subject archives below `root`, sorted by path.
inline std::vector<std::filesystem::path> discover_subjects(const std::filesystem::path& root,
                                                            Source source) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw LoadError("not a directory: " + root.string());
    std::vector<fs::path> out;
    if (source == Source::Unlabeled) {
        if (fs::exists(root / "BVP.csv")) out.push_back(root);
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_directory() && fs::exists(e.path() / "BVP.csv")) out.push_back(e.path());
    } else {
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().extension() == ".pkl") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Resample to `fs` and cut `win_s` windows every `shift_s` (8 s / 2 s at 32 Hz by default).
inline WindowedDataset ingest_subject(const SubjectRecording& raw, double win_s = kWindowSeconds,
                                      double shift_s = kShiftSeconds, double fs = kSampleRate) {
    return segment_windows(resample_recording(raw, fs), win_s, shift_s, fs);
}

} // namespace enhanceppg
