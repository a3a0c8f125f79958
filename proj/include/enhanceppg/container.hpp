#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "data.hpp"

namespace enhanceppg {

// Window container layout:
//   char[8]  magic "EPPGWIN1"
//   u32      format version
//   u32      header length, then that many bytes of JSON
//   u32[N]   subject index into header.subjects
//   u8[N]    label present flag
//   f32[N]   label (BPM, 0 when absent)
//   f32[N * 4 * 256] window samples, channel-major
inline constexpr std::string_view kContainerMagic = "EPPGWIN1";
inline constexpr std::uint32_t kContainerVersion = 1;

inline nlohmann::json stats_to_json(const NormStats& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"provenance", to_string(s.provenance)}};
}

inline NormStats stats_from_json(const nlohmann::json& j) {
    NormStats s;
    s.mean = j.at("mean").get<std::array<double, kChannels>>();
    s.std = j.at("std").get<std::array<double, kChannels>>();
    s.provenance = parse_provenance(j.at("provenance").get<std::string>());
    return s;
}

inline std::vector<char> serialize_container(const WindowedDataset& ds) {
    const auto subjects = ds.subjects();
    std::map<std::string, std::uint32_t> index;
    for (std::uint32_t i = 0; i < subjects.size(); ++i) index[subjects[i]] = i;

    nlohmann::json header = {
        {"channels", kChannelNames},
        {"sample_rate_hz", kSampleRate},
        {"window_length", kWindowLength},
        {"count", ds.size()},
        {"normalized", ds.normalized},
        {"subjects", subjects},
        {"stats", ds.stats ? stats_to_json(*ds.stats) : nlohmann::json(nullptr)},
    };
    const std::string text = header.dump();

    io::ByteWriter w;
    w.put_bytes(kContainerMagic);
    w.put(kContainerVersion);
    w.put(static_cast<std::uint32_t>(text.size()));
    w.put_bytes(text);
    for (const auto& win : ds.windows) w.put(index.at(win.subject_id));
    for (const auto& win : ds.windows) w.put(static_cast<std::uint8_t>(win.label.has_value()));
    for (const auto& win : ds.windows) w.put(win.label.value_or(0.0f));
    for (const auto& win : ds.windows) w.put_span(std::span<const float>(win.data));
    return w.bytes();
}

inline WindowedDataset deserialize_container(std::span<const char> bytes,
                                             const std::string& what = "container") {
    io::ByteReader r(bytes, what);
    if (bytes.size() < kContainerMagic.size() ||
        r.get_string(kContainerMagic.size()) != kContainerMagic)
        throw FormatError(what + ": not a window container (bad magic header)");
    const auto version = r.get<std::uint32_t>();
    if (version != kContainerVersion)
        throw FormatError(what + ": unsupported container version " + std::to_string(version));
    const auto header_len = r.get<std::uint32_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_string(header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(what + ": corrupt header: " + e.what());
    }
    if (header.at("window_length").get<std::size_t>() != kWindowLength ||
        header.at("channels").get<std::vector<std::string>>().size() != kChannels)
        throw FormatError(what + ": unexpected window geometry");

    const auto n = header.at("count").get<std::size_t>();
    const auto subjects = header.at("subjects").get<std::vector<std::string>>();
    const std::size_t need = n * (4 + 1 + 4 + 4 * kWindowSize);
    if (r.remaining() != need)
        throw FormatError(what + ": truncated file (expected " + std::to_string(need) +
                          " payload bytes, found " + std::to_string(r.remaining()) + ")");

    WindowedDataset ds;
    ds.normalized = header.at("normalized").get<bool>();
    if (!header.at("stats").is_null()) ds.stats = stats_from_json(header.at("stats"));
    ds.windows.resize(n);
    for (auto& win : ds.windows) {
        const auto idx = r.get<std::uint32_t>();
        if (idx >= subjects.size()) throw FormatError(what + ": subject index out of range");
        win.subject_id = subjects[idx];
    }
    std::vector<std::uint8_t> has_label(n);
    for (auto& h : has_label) h = r.get<std::uint8_t>();
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = r.get<float>();
        if (has_label[i]) ds.windows[i].label = label;
    }
    for (auto& win : ds.windows) r.get_into(std::span<float>(win.data));
    if (ds.normalized && !ds.stats) throw FormatError(what + ": normalized without stats");
    return ds;
}

inline void export_container(const WindowedDataset& ds, const std::filesystem::path& path) {
    io::write_file_atomic(path, serialize_container(ds));
}

inline WindowedDataset import_container(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return deserialize_container(bytes, path.string());
}

} // namespace enhanceppg
