#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "binary_io.hpp"
#include "container.hpp"
#include "model.hpp"

namespace enhanceppg {

struct NamedArray {
    std::string name;
    Index rows = 0, cols = 0;
    std::vector<float> data;
};

struct CheckpointMeta {
    std::string stage;  // "pretrain" or "finetune"
    int epoch = -1;     // epoch whose weights were kept
    double best_val = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    std::optional<NormStats> stats;  // normalization the weights were trained under
    nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
    ModelConfig config;
    std::vector<NamedArray> weights;
    CheckpointMeta meta;

    const NamedArray* find(std::string_view name) const {
        for (const auto& w : weights)
            if (w.name == name) return &w;
        return nullptr;
    }
};

template <class T>
Checkpoint make_checkpoint(const PulseModel<T>& model, CheckpointMeta meta) {
    Checkpoint ck{model.config(), {}, std::move(meta)};
    for (const auto& e : model.params().entries()) {
        NamedArray a{e.name, e.value.rows(), e.value.cols(), {}};
        a.data.resize(static_cast<std::size_t>(e.value.size()));
        for (Index i = 0; i < e.value.size(); ++i) a.data[static_cast<std::size_t>(i)] = static_cast<float>(e.value.data()[i]);
        ck.weights.push_back(std::move(a));
    }
    return ck;
}

/// Loads every array into its slot; each slot must be filled exactly once
/// with a matching shape.
template <class T>
void load_weights(PulseModel<T>& model, const Checkpoint& ck) {
    auto& ps = model.params();
    std::set<std::size_t> filled;
    for (const auto& a : ck.weights) {
        const auto idx = ps.find(a.name);
        if (!idx) throw IncompatibleError("checkpoint weight '" + a.name + "' has no slot in the model");
        if (!filled.insert(*idx).second) throw IncompatibleError("checkpoint weight '" + a.name + "' appears twice");
        auto& dst = ps[*idx];
        if (dst.rows() != a.rows || dst.cols() != a.cols ||
            static_cast<std::size_t>(dst.size()) != a.data.size())
            throw IncompatibleError("checkpoint weight '" + a.name + "' has shape " +
                                    std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                    ", model expects " + std::to_string(dst.rows()) + "x" +
                                    std::to_string(dst.cols()));
        for (Index i = 0; i < dst.size(); ++i) dst.data()[i] = static_cast<T>(a.data[static_cast<std::size_t>(i)]);
    }
    if (filled.size() != ps.size()) {
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (!filled.count(i))
                throw IncompatibleError("checkpoint lacks weight '" + ps.entry(i).name + "'");
    }
}

template <class T = float>
PulseModel<T> instantiate(const Checkpoint& ck) {
    PulseModel<T> model(ck.config, ck.meta.seed);
    load_weights(model, ck);
    return model;
}

/// Builds an estimator whose encoder is copied from an autoencoder checkpoint
/// and whose regression head is freshly drawn from `head_seed`.
template <class T = float>
PulseModel<T> transfer_encoder_weights(const Checkpoint& src, ModelConfig dst_cfg,
                                       std::uint64_t head_seed) {
    if (src.config.variant != Variant::Autoencoder)
        throw IncompatibleError("transfer_encoder_weights: source checkpoint is not an autoencoder");
    dst_cfg.variant = Variant::Estimator;
    const auto diff = encoder_differences(src.config, dst_cfg);
    if (!diff.empty()) {
        std::string fields;
        for (const auto& f : diff) fields += (fields.empty() ? "" : ", ") + f;
        throw IncompatibleError("encoder configurations differ in: " + fields);
    }
    PulseModel<T> model(dst_cfg, head_seed);
    auto& ps = model.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& name = ps.entry(i).name;
        if (name.rfind("enc.", 0) != 0) continue;
        const NamedArray* a = src.find(name);
        if (!a) throw IncompatibleError("autoencoder checkpoint lacks encoder weight '" + name + "'");
        auto& dst = ps[i];
        if (dst.rows() != a->rows || dst.cols() != a->cols)
            throw IncompatibleError("encoder weight '" + name + "' shape mismatch");
        for (Index k = 0; k < dst.size(); ++k) dst.data()[k] = static_cast<T>(a->data[static_cast<std::size_t>(k)]);
    }
    return model;
}

// Checkpoint layout: "EPPGCKPT", u32 version, u32 header length, JSON header
// (config, metadata, tensor table), then the float32 tensors back to back.
inline constexpr std::string_view kCheckpointMagic = "EPPGCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& w : ck.weights) {
        tensors.push_back({{"name", w.name}, {"rows", w.rows}, {"cols", w.cols}, {"offset", offset}});
        offset += w.data.size();
    }
    nlohmann::json meta = {{"stage", ck.meta.stage},
                           {"epoch", ck.meta.epoch},
                           {"best_val", std::isfinite(ck.meta.best_val) ? nlohmann::json(ck.meta.best_val)
                                                                        : nlohmann::json(nullptr)},
                           {"seed", ck.meta.seed},
                           {"stats", ck.meta.stats ? stats_to_json(*ck.meta.stats) : nlohmann::json(nullptr)},
                           {"extra", ck.meta.extra}};
    const std::string header =
        nlohmann::json{{"config", to_json(ck.config)}, {"meta", meta}, {"tensors", tensors}}.dump();
    io::ByteWriter w;
    w.put_bytes(kCheckpointMagic);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(header.size()));
    w.put_bytes(header);
    for (const auto& a : ck.weights) w.put_span(std::span<const float>(a.data));
    return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::span<const char> bytes, const std::string& what = "checkpoint") {
    io::ByteReader r(bytes, what);
    if (bytes.size() < kCheckpointMagic.size() || r.get_string(kCheckpointMagic.size()) != kCheckpointMagic)
        throw FormatError(what + ": not a checkpoint (bad magic header)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_string(r.get<std::uint32_t>()));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(what + ": corrupt header: " + e.what());
    }
    Checkpoint ck;
    ck.config = model_config_from_json(header.at("config"));
    const auto& meta = header.at("meta");
    ck.meta.stage = meta.at("stage").get<std::string>();
    ck.meta.epoch = meta.at("epoch").get<int>();
    if (!meta.at("best_val").is_null()) ck.meta.best_val = meta.at("best_val").get<double>();
    ck.meta.seed = meta.at("seed").get<std::uint64_t>();
    if (!meta.at("stats").is_null()) ck.meta.stats = stats_from_json(meta.at("stats"));
    ck.meta.extra = meta.at("extra");
    std::size_t total = 0;
    for (const auto& t : header.at("tensors")) {
        NamedArray a{t.at("name").get<std::string>(), t.at("rows").get<Index>(), t.at("cols").get<Index>(), {}};
        a.data.resize(static_cast<std::size_t>(a.rows * a.cols));
        total += a.data.size();
        ck.weights.push_back(std::move(a));
    }
    if (r.remaining() != total * sizeof(float)) throw FormatError(what + ": truncated file");
    for (auto& a : ck.weights) r.get_into(std::span<float>(a.data));
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    io::write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(io::read_file(path), path.string());
}

} // namespace enhanceppg
