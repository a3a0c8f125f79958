#pragma once

// Experiment configuration: a JSON document validated against a fixed schema.
// Missing keys are filled with defaults, unknown keys are rejected.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "augmentation.hpp"
#include "data.hpp"
#include "error.hpp"
#include "finetune.hpp"
#include "model.hpp"
#include "pretrain.hpp"

namespace enhanceppg {

namespace schema {

using nlohmann::json;

enum class Type { Int, Number, Bool, String, Enum, IntList, NumberPair, Object, ObjectList, StringList };

struct Field {
    std::string key;
    Type type;
    json fallback;                           // default value (Object/ObjectList: ignored)
    std::optional<double> min, max;          // bounds on numbers / list entries
    bool exclusive_min = false;
    std::vector<std::string> choices;        // Enum
    std::vector<Field> children;             // Object / ObjectList element
    std::function<void(const json&)> check;  // extra validation of the final value
    bool exclusive_max = false;
};

inline Field num(std::string key, double def, std::optional<double> lo = {}, std::optional<double> hi = {},
                 bool exclusive_lo = false, bool exclusive_hi = false) {
    return {std::move(key), Type::Number, def, lo, hi, exclusive_lo, {}, {}, {}, exclusive_hi};
}
inline Field integer(std::string key, long long def, std::optional<double> lo = {}, std::optional<double> hi = {}) {
    return {std::move(key), Type::Int, def, lo, hi, false, {}, {}, {}};
}
inline Field boolean(std::string key, bool def) { return {std::move(key), Type::Bool, def, {}, {}, false, {}, {}, {}}; }
inline Field string(std::string key, std::string def) {
    return {std::move(key), Type::String, def, {}, {}, false, {}, {}, {}};
}
inline Field choice(std::string key, std::string def, std::vector<std::string> choices) {
    return {std::move(key), Type::Enum, def, {}, {}, false, std::move(choices), {}, {}};
}
inline Field object(std::string key, std::vector<Field> children) {
    return {std::move(key), Type::Object, json::object(), {}, {}, false, {}, std::move(children), {}};
}

inline std::vector<Field> source_fields() {
    return {choice("source", "dalia", {"dalia", "wesad", "unlabeled", "synthetic"}),
            string("path", ""),
            // synthetic sources only
            integer("subjects", 15, 1),
            integer("windows_per_subject", 64, 1),
            num("hr_min_bpm", 60.0, 20.0, 250.0),
            num("hr_max_bpm", 150.0, 20.0, 250.0)};
}

inline const Field& root() {
    static const Field r = [] {
        Field pretrain_sources{"pretrain", Type::ObjectList,
                               json::array({{{"source", "wesad"}, {"path", "WESAD"}}}),
                               {}, {}, false, {}, source_fields(), {}};
        Field finetune_source = object("finetune", source_fields());
        finetune_source.fallback = {{"source", "dalia"}, {"path", "PPG_DaLiA"}};

        Field grid = string("grid", std::string(kDefaultGrid));
        grid.check = [](const json& v) { parse_grid(v.get<std::string>()); };

        Field channels{"block_channels", Type::IntList, json::array({32, 48, 64}), 1, {}, false, {}, {}, {}};
        Field pre_betas{"betas", Type::NumberPair, json::array({0.9, 0.95}), 0.0, 1.0, false, {}, {}, {}, true};
        Field ft_betas{"betas", Type::NumberPair, json::array({0.9, 0.999}), 0.0, 1.0, false, {}, {}, {}, true};
        Field tests{"test_subjects", Type::StringList, json::array(), {}, {}, false, {}, {}, {}};

        return object("", {
            integer("seed", 0, 0),
            string("data_root", "data"),
            object("data", {pretrain_sources, finetune_source}),
            object("ingest", {num("window_s", kWindowSeconds, 0.0, {}, true),
                              num("shift_s", kShiftSeconds, 0.0, {}, true),
                              num("sample_rate_hz", kSampleRate, 0.0, {}, true)}),
            object("augment", {boolean("enabled", true), grid}),
            object("model", {channels, integer("layers_per_block", 3, 1), integer("kernel_len", 9, 1),
                             integer("dilation", 1, 1), integer("pool_factor", 2, 1),
                             integer("attention_heads", 4, 1), integer("head_hidden", 8, 1),
                             boolean("legacy_dilated", false), boolean("skip_connections", true)}),
            object("pretrain", {boolean("enabled", true), integer("max_epochs", 500, 1),
                                num("learning_rate", 1e-3, 0.0), pre_betas, num("weight_decay", 0.01, 0.0),
                                integer("plateau_patience", 5, 0), integer("early_stop_patience", 50, 1),
                                integer("batch_size", 256, 1), num("val_fraction", 0.1, 0.0, 0.5, true, true)}),
            object("finetune", {integer("max_epochs", 500, 1), num("learning_rate", 5e-4, 0.0, {}, true),
                                ft_betas, integer("early_stop_patience", 150, 1), integer("batch_size", 128, 1),
                                integer("folds", 4, 2), choice("init", "pretrained", {"pretrained", "random"}),
                                tests}),
            object("evaluate", {boolean("clip", true), integer("clip_history", 10, 1),
                                num("clip_tol", 0.10, 0.0, 1.0, true, true), string("baselines", "")}),
        });
    }();
    return r;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline void collect_paths(const Field& f, const std::string& prefix, std::vector<std::string>& out) {
    for (const auto& c : f.children) {
        const auto p = prefix.empty() ? c.key : prefix + "." + c.key;
        out.push_back(p);
        collect_paths(c, p, out);
    }
}

// Closest known keys: same-level siblings first, then leaves anywhere in the schema.
inline std::string suggest(const std::string& key, const Field& parent, const std::string& parent_path) {
    auto close = [&](const std::string& cand) {
        return edit_distance(key, cand) <= std::max<std::size_t>(2, key.size() / 3);
    };
    for (const auto& c : parent.children)
        if (close(c.key)) return parent_path.empty() ? c.key : parent_path + "." + c.key;
    std::vector<std::string> paths, hits;
    collect_paths(root(), "", paths);
    for (const auto& p : paths) {
        const auto leaf = p.substr(p.rfind('.') == std::string::npos ? 0 : p.rfind('.') + 1);
        if (close(leaf)) hits.push_back(p);
    }
    std::string s;
    for (std::size_t i = 0; i < hits.size(); ++i) s += (i ? " or " : "") + hits[i];
    return s;
}

[[noreturn]] inline void fail(const std::string& path, const std::string& reason) {
    throw ConfigError("config: " + (path.empty() ? std::string("<root>") : path) + ": " + reason);
}

inline std::string type_name(Type t) {
    switch (t) {
    case Type::Int: return "an integer";
    case Type::Number: return "a number";
    case Type::Bool: return "a boolean";
    case Type::String: case Type::Enum: return "a string";
    case Type::IntList: return "a list of integers";
    case Type::NumberPair: return "a list of two numbers";
    case Type::Object: return "an object";
    case Type::ObjectList: return "a list of objects";
    case Type::StringList: return "a list of strings";
    }
    return "?";
}

inline void check_range(const Field& f, const std::string& path, double v) {
    if (!std::isfinite(v)) fail(path, "must be finite");
    std::ostringstream got;
    got << v;
    if (f.min) {
        if (f.exclusive_min ? !(v > *f.min) : v < *f.min) {
            std::ostringstream m;
            m << *f.min;
            fail(path, std::string("must be ") + (f.exclusive_min ? "> " : ">= ") + m.str() + " (got " + got.str() + ")");
        }
    }
    if (f.max) {
        if (f.exclusive_max ? !(v < *f.max) : v > *f.max) {
            std::ostringstream m;
            m << *f.max;
            fail(path, std::string("must be ") + (f.exclusive_max ? "< " : "<= ") + m.str() + " (got " + got.str() + ")");
        }
    }
}

inline json normalize(const json& in, const Field& f, const std::string& path);

inline json normalize_object(const json& in, const Field& f, const std::string& path) {
    if (!in.is_object()) fail(path, "must be " + type_name(Type::Object));
    for (const auto& [k, _] : in.items()) {
        const bool known = std::any_of(f.children.begin(), f.children.end(), [&](const Field& c) { return c.key == k; });
        if (!known) {
            const auto hint = suggest(k, f, path);
            fail(path.empty() ? k : path + "." + k,
                 "unknown key" + (hint.empty() ? std::string() : " (did you mean " + hint + "?)"));
        }
    }
    json out = json::object();
    for (const auto& c : f.children) {
        const auto p = path.empty() ? c.key : path + "." + c.key;
        if (in.contains(c.key)) out[c.key] = normalize(in.at(c.key), c, p);
        else if (c.type == Type::Object || c.type == Type::ObjectList)
            out[c.key] = normalize(c.type == Type::Object && c.fallback.empty() ? json::object() : c.fallback, c, p);
        else out[c.key] = c.fallback;
    }
    return out;
}

inline json normalize(const json& in, const Field& f, const std::string& path) {
    json out;
    switch (f.type) {
    case Type::Int:
        if (!in.is_number_integer()) fail(path, "must be " + type_name(f.type));
        check_range(f, path, in.get<double>());
        out = in;
        break;
    case Type::Number:
        if (!in.is_number()) fail(path, "must be " + type_name(f.type));
        check_range(f, path, in.get<double>());
        out = in.get<double>();
        break;
    case Type::Bool:
        if (!in.is_boolean()) fail(path, "must be " + type_name(f.type));
        out = in;
        break;
    case Type::String:
        if (!in.is_string()) fail(path, "must be " + type_name(f.type));
        out = in;
        break;
    case Type::Enum: {
        if (!in.is_string()) fail(path, "must be " + type_name(f.type));
        const auto v = in.get<std::string>();
        if (std::find(f.choices.begin(), f.choices.end(), v) == f.choices.end()) {
            std::string all;
            for (const auto& c : f.choices) all += (all.empty() ? "" : ", ") + c;
            fail(path, "must be one of {" + all + "} (got '" + v + "')");
        }
        out = in;
        break;
    }
    case Type::IntList:
        if (!in.is_array() || in.empty()) fail(path, "must be a non-empty list of integers");
        for (const auto& e : in) {
            if (!e.is_number_integer()) fail(path, "must be " + type_name(f.type));
            check_range(f, path, e.get<double>());
        }
        out = in;
        break;
    case Type::NumberPair:
        if (!in.is_array() || in.size() != 2) fail(path, "must be " + type_name(f.type));
        for (const auto& e : in) {
            if (!e.is_number()) fail(path, "must be " + type_name(f.type));
            check_range(f, path, e.get<double>());
        }
        out = json::array({in[0].get<double>(), in[1].get<double>()});
        break;
    case Type::StringList:
        if (!in.is_array()) fail(path, "must be " + type_name(f.type));
        for (const auto& e : in)
            if (!e.is_string()) fail(path, "must be " + type_name(f.type));
        out = in;
        break;
    case Type::Object:
        out = normalize_object(in, f, path);
        break;
    case Type::ObjectList:
        if (!in.is_array()) fail(path, "must be " + type_name(f.type));
        out = json::array();
        for (std::size_t i = 0; i < in.size(); ++i)
            out.push_back(normalize_object(in[i], f, path + "[" + std::to_string(i) + "]"));
        break;
    }
    if (f.check) {
        try {
            f.check(out);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            fail(path, e.what());
        }
    }
    return out;
}

} // namespace schema

/// One data source entry of the config.
struct SourceConfig {
    Source source = Source::Dalia;
    std::string path;
    int subjects = 15;
    int windows_per_subject = 64;
    double hr_min_bpm = 60.0, hr_max_bpm = 150.0;
};

struct EvaluateConfig {
    bool clip = true;
    std::size_t clip_history = 10;
    double clip_tol = 0.10;
    std::string baselines;
};

/// Typed view of a normalized config.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string data_root = "data";
    std::vector<SourceConfig> pretrain_sources;
    SourceConfig finetune_source;
    double window_s = kWindowSeconds, shift_s = kShiftSeconds, sample_rate_hz = kSampleRate;
    bool augment = true;
    std::string grid{kDefaultGrid};
    ModelConfig model;
    bool pretrain_enabled = true;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    std::size_t folds = 4;
    std::vector<std::string> test_subjects;
    EvaluateConfig evaluate;
    nlohmann::json normalized;
};

namespace detail {
inline SourceConfig source_from_json(const nlohmann::json& j, const std::string& path) {
    SourceConfig s;
    s.source = parse_source(j.at("source").get<std::string>());
    s.path = j.at("path").get<std::string>();
    s.subjects = j.at("subjects").get<int>();
    s.windows_per_subject = j.at("windows_per_subject").get<int>();
    s.hr_min_bpm = j.at("hr_min_bpm").get<double>();
    s.hr_max_bpm = j.at("hr_max_bpm").get<double>();
    if (s.hr_min_bpm >= s.hr_max_bpm) schema::fail(path + ".hr_min_bpm", "must be below hr_max_bpm");
    if (s.source != Source::Synthetic && s.path.empty()) schema::fail(path + ".path", "required for non-synthetic sources");
    return s;
}
} // namespace detail

/// Validates a parsed document; returns the typed config with `normalized` holding every default.
inline ExperimentConfig validate_config_json(const nlohmann::json& doc) {
    const auto j = schema::normalize(doc.is_null() ? nlohmann::json::object() : doc, schema::root(), "");
    ExperimentConfig c;
    c.normalized = j;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data_root = j.at("data_root").get<std::string>();
    const auto& pre = j.at("data").at("pretrain");
    for (std::size_t i = 0; i < pre.size(); ++i)
        c.pretrain_sources.push_back(detail::source_from_json(pre[i], "data.pretrain[" + std::to_string(i) + "]"));
    c.finetune_source = detail::source_from_json(j.at("data").at("finetune"), "data.finetune");
    if (c.finetune_source.source == Source::Unlabeled)
        schema::fail("data.finetune.source", "fine-tuning needs a labeled source");

    const auto& ing = j.at("ingest");
    c.window_s = ing.at("window_s").get<double>();
    c.shift_s = ing.at("shift_s").get<double>();
    c.sample_rate_hz = ing.at("sample_rate_hz").get<double>();
    if (std::llround(c.window_s * c.sample_rate_hz) != static_cast<long long>(kWindowLength))
        schema::fail("ingest.window_s", "window_s * sample_rate_hz must equal 256 samples");
    if (std::llround(c.shift_s * c.sample_rate_hz) < 1) schema::fail("ingest.shift_s", "shift must span at least one sample");

    c.augment = j.at("augment").at("enabled").get<bool>();
    c.grid = j.at("augment").at("grid").get<std::string>();

    const auto& m = j.at("model");
    c.model.block_channels = m.at("block_channels").get<std::vector<int>>();
    c.model.layers_per_block = m.at("layers_per_block").get<int>();
    c.model.kernel_len = m.at("kernel_len").get<int>();
    c.model.dilation = m.at("dilation").get<int>();
    c.model.pool_factor = m.at("pool_factor").get<int>();
    c.model.attention_heads = m.at("attention_heads").get<int>();
    c.model.head_hidden = m.at("head_hidden").get<int>();
    c.model.legacy_dilated = m.at("legacy_dilated").get<bool>();
    c.model.skip_connections = m.at("skip_connections").get<bool>();
    try {
        c.model.validate();
    } catch (const std::exception& e) {
        schema::fail("model", e.what());
    }

    const auto& p = j.at("pretrain");
    c.pretrain_enabled = p.at("enabled").get<bool>();
    c.pretrain.max_epochs = p.at("max_epochs").get<int>();
    c.pretrain.lr = p.at("learning_rate").get<double>();
    c.pretrain.beta1 = p.at("betas")[0].get<double>();
    c.pretrain.beta2 = p.at("betas")[1].get<double>();
    c.pretrain.weight_decay = p.at("weight_decay").get<double>();
    c.pretrain.plateau_patience = p.at("plateau_patience").get<int>();
    c.pretrain.early_stop_patience = p.at("early_stop_patience").get<int>();
    c.pretrain.batch_size = p.at("batch_size").get<int>();
    c.pretrain.val_fraction = p.at("val_fraction").get<double>();
    if (c.pretrain.early_stop_patience <= c.pretrain.plateau_patience)
        schema::fail("pretrain.early_stop_patience", "must exceed pretrain.plateau_patience");
    if (c.pretrain_enabled && c.pretrain_sources.empty())
        schema::fail("data.pretrain", "at least one source is needed when pretraining is enabled");

    const auto& f = j.at("finetune");
    c.finetune.max_epochs = f.at("max_epochs").get<int>();
    c.finetune.lr = f.at("learning_rate").get<double>();
    c.finetune.beta1 = f.at("betas")[0].get<double>();
    c.finetune.beta2 = f.at("betas")[1].get<double>();
    c.finetune.early_stop_patience = f.at("early_stop_patience").get<int>();
    c.finetune.batch_size = f.at("batch_size").get<int>();
    c.finetune.init = f.at("init").get<std::string>() == "random" ? InitMode::Random : InitMode::Pretrained;
    c.folds = f.at("folds").get<std::size_t>();
    c.test_subjects = f.at("test_subjects").get<std::vector<std::string>>();
    if (c.finetune.early_stop_patience >= c.finetune.max_epochs && c.finetune.max_epochs > 1)
        schema::fail("finetune.early_stop_patience", "must be below finetune.max_epochs");
    if (c.finetune.init == InitMode::Pretrained && !c.pretrain_enabled)
        schema::fail("finetune.init", "'pretrained' requires pretrain.enabled");

    const auto& e = j.at("evaluate");
    c.evaluate.clip = e.at("clip").get<bool>();
    c.evaluate.clip_history = e.at("clip_history").get<std::size_t>();
    c.evaluate.clip_tol = e.at("clip_tol").get<double>();
    c.evaluate.baselines = e.at("baselines").get<std::string>();
    return c;
}

inline ExperimentConfig validate_config_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = text.find_first_not_of(" \t\r\n") == std::string::npos ? nlohmann::json::object()
                                                                      : nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    return validate_config_json(doc);
}

inline ExperimentConfig validate_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return validate_config_text(ss.str());
}

} // namespace enhanceppg
