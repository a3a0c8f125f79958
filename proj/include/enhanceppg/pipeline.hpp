#pragma once

// Stage drivers (ingest, augment, pretrain, finetune, evaluate) and the
// memoizing pipeline runner that records every artifact in manifest.json.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "augmentation.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "container.hpp"
#include "finetune.hpp"
#include "hash.hpp"
#include "loaders.hpp"
#include "postprocess.hpp"
#include "pretrain.hpp"
#include "synthetic.hpp"

namespace enhanceppg {

namespace fs = std::filesystem;
using Logger = std::function<void(const std::string&)>;

inline constexpr const char* kDataRootEnv = "ENHANCEPPG_DATA_ROOT";
inline const std::vector<std::string> kStages = {"ingest", "augment", "pretrain", "finetune", "evaluate"};

/// The config's data root unless ENHANCEPPG_DATA_ROOT is set.
inline fs::path resolve_data_root(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
    return cfg.data_root;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string epoch_log_jsonl(const std::vector<EpochRecord>& log) {
    std::string out;
    for (const auto& r : log) out += to_json(r).dump() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestGeometry {
    double window_s = kWindowSeconds, shift_s = kShiftSeconds, sample_rate_hz = kSampleRate;
};

/// Every subject archive of one dataset directory, windowed.
inline WindowedDataset ingest_directory(Source source, const fs::path& dir, const IngestGeometry& g = {},
                                        const Logger& log = {}) {
    const auto archives = discover_subjects(dir, source);
    if (archives.empty()) throw LoadError("no subject archives found under " + dir.string());
    std::vector<WindowedDataset> parts;
    for (const auto& a : archives) {
        auto ds = ingest_subject(load_subject(a, source), g.window_s, g.shift_s, g.sample_rate_hz);
        if (log) log("ingest: " + a.string() + " -> " + std::to_string(ds.size()) + " windows");
        parts.push_back(std::move(ds));
    }
    return concat(parts);
}

inline fs::path source_dir(const SourceConfig& src, const fs::path& data_root) {
    const fs::path p = src.path;
    return p.is_absolute() ? p : data_root / p;
}

/// One configured source as windows. Synthetic sources are generated from `seed`.
inline WindowedDataset ingest_source(const SourceConfig& src, const fs::path& data_root, std::uint64_t seed,
                                     bool labeled, const IngestGeometry& g = {}, const Logger& log = {}) {
    if (src.source != Source::Synthetic) {
        auto ds = ingest_directory(src.source, source_dir(src, data_root), g, log);
        if (!labeled)
            for (auto& w : ds.windows) w.label.reset();
        return ds;
    }
    ToneCorpusOptions opt;
    opt.windows_per_subject = static_cast<std::size_t>(src.windows_per_subject);
    opt.hr_min_bpm = src.hr_min_bpm;
    opt.hr_max_bpm = src.hr_max_bpm;
    opt.labeled = labeled;
    const std::string prefix = src.path.empty() ? (labeled ? "S" : "U") : src.path;
    std::vector<WindowedDataset> parts;
    for (int i = 0; i < src.subjects; ++i) {
        const auto id = prefix + std::to_string(i + 1);
        parts.push_back(synthetic_tone_windows(id, opt, derive_seed(seed, "synthetic." + id)));
    }
    return concat(parts);
}

/// Names, sizes and modification times of the archives a source would read.
inline nlohmann::json source_fingerprint(const SourceConfig& src, const fs::path& data_root) {
    if (src.source == Source::Synthetic) return nullptr;
    const auto dir = source_dir(src, data_root);
    if (!fs::is_directory(dir)) throw LoadError("missing data directory " + dir.string());
    nlohmann::json files = nlohmann::json::array();
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths)
        files.push_back({fs::relative(p, dir).string(), fs::file_size(p),
                         static_cast<long long>(fs::last_write_time(p).time_since_epoch().count())});
    return files;
}

// ---------------------------------------------------------------------------
// finetune

struct SubjectRun {
    std::string subject;
    Checkpoint checkpoint;
    HRSeries series;  // raw model outputs and labels
    std::vector<EpochRecord> log;
};

/// Runs every plan entry whose test subject is selected (all when `only` is empty).
/// Raw windows are normalized with the pretrained checkpoint's statistics, or
/// with the training split of each fold under random init.
inline std::vector<SubjectRun> finetune_plan(const WindowedDataset& labeled_raw, const Checkpoint* pretrained,
                                             const FoldPlan& plan, const FinetuneConfig& cfg,
                                             const ModelConfig& model_cfg,
                                             const std::vector<std::string>& only = {}, const Logger& log = {}) {
    if (labeled_raw.normalized) throw StateError("finetune: expected raw (unnormalized) windows");
    WindowedDataset shared;
    if (cfg.init == InitMode::Pretrained) {
        if (!pretrained || !pretrained->meta.stats)
            throw ArgumentError("finetune: init=pretrained needs a checkpoint carrying normalization statistics");
        shared = apply_zscore(labeled_raw, *pretrained->meta.stats);
    }
    const std::set<std::string> selected(only.begin(), only.end());
    for (const auto& s : selected)
        if (std::none_of(plan.assignments.begin(), plan.assignments.end(),
                         [&](const FoldAssignment& a) { return a.test == s; }))
            throw ArgumentError("finetune: test subject " + s + " is not in the fold plan");
    std::vector<SubjectRun> runs;
    for (const auto& entry : plan.assignments) {
        if (!selected.empty() && !selected.count(entry.test)) continue;
        WindowedDataset data;
        if (cfg.init == InitMode::Pretrained) {
            data = shared;
        } else {
            const auto stats = compute_norm_stats(select_subjects(labeled_raw, entry.train), Provenance::TrainSplit);
            data = apply_zscore(labeled_raw, stats);
        }
        auto result = finetune(entry, pretrained, cfg, data, model_cfg);
        auto series = predict_series(result.checkpoint, select_subjects(data, {entry.test}));
        series.subject_id = entry.test;
        if (log)
            log("finetune: " + entry.test + " best epoch " + std::to_string(result.best_epoch) + ", val MAE " +
                format2(result.checkpoint.meta.best_val));
        runs.push_back({entry.test, std::move(result.checkpoint), std::move(series), std::move(result.log)});
    }
    return runs;
}

inline nlohmann::json series_to_json(const HRSeries& s) {
    nlohmann::json j = {{"subject_id", s.subject_id}, {"predictions", s.predictions}};
    if (s.labels) j["labels"] = *s.labels;
    return j;
}

inline HRSeries series_from_json(const nlohmann::json& j) {
    HRSeries s;
    s.subject_id = j.at("subject_id").get<std::string>();
    s.predictions = j.at("predictions").get<std::vector<double>>();
    if (j.contains("labels")) s.labels = j.at("labels").get<std::vector<double>>();
    return s;
}

/// Writes <dir>/<subject>/{model.ckpt,predictions.json,log.jsonl}; returns the written paths.
inline std::vector<fs::path> write_subject_runs(const std::vector<SubjectRun>& runs, const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& r : runs) {
        const auto d = dir / r.subject;
        save_checkpoint(r.checkpoint, d / "model.ckpt");
        io::write_text_atomic(d / "predictions.json", series_to_json(r.series).dump());
        io::write_text_atomic(d / "log.jsonl", epoch_log_jsonl(r.log));
        out.insert(out.end(), {d / "model.ckpt", d / "predictions.json", d / "log.jsonl"});
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluate

struct Evaluation {
    MetricsReport report;
    std::map<std::string, double> raw_mae;  // before clipping
    std::string table, svg;
    nlohmann::json metrics;
};

/// Reads <pred_dir>/<subject>/predictions.json. Labels come from `labels` when
/// given (windows of that subject, in order), else from the prediction files.
inline Evaluation evaluate_predictions(const fs::path& pred_dir, const WindowedDataset* labels,
                                       const std::vector<ModelRow>& baselines, const EvaluateConfig& cfg) {
    if (!fs::is_directory(pred_dir)) throw LoadError("no predictions directory " + pred_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (fs::exists(e.path() / "predictions.json")) files.push_back(e.path() / "predictions.json");
    if (files.empty()) throw LoadError("no prediction series under " + pred_dir.string());
    std::sort(files.begin(), files.end());

    Evaluation ev;
    std::map<std::string, double> per_subject;
    for (const auto& f : files) {
        const auto bytes = io::read_file(f);
        auto series = series_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
        if (labels) {
            std::vector<double> truth;
            for (const auto& w : labels->windows)
                if (w.subject_id == series.subject_id) {
                    if (!w.label) throw StateError("evaluate: window of " + series.subject_id + " has no label");
                    truth.push_back(*w.label);
                }
            series.labels = std::move(truth);
        }
        if (!series.labels) throw StateError("evaluate: no labels for " + series.subject_id);
        if (series.labels->size() != series.predictions.size())
            throw StateError("evaluate: " + series.subject_id + " has " + std::to_string(series.predictions.size()) +
                             " predictions but " + std::to_string(series.labels->size()) + " labels");
        ev.raw_mae[series.subject_id] = mae(series.predictions, *series.labels);
        const auto processed = cfg.clip ? clip_postprocess(series, cfg.clip_history, cfg.clip_tol) : series;
        per_subject[series.subject_id] = mae(processed.predictions, *processed.labels);
    }
    ev.report = aggregate_report(per_subject, baselines);
    ev.table = render_table(ev.report);
    ev.svg = render_svg(ev.report);
    nlohmann::json subj = nlohmann::json::object(), raw = nlohmann::json::object();
    for (const auto& [s, v] : ev.report.per_subject_mae) subj[s] = v;
    for (const auto& [s, v] : ev.raw_mae) raw[s] = v;
    ev.metrics = {{"mean_mae", ev.report.mean_mae}, {"per_subject_mae", subj}, {"unclipped_mae", raw},
                  {"clip", cfg.clip}};
    return ev;
}

inline std::vector<fs::path> write_evaluation(const Evaluation& ev, const fs::path& dir) {
    io::write_text_atomic(dir / "report.csv", ev.table);
    io::write_text_atomic(dir / "report.svg", ev.svg);
    io::write_text_atomic(dir / "metrics.json", ev.metrics.dump(2));
    return {dir / "report.csv", dir / "report.svg", dir / "metrics.json"};
}

// ---------------------------------------------------------------------------
// pipeline runner

struct PipelineOptions {
    bool force = false;  // ignore cached stages
    Logger log;
};

struct PipelineResult {
    nlohmann::json manifest;
    std::vector<std::string> executed, cached;
};

namespace detail {

inline nlohmann::json record_outputs(const fs::path& root, const std::vector<fs::path>& files) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& f : files) out[fs::relative(f, root).generic_string()] = sha256_file(f);
    return out;
}

// True when every recorded output exists and still hashes to its recorded value.
inline bool outputs_intact(const fs::path& root, const nlohmann::json& entry, std::string* bad = nullptr) {
    for (const auto& [rel, sum] : entry.at("outputs").items()) {
        const auto p = root / rel;
        if (!fs::exists(p) || sha256_file(p) != sum.get<std::string>()) {
            if (bad) *bad = rel;
            return false;
        }
    }
    return true;
}

inline std::vector<std::string> upstream_of(const std::string& stage) {
    if (stage == "augment") return {"ingest"};
    if (stage == "pretrain") return {"augment"};
    if (stage == "finetune") return {"ingest", "pretrain"};
    if (stage == "evaluate") return {"ingest", "finetune"};
    return {};
}

} // namespace detail

/// Runs `stages` (all when empty) in dependency order below `out_dir`. A stage is
/// skipped when its key (hash of config section, seed and upstream artifact
/// checksums) matches the manifest and its outputs are intact.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg, const fs::path& out_dir,
                                   std::vector<std::string> stages = {}, const PipelineOptions& opt = {}) {
    auto log = [&](const std::string& m) {
        if (opt.log) opt.log(m);
    };
    if (stages.empty()) stages = kStages;
    for (const auto& s : stages)
        if (std::find(kStages.begin(), kStages.end(), s) == kStages.end())
            throw ArgumentError("unknown stage '" + s + "'");
    const std::set<std::string> wanted(stages.begin(), stages.end());

    fs::create_directories(out_dir);
    const auto manifest_path = out_dir / "manifest.json";
    nlohmann::json manifest = nlohmann::json::object();
    if (fs::exists(manifest_path)) {
        const auto bytes = io::read_file(manifest_path);
        manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    }
    const auto& N = cfg.normalized;
    const auto data_root = resolve_data_root(cfg);
    std::map<std::string, std::uint64_t> seeds;
    for (const auto& s : kStages) seeds[s] = derive_seed(cfg.seed, s);
    manifest["config"] = N;
    manifest["config_hash"] = sha256_hex(N.dump());
    manifest["seed"] = cfg.seed;
    manifest["seeds"] = seeds;
    if (!manifest.contains("stages")) manifest["stages"] = nlohmann::json::object();
    if (!manifest.contains("runs")) manifest["runs"] = nlohmann::json::array();
    auto save = [&] { io::write_text_atomic(manifest_path, manifest.dump(2)); };

    PipelineResult result;
    nlohmann::json run = {{"started", utc_timestamp()}, {"requested", stages}};
    const IngestGeometry geom{cfg.window_s, cfg.shift_s, cfg.sample_rate_hz};
    auto& S = manifest["stages"];

    // Upstream artifacts must be recorded and unchanged.
    auto require_upstream = [&](const std::string& stage) {
        for (const auto& up : detail::upstream_of(stage)) {
            if (up == "pretrain" && !cfg.pretrain_enabled) continue;
            if (!S.contains(up))
                throw StateError("missing upstream artifact: stage '" + stage + "' needs '" + up +
                                 "', which has not been run in " + out_dir.string());
            std::string bad;
            if (!detail::outputs_intact(out_dir, S[up], &bad))
                throw StateError("hash mismatch: " + (out_dir / bad).string() + " differs from the manifest record of stage '" +
                                 up + "'");
        }
    };
    auto output_sum = [&](const std::string& stage, const std::string& rel) {
        return S.at(stage).at("outputs").at(rel).get<std::string>();
    };

    for (const auto& stage : kStages) {
        if (!wanted.count(stage)) continue;
        require_upstream(stage);

        nlohmann::json key_src = {{"stage", stage}, {"seed", seeds[stage]}};
        if (stage == "ingest") {
            key_src["data"] = N.at("data");
            key_src["ingest"] = N.at("ingest");
            nlohmann::json prints = nlohmann::json::array();
            if (cfg.pretrain_enabled)
                for (const auto& s : cfg.pretrain_sources) prints.push_back(source_fingerprint(s, data_root));
            prints.push_back(source_fingerprint(cfg.finetune_source, data_root));
            key_src["inputs"] = prints;
        } else if (stage == "augment") {
            key_src["augment"] = N.at("augment");
            key_src["corpus"] = cfg.pretrain_enabled ? output_sum("ingest", "ingest/pretrain.eppg") : "";
        } else if (stage == "pretrain") {
            key_src["model"] = N.at("model");
            key_src["pretrain"] = N.at("pretrain");
            key_src["corpus"] = cfg.pretrain_enabled ? output_sum("augment", "augment/pretrain.eppg") : "";
        } else if (stage == "finetune") {
            key_src["model"] = N.at("model");
            key_src["finetune"] = N.at("finetune");
            key_src["data"] = output_sum("ingest", "ingest/finetune.eppg");
            key_src["pretrained"] =
                cfg.finetune.init == InitMode::Pretrained ? output_sum("pretrain", "pretrain/autoencoder.ckpt") : "";
        } else {
            key_src["evaluate"] = N.at("evaluate");
            key_src["labels"] = output_sum("ingest", "ingest/finetune.eppg");
            key_src["predictions"] = S.at("finetune").at("outputs");
            key_src["baselines"] = cfg.evaluate.baselines.empty() ? "" : sha256_file(cfg.evaluate.baselines);
        }
        const auto key = sha256_hex(key_src.dump());

        if (!opt.force && S.contains(stage) && S[stage].value("key", "") == key && detail::outputs_intact(out_dir, S[stage])) {
            log(stage + ": cached");
            result.cached.push_back(stage);
            continue;
        }
        log(stage + ": running");
        nlohmann::json entry = {{"key", key}, {"seed", seeds[stage]}, {"started", utc_timestamp()}};
        std::vector<fs::path> outputs;
        nlohmann::json metrics = nlohmann::json::object();

        if (stage == "ingest") {
            if (cfg.pretrain_enabled) {
                std::vector<WindowedDataset> parts;
                for (std::size_t i = 0; i < cfg.pretrain_sources.size(); ++i)
                    parts.push_back(ingest_source(cfg.pretrain_sources[i], data_root,
                                                  derive_seed(seeds[stage], "pretrain." + std::to_string(i)), false,
                                                  geom, opt.log));
                const auto corpus = concat(parts);
                export_container(corpus, out_dir / "ingest/pretrain.eppg");
                outputs.push_back(out_dir / "ingest/pretrain.eppg");
                metrics["pretrain_windows"] = corpus.size();
            }
            const auto labeled = ingest_source(cfg.finetune_source, data_root, derive_seed(seeds[stage], "finetune"),
                                               true, geom, opt.log);
            if (!labeled.all_labeled()) throw StateError("ingest: fine-tuning source produced unlabeled windows");
            export_container(labeled, out_dir / "ingest/finetune.eppg");
            outputs.push_back(out_dir / "ingest/finetune.eppg");
            metrics["finetune_windows"] = labeled.size();
            metrics["finetune_subjects"] = labeled.subjects();
        } else if (stage == "augment") {
            if (cfg.pretrain_enabled) {
                const auto corpus = import_container(out_dir / "ingest/pretrain.eppg");
                AugmentationSpec spec{cfg.augment ? parse_grid(cfg.grid) : std::vector<Transform>{}, seeds[stage]};
                const auto expanded = expand_dataset(corpus, spec);
                export_container(expanded, out_dir / "augment/pretrain.eppg");
                outputs.push_back(out_dir / "augment/pretrain.eppg");
                metrics["windows"] = expanded.size();
                metrics["expansion_factor"] = spec.expansion_factor();
            }
        } else if (stage == "pretrain") {
            if (cfg.pretrain_enabled) {
                const auto corpus = import_container(out_dir / "augment/pretrain.eppg");
                const auto stats = compute_norm_stats(corpus, Provenance::PretrainCorpus);
                auto pc = cfg.pretrain;
                pc.seed = seeds[stage];
                auto model_cfg = cfg.model;
                model_cfg.variant = Variant::Autoencoder;
                auto r = pretrain(apply_zscore(corpus, stats), pc, model_cfg, [&](const EpochRecord& e) {
                    log("pretrain: " + to_json(e).dump());
                });
                save_checkpoint(r.checkpoint, out_dir / "pretrain/autoencoder.ckpt");
                io::write_text_atomic(out_dir / "pretrain/log.jsonl", epoch_log_jsonl(r.log));
                outputs = {out_dir / "pretrain/autoencoder.ckpt", out_dir / "pretrain/log.jsonl"};
                metrics = {{"best_epoch", r.best_epoch}, {"epochs_run", r.epochs_run},
                           {"best_val_mse", r.checkpoint.meta.best_val}};
            }
        } else if (stage == "finetune") {
            const auto labeled = import_container(out_dir / "ingest/finetune.eppg");
            std::optional<Checkpoint> pre;
            if (cfg.finetune.init == InitMode::Pretrained) pre = load_checkpoint(out_dir / "pretrain/autoencoder.ckpt");
            const auto plan = make_loso_folds(labeled.subjects(), static_cast<int>(cfg.folds),
                                              derive_seed(seeds[stage], "folds"));
            auto fc = cfg.finetune;
            fc.seed = seeds[stage];
            if (fs::exists(out_dir / "finetune")) fs::remove_all(out_dir / "finetune");
            io::write_text_atomic(out_dir / "finetune/plan.json", to_json(plan).dump(2));
            const auto runs = finetune_plan(labeled, pre ? &*pre : nullptr, plan, fc, cfg.model, cfg.test_subjects,
                                            opt.log);
            outputs = write_subject_runs(runs, out_dir / "finetune");
            outputs.push_back(out_dir / "finetune/plan.json");
            for (const auto& r : runs) metrics[r.subject] = r.checkpoint.meta.best_val;
            metrics = {{"best_val_mae", metrics}};
        } else {
            const auto labels = import_container(out_dir / "ingest/finetune.eppg");
            const auto baselines =
                cfg.evaluate.baselines.empty() ? std::vector<ModelRow>{} : read_baselines(cfg.evaluate.baselines);
            const auto ev = evaluate_predictions(out_dir / "finetune", &labels, baselines, cfg.evaluate);
            outputs = write_evaluation(ev, out_dir / "evaluate");
            metrics = ev.metrics;
            log("evaluate: mean MAE " + format2(ev.report.mean_mae) + " BPM");
        }
        std::sort(outputs.begin(), outputs.end());
        entry["outputs"] = detail::record_outputs(out_dir, outputs);
        entry["metrics"] = metrics;
        entry["finished"] = utc_timestamp();
        if (stage == "pretrain" && !cfg.pretrain_enabled) entry["disabled"] = true;
        S[stage] = entry;
        result.executed.push_back(stage);
        save();
    }
    run["executed"] = result.executed;
    run["cached"] = result.cached;
    run["finished"] = utc_timestamp();
    manifest["runs"].push_back(run);
    save();
    result.manifest = manifest;
    return result;
}

/// Every output recorded in the manifest exists and matches its checksum.
inline bool verify_manifest(const fs::path& out_dir, std::string* bad = nullptr) {
    const auto bytes = io::read_file(out_dir / "manifest.json");
    const auto m = nlohmann::json::parse(bytes.begin(), bytes.end());
    for (const auto& [_, entry] : m.at("stages").items())
        if (!detail::outputs_intact(out_dir, entry, bad)) return false;
    return true;
}

} // namespace enhanceppg
