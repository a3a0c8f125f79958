// enhanceppg command line: one subcommand per pipeline stage plus `run`.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <enhanceppg/checkpoint.hpp>
#include <enhanceppg/config.hpp>
#include <enhanceppg/container.hpp>
#include <enhanceppg/model.hpp>
#include <enhanceppg/pipeline.hpp>

namespace {

using namespace enhanceppg;

void info(const std::string& msg) { std::cerr << msg << '\n'; }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

// Config from --config (defaults when absent), with --seed applied on top.
ExperimentConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    auto cfg = path.empty() ? validate_config_text("{}") : validate_config(path);
    if (seed) {
        cfg.seed = *seed;
        cfg.normalized["seed"] = *seed;
    }
    return cfg;
}

WindowedDataset load_containers(const std::string& list) {
    std::vector<WindowedDataset> parts;
    for (const auto& p : split_list(list)) parts.push_back(import_container(p));
    if (parts.empty()) throw ArgumentError("no containers given");
    return concat(parts);
}

std::string layer_table(const ModelConfig& cfg) {
    std::ostringstream os;
    const auto layers = describe_layers(cfg);
    std::size_t width = 5;
    for (const auto& l : layers) width = std::max(width, l.name.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %-16s  %-12s  %10s  %12s\n", static_cast<int>(width), "layer", "type",
                  "output", "params", "MACs");
    os << buf;
    long long params = 0, macs = 0;
    for (const auto& l : layers) {
        std::snprintf(buf, sizeof buf, "%-*s  %-16s  %-12s  %10lld  %12lld\n", static_cast<int>(width),
                      l.name.c_str(), l.type.c_str(), l.output_shape.c_str(), static_cast<long long>(l.params),
                      static_cast<long long>(l.macs));
        os << buf;
        params += static_cast<long long>(l.params);
        macs += static_cast<long long>(l.macs);
    }
    std::snprintf(buf, sizeof buf, "%-*s  %-16s  %-12s  %10lld  %12lld\n", static_cast<int>(width), "total", "", "",
                  params, macs);
    os << buf;
    return os.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heart-rate estimation from wrist PPG and accelerometer: ingest, augment, "
                 "self-supervised pretraining, fine-tuning and evaluation."};
    app.require_subcommand(1);

    std::string config_path, out;
    std::optional<std::uint64_t> seed;
    auto common = [&](CLI::App* sub, bool out_required) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "global seed (overrides the config)");
        auto* o = sub->add_option("--out", out, "output path");
        if (out_required) o->required();
    };

    // ingest
    auto* ingest = app.add_subcommand("ingest", "windows one dataset into a container");
    std::string source_name, in_dir;
    int syn_subjects = 15, syn_windows = 64;
    bool syn_unlabeled = false;
    ingest->add_option("--source", source_name, "dalia | wesad | unlabeled | synthetic")
        ->required()
        ->check(CLI::IsMember({"dalia", "wesad", "unlabeled", "synthetic"}));
    ingest->add_option("--in", in_dir, "dataset directory (not used for synthetic)");
    ingest->add_option("--subjects", syn_subjects, "synthetic: number of subjects");
    ingest->add_option("--windows", syn_windows, "synthetic: windows per subject");
    ingest->add_flag("--unlabeled", syn_unlabeled, "synthetic: drop labels");
    common(ingest, true);

    // augment
    auto* augment = app.add_subcommand("augment", "expands a container with Divide/Multiply transforms");
    std::string aug_in, grid{kDefaultGrid};
    augment->add_option("--in", aug_in, "input container")->required()->check(CLI::ExistingFile);
    augment->add_option("--grid", grid, "transform grid")->capture_default_str();
    common(augment, true);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "self-supervised reconstruction training");
    std::string pre_data;
    pre->add_option("--data", pre_data, "container[,container...]")->required();
    common(pre, true);

    // plan
    auto* plan_cmd = app.add_subcommand("plan", "writes the subject-wise fold plan for a labeled container");
    std::string plan_data;
    plan_cmd->add_option("--data", plan_data, "labeled container")->required()->check(CLI::ExistingFile);
    common(plan_cmd, true);

    // finetune
    auto* ft = app.add_subcommand("finetune", "fine-tunes one estimator per test subject");
    std::string ft_data, ft_pre, ft_plan, ft_init, ft_tests;
    ft->add_option("--data", ft_data, "labeled container (raw)")->required()->check(CLI::ExistingFile);
    ft->add_option("--pretrained", ft_pre, "pretrained autoencoder checkpoint")->check(CLI::ExistingFile);
    ft->add_option("--plan", ft_plan, "fold plan from `plan`")->required()->check(CLI::ExistingFile);
    ft->add_option("--init", ft_init, "pretrained | random (default from config)")
        ->check(CLI::IsMember({"pretrained", "random"}));
    ft->add_option("--test", ft_tests, "comma-separated test subjects (default: all)");
    common(ft, true);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "clips predictions, computes MAE and renders the report");
    std::string ev_pred, ev_labels, ev_baselines;
    bool ev_no_clip = false;
    ev->add_option("--pred", ev_pred, "directory written by finetune")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--labels", ev_labels, "labeled container")->check(CLI::ExistingFile);
    ev->add_option("--baselines", ev_baselines, "CSV of comparison rows")->check(CLI::ExistingFile);
    ev->add_flag("--no-clip", ev_no_clip, "skip temporal clipping");
    common(ev, true);

    // run
    auto* run = app.add_subcommand("run", "full pipeline with cached stages and a manifest");
    std::string stages;
    bool force = false;
    run->add_option("--stages", stages, "comma-separated subset of ingest,augment,pretrain,finetune,evaluate");
    run->add_flag("--force", force, "re-run stages even when cached");
    common(run, true);

    // model describe
    auto* model = app.add_subcommand("model", "model utilities");
    model->require_subcommand(1);
    auto* describe = model->add_subcommand("describe", "layer table with parameters and MACs");
    bool legacy = false, autoencoder = false;
    describe->add_flag("--legacy", legacy, "kernel 5 / dilation 2 variant");
    describe->add_flag("--autoencoder", autoencoder, "pretraining variant with decoder");
    common(describe, false);

    // config
    auto* config_cmd = app.add_subcommand("config", "prints the validated config with defaults filled");
    common(config_cmd, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help exits 0; usage errors share the config error code
    }

    try {
        if (*ingest) {
            const auto cfg = load_config(config_path, seed);
            const IngestGeometry g{cfg.window_s, cfg.shift_s, cfg.sample_rate_hz};
            const auto source = parse_source(source_name);
            WindowedDataset ds;
            if (source == Source::Synthetic) {
                SourceConfig sc;
                sc.source = source;
                sc.subjects = syn_subjects;
                sc.windows_per_subject = syn_windows;
                ds = ingest_source(sc, {}, derive_seed(cfg.seed, "ingest"), !syn_unlabeled, g, info);
            } else {
                if (in_dir.empty()) throw ArgumentError("ingest: --in is required for " + source_name);
                ds = ingest_directory(source, in_dir, g, info);
            }
            const fs::path dest = fs::path(out) / (source_name + ".eppg");
            export_container(ds, dest);
            info("wrote " + std::to_string(ds.size()) + " windows from " + std::to_string(ds.subjects().size()) +
                 " subjects to " + dest.string());
        } else if (*augment) {
            const auto cfg = load_config(config_path, seed);
            const auto ds = import_container(aug_in);
            const AugmentationSpec spec{parse_grid(grid), derive_seed(cfg.seed, "augment")};
            const auto expanded = expand_dataset(ds, spec);
            export_container(expanded, out);
            info("expanded " + std::to_string(ds.size()) + " -> " + std::to_string(expanded.size()) + " windows (x" +
                 std::to_string(spec.expansion_factor()) + ")");
        } else if (*pre) {
            const auto cfg = load_config(config_path, seed);
            const auto corpus = load_containers(pre_data);
            const auto stats = compute_norm_stats(corpus, Provenance::PretrainCorpus);
            auto pc = cfg.pretrain;
            pc.seed = derive_seed(cfg.seed, "pretrain");
            auto mc = cfg.model;
            mc.variant = Variant::Autoencoder;
            const auto r = pretrain(apply_zscore(corpus, stats), pc, mc,
                                    [](const EpochRecord& e) { std::cout << to_json(e).dump() << std::endl; });
            save_checkpoint(r.checkpoint, out);
            info("best epoch " + std::to_string(r.best_epoch) + ", val MSE " +
                 std::to_string(r.checkpoint.meta.best_val) + "; wrote " + out);
        } else if (*plan_cmd) {
            const auto cfg = load_config(config_path, seed);
            const auto ds = import_container(plan_data);
            const auto plan = make_loso_folds(ds.subjects(), static_cast<int>(cfg.folds),
                                              derive_seed(derive_seed(cfg.seed, "finetune"), "folds"));
            io::write_text_atomic(out, to_json(plan).dump(2));
            info("wrote " + std::to_string(plan.assignments.size()) + " assignments to " + out);
        } else if (*ft) {
            const auto cfg = load_config(config_path, seed);
            const auto labeled = import_container(ft_data);
            const auto plan_bytes = io::read_file(ft_plan);
            const auto plan = fold_plan_from_json(nlohmann::json::parse(plan_bytes.begin(), plan_bytes.end()));
            auto fc = cfg.finetune;
            fc.seed = derive_seed(cfg.seed, "finetune");
            if (!ft_init.empty()) fc.init = ft_init == "random" ? InitMode::Random : InitMode::Pretrained;
            if (fc.init == InitMode::Pretrained && ft_pre.empty())
                throw ArgumentError("finetune: --pretrained is required unless --init random");
            std::optional<Checkpoint> ck;
            if (fc.init == InitMode::Pretrained) ck = load_checkpoint(ft_pre);
            const auto tests = ft_tests.empty() ? cfg.test_subjects : split_list(ft_tests);
            const auto runs = finetune_plan(labeled, ck ? &*ck : nullptr, plan, fc, cfg.model, tests, info);
            write_subject_runs(runs, out);
            info("wrote " + std::to_string(runs.size()) + " subject runs to " + out);
        } else if (*ev) {
            const auto cfg = load_config(config_path, seed);
            auto ec = cfg.evaluate;
            if (ev_no_clip) ec.clip = false;
            std::optional<WindowedDataset> labels;
            if (!ev_labels.empty()) labels = import_container(ev_labels);
            const auto baselines = ev_baselines.empty() ? std::vector<ModelRow>{} : read_baselines(ev_baselines);
            const auto result = evaluate_predictions(ev_pred, labels ? &*labels : nullptr, baselines, ec);
            write_evaluation(result, out);
            std::cout << result.table;
        } else if (*run) {
            const auto cfg = load_config(config_path, seed);
            const auto r = run_pipeline(cfg, out, split_list(stages), {force, info});
            if (r.manifest.at("stages").contains("evaluate"))
                std::cout << r.manifest["stages"]["evaluate"]["metrics"].dump(2) << '\n';
        } else if (*describe) {
            auto cfg = load_config(config_path, seed).model;
            cfg.legacy_dilated = cfg.legacy_dilated || legacy;
            if (autoencoder) cfg.variant = Variant::Autoencoder;
            std::cout << layer_table(cfg);
        } else if (*config_cmd) {
            std::cout << load_config(config_path, seed).normalized.dump(2) << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
