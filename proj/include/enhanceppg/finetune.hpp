#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "postprocess.hpp"
#include "pretrain.hpp"

namespace enhanceppg {

struct FoldAssignment {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::string test;
};

/// Subject-wise cross-validation plan: each subject is the test subject once,
/// its fold-mates form the validation set, the other folds the training set.
struct FoldPlan {
    std::vector<std::vector<std::string>> folds;
    std::vector<FoldAssignment> assignments;
    std::uint64_t seed = 0;
};

inline FoldPlan make_loso_folds(std::vector<std::string> subjects, int n_folds = 4,
                                std::uint64_t seed = 0) {
    if (n_folds < 2) throw ArgumentError("make_loso_folds: need at least 2 folds");
    std::sort(subjects.begin(), subjects.end());
    if (std::adjacent_find(subjects.begin(), subjects.end()) != subjects.end())
        throw ArgumentError("make_loso_folds: duplicate subject ids");
    const auto k = static_cast<std::size_t>(n_folds);
    if (subjects.size() < k)
        throw ArgumentError("make_loso_folds: " + std::to_string(subjects.size()) +
                            " subjects cannot fill " + std::to_string(k) + " folds");
    std::sort(subjects.begin(), subjects.end(), subject_less);
    CounterRng rng(seed, 0xF01D);
    shuffle(subjects, rng);

    FoldPlan plan;
    plan.seed = seed;
    const std::size_t base = subjects.size() / k, extra = subjects.size() % k;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        std::vector<std::string> fold(subjects.begin() + static_cast<std::ptrdiff_t>(pos),
                                      subjects.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(fold.begin(), fold.end(), subject_less);
        plan.folds.push_back(std::move(fold));
        pos += size;
    }
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::string> train;
        for (std::size_t o = 0; o < k; ++o)
            if (o != f) train.insert(train.end(), plan.folds[o].begin(), plan.folds[o].end());
        std::sort(train.begin(), train.end(), subject_less);
        for (const auto& s : plan.folds[f]) {
            FoldAssignment a{train, {}, s};
            for (const auto& v : plan.folds[f])
                if (v != s) a.val.push_back(v);
            plan.assignments.push_back(std::move(a));
        }
    }
    return plan;
}

inline nlohmann::json to_json(const FoldPlan& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : p.assignments) a.push_back({{"train", x.train}, {"val", x.val}, {"test", x.test}});
    return {{"seed", p.seed}, {"folds", p.folds}, {"assignments", a}};
}

inline FoldPlan fold_plan_from_json(const nlohmann::json& j) {
    FoldPlan p;
    p.seed = j.value("seed", std::uint64_t{0});
    p.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
    for (const auto& a : j.at("assignments"))
        p.assignments.push_back({a.at("train").get<std::vector<std::string>>(),
                                 a.at("val").get<std::vector<std::string>>(), a.at("test").get<std::string>()});
    return p;
}

enum class InitMode { Pretrained, Random };

struct FinetuneConfig {
    int max_epochs = 500;
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int early_stop_patience = 150;
    int batch_size = 128;
    std::uint64_t seed = 0;
    InitMode init = InitMode::Pretrained;

    void validate() const {
        if (max_epochs < 1) throw ArgumentError("finetune: max_epochs must be >= 1");
        if (!(lr > 0.0)) throw ArgumentError("finetune: lr must be > 0");
        if (early_stop_patience < 1 || early_stop_patience >= max_epochs)
            throw ArgumentError("finetune: early_stop_patience must be in [1, max_epochs)");
        if (batch_size < 1) throw ArgumentError("finetune: batch_size must be >= 1");
    }
};

/// Mean |pred - label| of the estimator over `xs`, in BPM.
inline double estimator_mae(const PulseModel<float>& model, const std::vector<Mat<float>>& xs,
                            const std::vector<float>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        s += std::abs(static_cast<double>(model.predict(xs[i])) - labels[i]);
    return s / static_cast<double>(xs.size());
}

/// Batch MAE and its gradient; d|p - y|/dp = sign(p - y) / B.
inline double estimator_batch_grad(const PulseModel<float>& model, const std::vector<Mat<float>>& xs,
                                   const std::vector<float>& labels, std::span<const std::size_t> batch,
                                   nn::Grads<float>& g) {
    nn::zero(g);
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    double loss = 0.0;
    PulseModel<float>::EstimatorCache cache;
    for (auto i : batch) {
        const float p = model.forward_estimator(xs[i], cache);
        const float err = p - labels[i];
        loss += std::abs(static_cast<double>(err));
        const float sign = err > 0.0f ? 1.0f : (err < 0.0f ? -1.0f : 0.0f);
        model.backward_estimator(cache, sign * inv_b, g);
    }
    return loss / static_cast<double>(batch.size());
}

/// Supervised MAE training of the estimator for one test subject. With
/// init = Pretrained the encoder starts from the autoencoder checkpoint.
inline TrainResult finetune(const FoldAssignment& entry, const Checkpoint* pretrained,
                            const FinetuneConfig& cfg, const WindowedDataset& data,
                            ModelConfig model_cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    model_cfg.variant = Variant::Estimator;
    if (!data.normalized || !data.stats) throw StateError("finetune: data must be z-score normalized");
    const Provenance want =
        cfg.init == InitMode::Pretrained ? Provenance::PretrainCorpus : Provenance::TrainSplit;
    if (data.stats->provenance != want)
        throw StateError(std::string("finetune: data normalized with ") +
                         std::string(to_string(data.stats->provenance)) + " statistics, init mode needs " +
                         std::string(to_string(want)));
    if (cfg.init == InitMode::Pretrained) {
        if (!pretrained) throw ArgumentError("finetune: init=pretrained needs a checkpoint");
        if (pretrained->meta.stats != data.stats)
            throw StateError("finetune: data statistics differ from the pre-training checkpoint's");
    }
    if (entry.val.empty()) throw ArgumentError("finetune: validation subject set is empty");

    const std::set<std::string> train_set(entry.train.begin(), entry.train.end());
    const std::set<std::string> val_set(entry.val.begin(), entry.val.end());
    if (train_set.count(entry.test) || val_set.count(entry.test))
        throw ArgumentError("finetune: test subject " + entry.test + " is also in train/val");
    for (const auto& v : val_set)
        if (train_set.count(v)) throw ArgumentError("finetune: subject " + v + " is in both train and val");

    std::vector<Mat<float>> xs, val_xs;
    std::vector<float> labels, val_labels;
    std::vector<std::string> owners;
    for (const auto& w : data.windows) {
        const bool tr = train_set.count(w.subject_id) > 0, va = val_set.count(w.subject_id) > 0;
        if (!tr && !va) continue;
        if (!w.label) throw ArgumentError("finetune: window of subject " + w.subject_id + " has no label");
        if (tr) {
            xs.push_back(detail::window_matrix(w));
            labels.push_back(*w.label);
            owners.push_back(w.subject_id);
        } else {
            val_xs.push_back(detail::window_matrix(w));
            val_labels.push_back(*w.label);
        }
    }
    if (xs.empty()) throw ArgumentError("finetune: no training windows");
    if (val_xs.empty()) throw ArgumentError("finetune: no validation windows");

    const FlushDenormals ftz;
    const std::uint64_t head_seed = derive_seed(cfg.seed, "finetune.init." + entry.test);
    PulseModel<float> model = cfg.init == InitMode::Pretrained
                                  ? transfer_encoder_weights<float>(*pretrained, model_cfg, head_seed)
                                  : build_estimator<float>(model_cfg, head_seed);
    // Output bias starts at the mean training label so the head begins in BPM range.
    double label_mean = 0.0;
    for (float l : labels) label_mean += l;
    label_mean /= static_cast<double>(labels.size());
    model.params()[model.head_output_bias()](0, 0) = static_cast<float>(label_mean);

    Adam<float> opt(model.params(), {cfg.beta1, cfg.beta2, 1e-8, 0.0});
    auto grads = model.params().zero_grads();
    std::vector<std::size_t> order(xs.size());
    TrainResult result;
    std::vector<Mat<float>> best;
    double best_val = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        CounterRng rng(derive_seed(cfg.seed, "finetune.shuffle." + entry.test), static_cast<std::uint64_t>(epoch));
        shuffle(order, rng);
        double train_sum = 0.0;
        std::size_t nb = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::span<const std::size_t> batch(order.data() + start, end - start);
            for (auto i : batch)
                if (owners[i] == entry.test || !train_set.count(owners[i]))
                    throw TrainingError("finetune: subject leakage, window of " + owners[i] +
                                        " entered a training batch");
            const double loss = estimator_batch_grad(model, xs, labels, batch, grads);
            detail::check_finite(loss, epoch, nb, "finetune");
            opt.step(model.params(), grads, cfg.lr);
            train_sum += loss * static_cast<double>(batch.size());
            ++nb;
        }
        const double val = estimator_mae(model, val_xs, val_labels);
        detail::check_finite(val, epoch, nb, "finetune validation");
        const bool improved = val < best_val;
        if (improved) {
            best_val = val;
            best = detail::snapshot(model.params());
            result.best_epoch = epoch;
        }
        EpochRecord rec{epoch, train_sum / static_cast<double>(xs.size()), val, cfg.lr, improved};
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        result.epochs_run = epoch + 1;
        if (epoch - result.best_epoch >= cfg.early_stop_patience) break;
    }
    detail::restore(model.params(), best);
    CheckpointMeta meta;
    meta.stage = "finetune";
    meta.epoch = result.best_epoch;
    meta.best_val = best_val;
    meta.seed = cfg.seed;
    meta.stats = data.stats;
    meta.extra = {{"test_subject", entry.test},
                  {"train_subjects", entry.train},
                  {"val_subjects", entry.val},
                  {"init", cfg.init == InitMode::Pretrained ? "pretrained" : "random"},
                  {"epochs_run", result.epochs_run}};
    result.checkpoint = make_checkpoint(model, std::move(meta));
    return result;
}

/// One BPM prediction per window, in dataset order.
inline HRSeries predict_series(const Checkpoint& ck, const WindowedDataset& subject_windows) {
    if (!subject_windows.normalized || subject_windows.stats != ck.meta.stats)
        throw StateError("predict_series: window normalization does not match the statistics the "
                         "checkpoint was trained with");
    const auto model = instantiate<float>(ck);
    HRSeries s;
    const auto subjects = subject_windows.subjects();
    s.subject_id = subjects.size() == 1 ? subjects.front() : std::string();
    s.predictions.reserve(subject_windows.size());
    for (const auto& w : subject_windows.windows)
        s.predictions.push_back(model.predict(detail::window_matrix(w)));
    if (subject_windows.all_labeled() && !subject_windows.empty()) {
        std::vector<double> labels;
        for (const auto& w : subject_windows.windows) labels.push_back(*w.label);
        s.labels = std::move(labels);
    }
    return s;
}

/// Windows belonging to the listed subjects, order preserved.
inline WindowedDataset select_subjects(const WindowedDataset& ds, const std::vector<std::string>& ids) {
    const std::set<std::string> keep(ids.begin(), ids.end());
    WindowedDataset out;
    out.stats = ds.stats;
    out.normalized = ds.normalized;
    for (const auto& w : ds.windows)
        if (keep.count(w.subject_id)) out.windows.push_back(w);
    return out;
}

} // namespace enhanceppg
