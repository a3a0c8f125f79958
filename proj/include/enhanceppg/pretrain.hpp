#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data.hpp"
#include "optim.hpp"
#include "random.hpp"

namespace enhanceppg {

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    bool improved = false;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"train", r.train_loss}, {"val", r.val_loss}, {"lr", r.lr},
            {"improved", r.improved}};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> log;
    int best_epoch = -1;
    int epochs_run = 0;
};

namespace detail {

inline Mat<float> window_matrix(const SignalWindow& w) {
    return Eigen::Map<const Mat<float>>(w.data.data(), kChannels, kWindowLength);
}

inline std::vector<Mat<float>> window_matrices(const WindowedDataset& ds,
                                               const std::vector<std::size_t>& idx) {
    std::vector<Mat<float>> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(window_matrix(ds.windows[i]));
    return out;
}

inline void check_finite(double loss, int epoch, std::size_t batch, const char* what) {
    if (!std::isfinite(loss))
        throw TrainingError(std::string(what) + ": non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch) + "; lower the learning rate or check inputs");
}

inline std::vector<Mat<float>> snapshot(const nn::ParamStore<float>& ps) {
    std::vector<Mat<float>> out;
    for (const auto& e : ps.entries()) out.push_back(e.value);
    return out;
}

inline void restore(nn::ParamStore<float>& ps, const std::vector<Mat<float>>& snap) {
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i] = snap[i];
}

} // namespace detail

struct PretrainConfig {
    int max_epochs = 500;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    int plateau_patience = 5;
    int early_stop_patience = 50;
    int batch_size = 256;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_epochs < 1) throw ArgumentError("pretrain: max_epochs must be >= 1");
        if (lr < 0.0) throw ArgumentError("pretrain: lr must be >= 0");
        if (batch_size < 1) throw ArgumentError("pretrain: batch_size must be >= 1");
        if (plateau_patience < 0) throw ArgumentError("pretrain: plateau_patience must be >= 0");
        if (early_stop_patience <= plateau_patience)
            throw ArgumentError("pretrain: early_stop_patience must exceed plateau_patience");
        if (!(val_fraction > 0.0 && val_fraction < 0.5))
            throw ArgumentError("pretrain: val_fraction must be in (0, 0.5)");
    }
};

/// Window-level random hold-out: returns (train, val) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    std::size_t n, double fraction, std::uint64_t seed) {
    if (n < 2) throw ArgumentError("need at least 2 windows to hold out a validation split");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    CounterRng rng(seed, 0x5EED);
    shuffle(idx, rng);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction)), 1, n - 1);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

/// Mean squared reconstruction error over all samples of `xs`.
inline double reconstruction_mse(const PulseModel<float>& model, const std::vector<Mat<float>>& xs) {
    double sum = 0.0;
    double count = 0.0;
    for (const auto& x : xs) {
        const Mat<float> r = model.reconstruct(x);
        sum += (r - x).cast<double>().squaredNorm();
        count += static_cast<double>(x.size());
    }
    return sum / count;
}

/// One optimizer step's worth of gradient for the reconstruction MSE of a batch.
inline double autoencoder_batch_grad(const PulseModel<float>& model, const std::vector<Mat<float>>& xs,
                                     std::span<const std::size_t> batch, nn::Grads<float>& g) {
    nn::zero(g);
    const double denom = static_cast<double>(batch.size() * static_cast<std::size_t>(xs.front().size()));
    double loss = 0.0;
    PulseModel<float>::AutoencoderCache cache;
    for (auto i : batch) {
        const Mat<float> r = model.forward_autoencoder(xs[i], cache);
        const Mat<float> diff = r - xs[i];
        loss += diff.cast<double>().squaredNorm();
        model.backward_autoencoder(cache, diff * static_cast<float>(2.0 / denom), g);
    }
    return loss / denom;
}

/// Self-supervised reconstruction training of the autoencoder. Keeps the
/// weights with the best validation MSE.
inline TrainResult pretrain(const WindowedDataset& corpus, const PretrainConfig& cfg,
                            ModelConfig model_cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (corpus.empty()) throw ArgumentError("pretrain: empty corpus");
    if (!corpus.normalized || !corpus.stats || corpus.stats->provenance != Provenance::PretrainCorpus)
        throw StateError("pretrain: corpus must be z-scored with pre-training corpus statistics");
    if (model_cfg.variant != Variant::Autoencoder)
        throw ArgumentError("pretrain: model config variant must be autoencoder");
    if (model_cfg.input_length != static_cast<int>(kWindowLength))
        throw ArgumentError("pretrain: model input_length must be 256");

    const FlushDenormals ftz;
    auto model = build_autoencoder<float>(model_cfg, derive_seed(cfg.seed, "pretrain.init"));
    const auto [train_idx, val_idx] = split_validation(corpus.size(), cfg.val_fraction, cfg.seed);
    std::vector<std::size_t> all(corpus.size());
    std::iota(all.begin(), all.end(), 0);
    const auto xs = detail::window_matrices(corpus, all);
    std::vector<Mat<float>> val_xs;
    for (auto i : val_idx) val_xs.push_back(xs[i]);

    Adam<float> opt(model.params(), {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
    SchedulerState sched{cfg.lr, cfg.plateau_patience, cfg.max_epochs, std::nullopt};
    auto grads = model.params().zero_grads();

    TrainResult result;
    std::vector<double> val_history;
    std::vector<Mat<float>> best;
    double best_val = std::numeric_limits<double>::infinity();
    double lr = cfg.lr;
    std::vector<std::size_t> order = train_idx;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        CounterRng rng(derive_seed(cfg.seed, "pretrain.shuffle"), static_cast<std::uint64_t>(epoch));
        order = train_idx;
        shuffle(order, rng);
        double train_sum = 0.0;
        std::size_t nb = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::span<const std::size_t> batch(order.data() + start, end - start);
            const double loss = autoencoder_batch_grad(model, xs, batch, grads);
            detail::check_finite(loss, epoch, nb, "pretrain");
            opt.step(model.params(), grads, lr);
            train_sum += loss * static_cast<double>(batch.size());
            ++nb;
        }
        const double val = reconstruction_mse(model, val_xs);
        detail::check_finite(val, epoch, nb, "pretrain validation");
        const bool improved = val < best_val;
        if (improved) {
            best_val = val;
            best = detail::snapshot(model.params());
            result.best_epoch = epoch;
        }
        val_history.push_back(val);
        EpochRecord rec{epoch, train_sum / static_cast<double>(order.size()), val, lr, improved};
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        result.epochs_run = epoch + 1;
        if (epoch - result.best_epoch >= cfg.early_stop_patience) break;
        lr = scheduler_step(sched, val_history);
    }

    detail::restore(model.params(), best);
    CheckpointMeta meta;
    meta.stage = "pretrain";
    meta.epoch = result.best_epoch;
    meta.best_val = best_val;
    meta.seed = cfg.seed;
    meta.stats = corpus.stats;
    meta.extra = {{"train_windows", train_idx.size()}, {"val_windows", val_idx.size()},
                  {"epochs_run", result.epochs_run}};
    result.checkpoint = make_checkpoint(model, std::move(meta));
    return result;
}

/// Re-evaluates a pretraining checkpoint on the validation split it was selected on.
inline double pretrain_validation_mse(const Checkpoint& ck, const WindowedDataset& corpus,
                                      double val_fraction, std::uint64_t seed) {
    const auto model = instantiate<float>(ck);
    const auto [_, val_idx] = split_validation(corpus.size(), val_fraction, seed);
    return reconstruction_mse(model, detail::window_matrices(corpus, val_idx));
}

} // namespace enhanceppg
