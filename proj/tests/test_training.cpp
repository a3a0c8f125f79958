#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include <enhanceppg/finetune.hpp>
#include <enhanceppg/pretrain.hpp>
#include <enhanceppg/synthetic.hpp>

#include "support.hpp"

using namespace enhanceppg;
using namespace testsupport;

namespace {

WindowedDataset tone_subjects(int n_subjects, std::size_t per_subject, std::uint64_t seed, bool labeled = true) {
    std::vector<WindowedDataset> parts;
    for (int s = 1; s <= n_subjects; ++s) {
        ToneCorpusOptions opt;
        opt.windows_per_subject = per_subject;
        opt.labeled = labeled;
        parts.push_back(synthetic_tone_windows("S" + std::to_string(s), opt, seed + static_cast<std::uint64_t>(s)));
    }
    return concat(parts);
}

WindowedDataset normalized(WindowedDataset ds, Provenance p) {
    const auto stats = compute_norm_stats(ds, p);
    return apply_zscore(std::move(ds), stats);
}

PretrainConfig quick_pretrain(int epochs) {
    PretrainConfig c;
    c.max_epochs = epochs;
    c.batch_size = 8;
    c.seed = 3;
    return c;
}

FinetuneConfig quick_finetune(int epochs, InitMode init) {
    FinetuneConfig c;
    c.max_epochs = epochs;
    c.early_stop_patience = epochs - 1;
    c.batch_size = 16;
    c.seed = 5;
    c.init = init;
    return c;
}

const FoldAssignment kEntry{{"S1", "S2"}, {"S3"}, "S4"};

} // namespace

TEST(Scheduler, ConstantWhileImproving) {
    SchedulerState s{1e-3, 5, 500, std::nullopt};
    std::vector<double> h;
    for (int e = 0; e < 40; ++e) {
        h.push_back(1.0 / (1.0 + e));
        EXPECT_DOUBLE_EQ(scheduler_step(s, h), 1e-3);
    }
    EXPECT_FALSE(s.decay_start);
}

TEST(Scheduler, CosineAfterPlateau) {
    SchedulerState s{1e-3, 5, 500, std::nullopt};
    std::vector<double> h;
    for (int e = 0; e <= 5; ++e) h.push_back(10.0 - e);  // best at epoch 5
    for (int e = 6; e <= 9; ++e) {
        h.push_back(7.0);
        EXPECT_DOUBLE_EQ(scheduler_step(s, h), 1e-3) << e;
    }
    h.push_back(7.0);  // epoch 10 is the fifth epoch without improvement
    scheduler_step(s, h);
    ASSERT_TRUE(s.decay_start);
    EXPECT_EQ(*s.decay_start, 10);
    // T_decay = 500 - 10 = 490; t counts epochs since the plateau
    while (h.size() < 10 + 245) h.push_back(0.5);  // later improvement does not reset the decay
    EXPECT_NEAR(scheduler_step(s, h), 5e-4, 1e-15);
    while (h.size() < 500) h.push_back(0.5);
    EXPECT_NEAR(scheduler_step(s, h), 0.0, 1e-18);
    EXPECT_DOUBLE_EQ(cosine_decay_lr(1e-3, 0, 100), 1e-3);
}

TEST(Optim, AdamFirstStepMovesBySignTimesLr) {
    nn::ParamStore<double> ps;
    ps.add("w", nn::ParamKind::Dense, 1, 3, nn::Init::Ones);
    ps.initialize(0);
    auto g = ps.zero_grads();
    g[0] << 0.5, -2.0, 0.0;
    Adam<double> opt(ps, {0.9, 0.999, 1e-8, 0.0});
    opt.step(ps, g, 0.1);
    EXPECT_NEAR(ps[0](0, 0), 0.9, 1e-6);
    EXPECT_NEAR(ps[0](0, 1), 1.1, 1e-6);
    EXPECT_DOUBLE_EQ(ps[0](0, 2), 1.0);
    // decoupled weight decay shrinks by lr * wd even at zero gradient
    Adam<double> wd(ps, {0.9, 0.95, 1e-8, 0.01});
    const double before = ps[0](0, 2);
    wd.step(ps, ps.zero_grads(), 0.1);
    EXPECT_NEAR(ps[0](0, 2), before * (1.0 - 0.1 * 0.01), 1e-12);
}

TEST(Pretrain, ValidatesInputs) {
    auto corpus = normalized(tone_subjects(1, 16, 1, false), Provenance::PretrainCorpus);
    const auto ae = small_config(Variant::Autoencoder);
    EXPECT_THROW(pretrain(WindowedDataset{}, quick_pretrain(1), ae), ArgumentError);
    EXPECT_THROW(pretrain(normalized(tone_subjects(1, 16, 1), Provenance::TrainSplit), quick_pretrain(1), ae),
                 StateError);
    EXPECT_THROW(pretrain(tone_subjects(1, 16, 1), quick_pretrain(1), ae), StateError);
    EXPECT_THROW(pretrain(corpus, quick_pretrain(1), small_config()), ArgumentError);
    auto bad = quick_pretrain(1);
    bad.early_stop_patience = bad.plateau_patience;
    EXPECT_THROW(pretrain(corpus, bad, ae), ArgumentError);
    bad = quick_pretrain(1);
    bad.val_fraction = 0.5;
    EXPECT_THROW(pretrain(corpus, bad, ae), ArgumentError);
}

TEST(Pretrain, LearnsAndKeepsBestCheckpoint) {
    const auto corpus = normalized(tone_subjects(2, 16, 7, false), Provenance::PretrainCorpus);
    const auto cfg = quick_pretrain(8);
    const auto r = pretrain(corpus, cfg, small_config(Variant::Autoencoder));
    ASSERT_EQ(r.log.size(), 8u);
    double best = r.log.front().val_loss;
    for (const auto& e : r.log) best = std::min(best, e.val_loss);
    EXPECT_LT(best, r.log.front().val_loss);
    EXPECT_EQ(r.checkpoint.meta.best_val, best);
    EXPECT_EQ(r.log[static_cast<std::size_t>(r.best_epoch)].val_loss, best);
    EXPECT_NEAR(pretrain_validation_mse(r.checkpoint, corpus, cfg.val_fraction, cfg.seed), best, 1e-6);
    EXPECT_EQ(r.checkpoint.meta.stats, corpus.stats);
    for (const auto& e : r.log) {
        EXPECT_TRUE(std::isfinite(e.train_loss));
        EXPECT_GT(e.lr, 0.0);
    }
}

TEST(Pretrain, DeterministicUnderSeed) {
    const auto corpus = normalized(tone_subjects(1, 24, 2, false), Provenance::PretrainCorpus);
    const auto a = pretrain(corpus, quick_pretrain(3), small_config(Variant::Autoencoder));
    const auto b = pretrain(corpus, quick_pretrain(3), small_config(Variant::Autoencoder));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_NEAR(a.log[i].train_loss, b.log[i].train_loss, 1e-6);
        EXPECT_NEAR(a.log[i].val_loss, b.log[i].val_loss, 1e-6);
    }
}

TEST(Pretrain, ConstantZeroCorpusIsLearned) {
    WindowedDataset zeros;
    zeros.windows.resize(40);
    for (auto& w : zeros.windows) w.subject_id = "Z1";
    auto old = set_warning_sink([](const std::string&) {});
    const auto corpus = normalized(zeros, Provenance::PretrainCorpus);
    set_warning_sink(old);
    auto cfg = quick_pretrain(50);
    const auto r = pretrain(corpus, cfg, small_config(Variant::Autoencoder));
    EXPECT_LT(r.checkpoint.meta.best_val, 1e-4);
}

TEST(Pretrain, EarlyStopsOneEpochPastBestWithFrozenWeights) {
    const auto corpus = normalized(tone_subjects(1, 20, 4, false), Provenance::PretrainCorpus);
    auto cfg = quick_pretrain(30);
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    cfg.plateau_patience = 0;
    cfg.early_stop_patience = 1;
    const auto r = pretrain(corpus, cfg, small_config(Variant::Autoencoder));
    EXPECT_EQ(r.best_epoch, 0);
    EXPECT_EQ(r.epochs_run, 2);
    EXPECT_FALSE(r.log.back().improved);
}

TEST(Folds, FifteenSubjectsOverManySeeds) {
    std::vector<std::string> subjects;
    for (int s = 1; s <= 15; ++s) subjects.push_back("S" + std::to_string(s));
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto plan = make_loso_folds(subjects, 4, seed);
        std::vector<std::size_t> sizes;
        std::set<std::string> covered;
        for (const auto& f : plan.folds) {
            sizes.push_back(f.size());
            covered.insert(f.begin(), f.end());
        }
        std::sort(sizes.begin(), sizes.end());
        ASSERT_EQ(sizes, (std::vector<std::size_t>{3, 4, 4, 4})) << seed;
        ASSERT_EQ(covered.size(), 15u);
        ASSERT_EQ(plan.assignments.size(), 15u);
        std::multiset<std::string> tested;
        for (const auto& a : plan.assignments) {
            tested.insert(a.test);
            std::set<std::string> seen{a.test};
            for (const auto& s : a.train) ASSERT_TRUE(seen.insert(s).second) << s;
            for (const auto& s : a.val) ASSERT_TRUE(seen.insert(s).second) << s;
            ASSERT_EQ(seen.size(), 15u);
        }
        for (const auto& s : subjects) ASSERT_EQ(tested.count(s), 1u);
    }
    EXPECT_EQ(to_json(make_loso_folds(subjects, 4, 9)), to_json(fold_plan_from_json(to_json(make_loso_folds(subjects, 4, 9)))));
    EXPECT_NE(to_json(make_loso_folds(subjects, 4, 1)), to_json(make_loso_folds(subjects, 4, 2)));
}

TEST(Folds, Errors) {
    EXPECT_THROW(make_loso_folds({"S1", "S2", "S3"}, 4, 0), ArgumentError);
    EXPECT_THROW(make_loso_folds({"S1", "S1", "S2", "S3"}, 4, 0), ArgumentError);
}

TEST(Finetune, RejectsLeakageAndWrongNormalization) {
    const auto raw = tone_subjects(4, 8, 1);
    const auto split = normalized(raw, Provenance::TrainSplit);
    const auto corpus = normalized(raw, Provenance::PretrainCorpus);
    const auto model = small_config();
    const auto rnd = quick_finetune(2, InitMode::Random);
    EXPECT_THROW(finetune({{"S1", "S4"}, {"S3"}, "S4"}, nullptr, rnd, split, model), ArgumentError);
    EXPECT_THROW(finetune({{"S1", "S3"}, {"S3"}, "S4"}, nullptr, rnd, split, model), ArgumentError);
    EXPECT_THROW(finetune({{"S1"}, {}, "S4"}, nullptr, rnd, split, model), ArgumentError);
    EXPECT_THROW(finetune(kEntry, nullptr, rnd, corpus, model), StateError);
    EXPECT_THROW(finetune(kEntry, nullptr, rnd, raw, model), StateError);
    const auto pre = quick_finetune(2, InitMode::Pretrained);
    EXPECT_THROW(finetune(kEntry, nullptr, pre, corpus, model), ArgumentError);
    const auto ck = make_checkpoint(build_autoencoder<float>(small_config(Variant::Autoencoder), 1), {});
    EXPECT_THROW(finetune(kEntry, &ck, pre, corpus, model), StateError);  // checkpoint carries no stats

    auto unlabeled = raw;
    unlabeled.windows[0].label.reset();  // window of S1
    EXPECT_THROW(finetune(kEntry, nullptr, rnd, normalized(unlabeled, Provenance::TrainSplit), model), ArgumentError);
}

TEST(Finetune, InitModeDeterminesStartingWeights) {
    const auto raw = tone_subjects(4, 8, 2);
    const auto corpus = normalized(raw, Provenance::PretrainCorpus);
    CheckpointMeta meta;
    meta.stats = corpus.stats;
    const auto ck = make_checkpoint(build_autoencoder<float>(small_config(Variant::Autoencoder), 77), meta);
    const auto a = finetune(kEntry, &ck, quick_finetune(2, InitMode::Pretrained), corpus, small_config());
    auto rnd = quick_finetune(2, InitMode::Random);
    const auto b = finetune(kEntry, nullptr, rnd, normalized(raw, Provenance::TrainSplit), small_config());
    EXPECT_NE(a.log.front().val_loss, b.log.front().val_loss);
    EXPECT_EQ(a.checkpoint.meta.extra.at("init"), "pretrained");
    EXPECT_EQ(b.checkpoint.meta.extra.at("test_subject"), "S4");
}

TEST(Finetune, StopsPatienceEpochsAfterBest) {
    const auto data = normalized(tone_subjects(4, 8, 3), Provenance::TrainSplit);
    auto cfg = quick_finetune(40, InitMode::Random);
    cfg.early_stop_patience = 2;
    cfg.lr = 1e-2;
    const auto r = finetune(kEntry, nullptr, cfg, data, small_config());
    ASSERT_GE(r.best_epoch, 0);
    if (r.epochs_run < cfg.max_epochs) EXPECT_EQ(r.epochs_run, r.best_epoch + cfg.early_stop_patience + 1);
    for (int e = r.best_epoch + 1; e < r.epochs_run; ++e) EXPECT_FALSE(r.log[static_cast<std::size_t>(e)].improved);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.log) best = std::min(best, e.val_loss);
    EXPECT_EQ(r.checkpoint.meta.best_val, best);
}

TEST(Finetune, BatchLossIsMeanAbsoluteError) {
    const auto data = normalized(tone_subjects(1, 6, 4), Provenance::TrainSplit);
    const auto model = build_estimator<float>(small_config(), 2);
    std::vector<Mat<float>> xs;
    std::vector<float> labels;
    for (const auto& w : data.windows) {
        xs.push_back(detail::window_matrix(w));
        labels.push_back(*w.label);
    }
    const std::vector<std::size_t> batch{0, 2, 5};
    auto g = model.params().zero_grads();
    const double loss = estimator_batch_grad(model, xs, labels, batch, g);
    double direct = 0.0;
    for (auto i : batch) direct += std::abs(static_cast<double>(model.predict(xs[i])) - labels[i]);
    EXPECT_NEAR(loss, direct / 3.0, 1e-4);
}

TEST(PredictSeries, PerWindowMapWithStatsCheck) {
    const auto data = normalized(tone_subjects(4, 8, 6), Provenance::TrainSplit);
    const auto r = finetune(kEntry, nullptr, quick_finetune(2, InitMode::Random), data, small_config());
    const auto test = select_subjects(data, {"S4"});
    const auto a = predict_series(r.checkpoint, test);
    const auto b = predict_series(r.checkpoint, test);
    ASSERT_EQ(a.predictions.size(), test.size());
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_EQ(a.subject_id, "S4");
    ASSERT_TRUE(a.labels);

    auto reversed = test;
    std::reverse(reversed.windows.begin(), reversed.windows.end());
    const auto c = predict_series(r.checkpoint, reversed);
    for (std::size_t i = 0; i < test.size(); ++i) EXPECT_EQ(c.predictions[i], a.predictions[test.size() - 1 - i]);

    const auto other = normalized(tone_subjects(4, 8, 99), Provenance::TrainSplit);
    EXPECT_THROW(predict_series(r.checkpoint, select_subjects(other, {"S4"})), StateError);
}
