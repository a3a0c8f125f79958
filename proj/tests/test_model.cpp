#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <random>

#include <enhanceppg/checkpoint.hpp>
#include <enhanceppg/model.hpp>

#include "support.hpp"

using namespace enhanceppg;
using namespace testsupport;

namespace {

// Hand-derived accounting for the two-stem encoder, one cross-attention block and the dense head.
struct Accounting {
    long long params = 0, macs = 0;
};

Accounting oracle_accounting(int k) {
    Accounting a;
    for (long cin0 : {1L, 3L}) {
        long cin = cin0, len = 256;
        for (long cout : {32L, 48L, 64L}) {
            for (int l = 0; l < 3; ++l) {
                a.macs += cin * cout * k * len;
                a.params += cin * cout * k + cout;
                cin = cout;
            }
            len /= 2;
        }
    }
    const long d = 64, tokens = 32;
    a.macs += 4 * tokens * d * d + 2 * tokens * tokens * d;  // q, k, v, o projections; scores; weighted sum
    a.params += 4 * (d * d + d) + 2 * d;                     // projections + layer norm
    a.macs += tokens * d * 8 + 8;
    a.params += tokens * d * 8 + 8 + 8 + 1;
    return a;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Picks `per_kind` random scalars from every parameter kind present in the store.
std::vector<std::pair<std::size_t, Index>> sample_weights(const nn::ParamStore<double>& ps, int per_kind, unsigned seed,
                                                          std::map<nn::ParamKind, int>& counts) {
    std::mt19937 gen(seed);
    std::map<nn::ParamKind, std::vector<std::size_t>> by_kind;
    for (std::size_t i = 0; i < ps.size(); ++i) by_kind[ps.entry(i).kind].push_back(i);
    std::vector<std::pair<std::size_t, Index>> out;
    for (const auto& [kind, idx] : by_kind)
        for (int s = 0; s < per_kind; ++s) {
            const std::size_t e = idx[std::uniform_int_distribution<std::size_t>(0, idx.size() - 1)(gen)];
            const Index k = std::uniform_int_distribution<Index>(0, ps[e].size() - 1)(gen);
            out.emplace_back(e, k);
            ++counts[kind];
        }
    return out;
}

// Central differences of `loss` against the analytic gradient `g` at the sampled scalars.
template <class LossFn>
void check_gradients(PulseModel<double>& model, const nn::Grads<double>& g, LossFn loss, unsigned seed,
                     std::map<nn::ParamKind, int>& counts) {
    const double h = 1e-5;
    for (const auto& [e, k] : sample_weights(model.params(), 8, seed, counts)) {
        double& w = model.params()[e].data()[k];
        const double saved = w;
        w = saved + h;
        const double up = loss();
        w = saved - h;
        const double down = loss();
        w = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = g[e].data()[k];
        EXPECT_LT(rel_err(analytic, numeric), 1e-4)
            << model.params().entry(e).name << "[" << k << "] analytic " << analytic << " numeric " << numeric;
    }
}

} // namespace

TEST(Model, ShapesAndVariantChecks) {
    const auto est = build_estimator<float>(ModelConfig{}, 1);
    const Mat<float> x = random_input<float>(4, 256, 3);
    EXPECT_TRUE(std::isfinite(est.predict(x)));
    const auto z = est.encode(x);
    EXPECT_EQ(z.rows(), 32);
    EXPECT_EQ(z.cols(), 64);
    EXPECT_THROW(est.predict(random_input<float>(4, 128, 3)), ArgumentError);
    EXPECT_THROW(est.reconstruct(x), ArgumentError);

    ModelConfig ac;
    ac.variant = Variant::Autoencoder;
    const auto ae = build_autoencoder<float>(ac, 1);
    const auto r = ae.reconstruct(x);
    EXPECT_EQ(r.rows(), 4);
    EXPECT_EQ(r.cols(), 256);
    EXPECT_THROW(ae.predict(x), ArgumentError);
    EXPECT_THROW(build_estimator<float>(ac, 1), ArgumentError);
}

TEST(Model, AccountingMatchesHandDerivation) {
    const auto def = oracle_accounting(9);
    const auto est = build_estimator<float>(ModelConfig{}, 0);
    EXPECT_EQ(count_params(est), def.params);
    EXPECT_EQ(count_macs(est, {4, 256}), def.macs);
    EXPECT_EQ(def.params, 385393);
    EXPECT_EQ(def.macs, 37535752);

    // the legacy (kernel 5, dilation 2) stem costs 5/9 of the stem MACs and sees the same span
    const auto leg = oracle_accounting(5);
    const auto legacy = build_estimator<float>(ModelConfig::legacy(), 0);
    EXPECT_EQ(count_params(legacy), leg.params);
    EXPECT_EQ(count_macs(legacy, {4, 256}), leg.macs);
    EXPECT_EQ(ModelConfig{}.receptive_span(), ModelConfig::legacy().receptive_span());
}

TEST(Model, DescribedParamsEqualAllocatedParams) {
    for (auto cfg : {ModelConfig{}, ModelConfig::legacy(), tiny_config(), small_config(Variant::Autoencoder),
                     tiny_config(Variant::Autoencoder)}) {
        for (bool skips : {true, false}) {
            cfg.skip_connections = skips;
            const PulseModel<float> m(cfg, 0);
            long long described = 0;
            for (const auto& row : m.describe()) described += row.params;
            EXPECT_EQ(described, count_params(m)) << to_json(cfg).dump();
        }
    }
}

TEST(Model, InitializationIsSeeded) {
    const auto a = build_estimator<float>(tiny_config(), 5);
    const auto b = build_estimator<float>(tiny_config(), 5);
    const auto c = build_estimator<float>(tiny_config(), 6);
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        EXPECT_EQ(a.params()[i], b.params()[i]);
        differs = differs || a.params()[i] != c.params()[i];
    }
    EXPECT_TRUE(differs);
}

TEST(GradCheck, EstimatorAbsoluteError) {
    auto model = build_estimator<double>(tiny_config(), 11);
    jitter_params(model.params(), 1);
    const std::vector<Mat<double>> xs = {random_input<double>(4, 32, 1), random_input<double>(4, 32, 2)};
    std::vector<double> ys;
    for (const auto& x : xs) ys.push_back(model.predict(x) - 5.0);  // keeps the sign of the residual fixed
    auto loss = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) s += std::abs(model.predict(xs[i]) - ys[i]);
        return s / static_cast<double>(xs.size());
    };
    auto g = model.params().zero_grads();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        PulseModel<double>::EstimatorCache c;
        const double y = model.forward_estimator(xs[i], c);
        model.backward_estimator(c, (y > ys[i] ? 1.0 : -1.0) / static_cast<double>(xs.size()), g);
    }
    std::map<nn::ParamKind, int> counts;
    check_gradients(model, g, loss, 21, counts);
    EXPECT_GE(counts[nn::ParamKind::Conv], 1);
    EXPECT_GE(counts[nn::ParamKind::Attention], 1);
    EXPECT_GE(counts[nn::ParamKind::Dense], 1);
    int total = 0;
    for (const auto& [_, n] : counts) total += n;
    EXPECT_GE(total, 20);
}

TEST(GradCheck, AutoencoderSquaredError) {
    for (bool skips : {true, false}) {
        auto cfg = tiny_config(Variant::Autoencoder);
        cfg.skip_connections = skips;
        auto model = build_autoencoder<double>(cfg, 12);
        jitter_params(model.params(), 2);
        const std::vector<Mat<double>> xs = {random_input<double>(4, 32, 4), random_input<double>(4, 32, 5)};
        auto loss = [&] { return mse_multimodal(model.reconstruct_batch(xs), xs); };
        auto g = model.params().zero_grads();
        const double denom = static_cast<double>(xs.size() * 4 * 32);
        for (const auto& x : xs) {
            PulseModel<double>::AutoencoderCache c;
            const Mat<double> r = model.forward_autoencoder(x, c);
            model.backward_autoencoder(c, (2.0 / denom) * (r - x), g);
        }
        std::map<nn::ParamKind, int> counts;
        check_gradients(model, g, loss, skips ? 31 : 32, counts);
        EXPECT_GE(counts[nn::ParamKind::ConvTranspose], 1);
        EXPECT_GE(counts[nn::ParamKind::Norm], 1);
    }
}

TEST(Transfer, EncoderActivationsAreBitwiseIdentical) {
    const auto ae = build_autoencoder<float>(small_config(Variant::Autoencoder), 7);
    const auto ck = make_checkpoint(ae, {});
    const auto est = transfer_encoder_weights<float>(ck, small_config(), 99);
    const Mat<float> x = random_input<float>(4, 256, 8);
    const Mat<float> za = ae.encode(x), ze = est.encode(x);
    ASSERT_EQ(za.size(), ze.size());
    EXPECT_EQ(std::memcmp(za.data(), ze.data(), sizeof(float) * static_cast<std::size_t>(za.size())), 0);
}

TEST(Transfer, IdempotentAndHeadFromSeed) {
    const auto ck = make_checkpoint(build_autoencoder<float>(tiny_config(Variant::Autoencoder), 3), {});
    const auto a = transfer_encoder_weights<float>(ck, tiny_config(), 10);
    const auto b = transfer_encoder_weights<float>(ck, tiny_config(), 10);
    const auto fresh = build_estimator<float>(tiny_config(), 10);
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        EXPECT_EQ(a.params()[i], b.params()[i]);
        const auto& name = a.params().entry(i).name;
        if (name.rfind("enc.", 0) != 0) {
            EXPECT_EQ(a.params()[i], fresh.params()[i]) << name;
            continue;
        }
        const NamedArray* src = ck.find(name);
        ASSERT_NE(src, nullptr) << name;
        for (Index k = 0; k < a.params()[i].size(); ++k)
            ASSERT_EQ(a.params()[i].data()[k], src->data[static_cast<std::size_t>(k)]) << name;
    }
}

TEST(Transfer, RejectsMismatchedEncoders) {
    ModelConfig src = ModelConfig::legacy();
    src.variant = Variant::Autoencoder;
    const auto ck = make_checkpoint(PulseModel<float>(src, 1), {});
    try {
        transfer_encoder_weights<float>(ck, ModelConfig{}, 2);
        FAIL() << "expected IncompatibleError";
    } catch (const IncompatibleError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("kernel_len"), std::string::npos) << msg;
        EXPECT_NE(msg.find("legacy_dilated"), std::string::npos) << msg;
    }
    const auto est_ck = make_checkpoint(build_estimator<float>(ModelConfig{}, 1), {});
    EXPECT_THROW(transfer_encoder_weights<float>(est_ck, ModelConfig{}, 2), IncompatibleError);
}

TEST(Checkpoint, RoundTripAndValidation) {
    const auto model = build_estimator<float>(small_config(), 4);
    CheckpointMeta meta;
    meta.stage = "finetune";
    meta.epoch = 12;
    meta.best_val = 3.25;
    meta.seed = 4;
    NormStats s;
    s.mean = {1, 2, 3, 4};
    s.std = {0.5, 1, 2, 4};
    meta.stats = s;
    meta.extra = {{"test_subject", "S3"}};
    const auto ck = make_checkpoint(model, meta);
    ScratchDir dir("ckpt");
    save_checkpoint(ck, dir / "m.ckpt");
    const auto back = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.meta.epoch, 12);
    EXPECT_EQ(back.meta.best_val, 3.25);
    EXPECT_EQ(back.meta.stats, meta.stats);
    EXPECT_EQ(back.meta.extra, meta.extra);
    const auto re = instantiate<float>(back);
    const Mat<float> x = random_input<float>(4, 256, 1);
    EXPECT_EQ(re.predict(x), model.predict(x));

    auto bytes = serialize_checkpoint(ck);
    bytes.resize(bytes.size() - 16);
    EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
    auto bad = serialize_checkpoint(ck);
    bad[1] = 'Q';
    EXPECT_THROW(deserialize_checkpoint(bad), FormatError);

    auto other = build_estimator<float>(tiny_config(), 1);
    EXPECT_THROW(load_weights(other, ck), IncompatibleError);
}
