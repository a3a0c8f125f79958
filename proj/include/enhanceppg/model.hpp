#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nn/layers.hpp"

namespace enhanceppg {

using nn::Index;
using nn::Mat;

enum class Variant { Estimator, Autoencoder };

inline std::string_view to_string(Variant v) {
    return v == Variant::Estimator ? "estimator" : "autoencoder";
}

/// Architecture hyperparameters of the PPG+ACC heart-rate estimator and its
/// autoencoder form.
struct ModelConfig {
    std::vector<int> block_channels{32, 48, 64};
    int layers_per_block = 3;
    int kernel_len = 9;
    int dilation = 1;
    int pool_factor = 2;
    int attention_heads = 4;
    int head_hidden = 8;
    int input_length = 256;
    Variant variant = Variant::Estimator;
    bool legacy_dilated = false;   // kernel 5, dilation 2
    bool skip_connections = true;  // autoencoder only

    int effective_kernel() const { return legacy_dilated ? 5 : kernel_len; }
    int effective_dilation() const { return legacy_dilated ? 2 : dilation; }

    int receptive_span() const { return (effective_kernel() - 1) * effective_dilation(); }

    /// Length of the sequences entering the attention module.
    int feature_length() const {
        int len = input_length;
        for (std::size_t i = 0; i < block_channels.size(); ++i) len /= pool_factor;
        return len;
    }

    int feature_dim() const { return block_channels.back(); }

    void validate() const {
        if (block_channels.empty()) throw ArgumentError("model config: block_channels is empty");
        for (int c : block_channels)
            if (c < 1) throw ArgumentError("model config: block_channels must be positive");
        if (layers_per_block < 1) throw ArgumentError("model config: layers_per_block must be >= 1");
        if (effective_kernel() < 1 || effective_dilation() < 1)
            throw ArgumentError("model config: kernel_len and dilation must be >= 1");
        if (pool_factor < 1) throw ArgumentError("model config: pool_factor must be >= 1");
        long divisor = 1;
        for (std::size_t i = 0; i < block_channels.size(); ++i) divisor *= pool_factor;
        if (input_length < 1 || input_length % divisor != 0)
            throw ArgumentError("model config: pool_factor^blocks must divide input_length");
        if (attention_heads < 1 || feature_dim() % attention_heads != 0)
            throw ArgumentError("model config: attention_heads must divide the last block width");
        if (head_hidden < 1) throw ArgumentError("model config: head_hidden must be >= 1");
    }

    /// The dilated baseline: same widths, (5, 2) kernels.
    static ModelConfig legacy() {
        ModelConfig c;
        c.legacy_dilated = true;
        return c;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Fields that must agree for encoder weights to be interchangeable; empty if compatible.
inline std::vector<std::string> encoder_differences(const ModelConfig& a, const ModelConfig& b) {
    std::vector<std::string> diff;
    if (a.block_channels != b.block_channels) diff.push_back("block_channels");
    if (a.layers_per_block != b.layers_per_block) diff.push_back("layers_per_block");
    if (a.effective_kernel() != b.effective_kernel()) diff.push_back("kernel_len");
    if (a.effective_dilation() != b.effective_dilation()) diff.push_back("dilation");
    if (a.legacy_dilated != b.legacy_dilated) diff.push_back("legacy_dilated");
    if (a.pool_factor != b.pool_factor) diff.push_back("pool_factor");
    if (a.attention_heads != b.attention_heads) diff.push_back("attention_heads");
    if (a.input_length != b.input_length) diff.push_back("input_length");
    return diff;
}

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"block_channels", c.block_channels},
            {"layers_per_block", c.layers_per_block},
            {"kernel_len", c.kernel_len},
            {"dilation", c.dilation},
            {"pool_factor", c.pool_factor},
            {"attention_heads", c.attention_heads},
            {"head_hidden", c.head_hidden},
            {"input_length", c.input_length},
            {"variant", to_string(c.variant)},
            {"legacy_dilated", c.legacy_dilated},
            {"skip_connections", c.skip_connections}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.block_channels = j.at("block_channels").get<std::vector<int>>();
    c.layers_per_block = j.at("layers_per_block").get<int>();
    c.kernel_len = j.at("kernel_len").get<int>();
    c.dilation = j.at("dilation").get<int>();
    c.pool_factor = j.at("pool_factor").get<int>();
    c.attention_heads = j.at("attention_heads").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.input_length = j.at("input_length").get<int>();
    const auto v = j.at("variant").get<std::string>();
    if (v != "estimator" && v != "autoencoder") throw ArgumentError("unknown model variant " + v);
    c.variant = v == "estimator" ? Variant::Estimator : Variant::Autoencoder;
    c.legacy_dilated = j.at("legacy_dilated").get<bool>();
    c.skip_connections = j.value("skip_connections", true);
    return c;
}

// ---------------------------------------------------------------------------

namespace detail {

/// A stack of conv blocks (conv+ReLU x layers, then average pooling).
struct ConvStem {
    std::vector<std::vector<nn::Conv1d>> blocks;

    template <class T>
    struct Cache {
        std::vector<std::vector<Mat<T>>> cols;  // im2col per layer
        std::vector<std::vector<Mat<T>>> act;   // ReLU output per layer
        std::vector<Mat<T>> pooled;             // block outputs after pooling
    };

    template <class T>
    static ConvStem create(nn::ParamStore<T>& ps, const std::string& prefix, Index in_channels,
                           const ModelConfig& cfg) {
        ConvStem s;
        Index in = in_channels;
        for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
            std::vector<nn::Conv1d> layers;
            for (int l = 0; l < cfg.layers_per_block; ++l) {
                layers.push_back(nn::Conv1d::create(
                    ps, prefix + ".block" + std::to_string(b) + ".conv" + std::to_string(l), in,
                    cfg.block_channels[b], cfg.effective_kernel(), cfg.effective_dilation(), 2.0));
                in = cfg.block_channels[b];
            }
            s.blocks.push_back(std::move(layers));
        }
        return s;
    }

    template <class T>
    const Mat<T>& forward(const nn::ParamStore<T>& ps, const Mat<T>& x, Index pool,
                          Cache<T>& c) const {
        c.cols.assign(blocks.size(), {});
        c.act.assign(blocks.size(), {});
        c.pooled.assign(blocks.size(), {});
        const Mat<T>* h = &x;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            c.cols[b].resize(blocks[b].size());
            c.act[b].resize(blocks[b].size());
            for (std::size_t l = 0; l < blocks[b].size(); ++l) {
                c.act[b][l] = blocks[b][l].forward(ps, *h, c.cols[b][l]);
                nn::relu_inplace(c.act[b][l]);
                h = &c.act[b][l];
            }
            c.pooled[b] = nn::avg_pool(*h, pool);
            h = &c.pooled[b];
        }
        return c.pooled.back();
    }

    /// dpooled[b] is the gradient arriving at block b's pooled output from
    /// outside the stem (skip connections); the top block's entry carries dy.
    template <class T>
    void backward(const nn::ParamStore<T>& ps, const Cache<T>& c, std::vector<Mat<T>> dpooled,
                  Index pool, nn::Grads<T>& g) const {
        Mat<T> d;
        for (std::size_t bi = blocks.size(); bi-- > 0;) {
            Mat<T> dp = std::move(dpooled[bi]);
            if (d.size() > 0) {
                if (dp.size() > 0) dp += d;
                else dp = std::move(d);
            }
            d = nn::avg_pool_backward(dp, pool);
            for (std::size_t l = blocks[bi].size(); l-- > 0;) {
                d = nn::relu_backward(c.act[bi][l], d);
                const bool first = bi == 0 && l == 0;
                d = blocks[bi][l].backward(ps, c.cols[bi][l], d, g, !first);
            }
        }
    }
};

} // namespace detail

/// Encoder shared by both variants: PPG and ACC conv stems, cross-attention
/// with PPG queries and ACC keys/values, then layer normalization.
struct Encoder {
    detail::ConvStem ppg, acc;
    nn::MultiHeadAttention mhca;
    nn::LayerNorm norm;
    Index pool = 2;

    template <class T>
    struct Cache {
        detail::ConvStem::Cache<T> ppg, acc;
        nn::MultiHeadAttention::Cache<T> attn;
        nn::LayerNorm::Cache<T> norm;
        Mat<T> ppg_in, acc_in;
    };

    template <class T>
    static Encoder create(nn::ParamStore<T>& ps, const ModelConfig& cfg) {
        Encoder e;
        e.pool = cfg.pool_factor;
        e.ppg = detail::ConvStem::create(ps, "enc.ppg", 1, cfg);
        e.acc = detail::ConvStem::create(ps, "enc.acc", 3, cfg);
        e.mhca = nn::MultiHeadAttention::create(ps, "enc.mhca", cfg.feature_dim(), cfg.attention_heads);
        e.norm = nn::LayerNorm::create(ps, "enc.norm", cfg.feature_dim());
        return e;
    }

    /// x: (4, L) -> latent tokens (L / pool^blocks, C_last).
    template <class T>
    Mat<T> forward(const nn::ParamStore<T>& ps, const Mat<T>& x, Cache<T>& c) const {
        if (x.rows() != 4) throw ArgumentError("encoder: input must have 4 channels");
        c.ppg_in = x.topRows(1);
        c.acc_in = x.bottomRows(3);
        const Mat<T> fp = ppg.forward(ps, c.ppg_in, pool, c.ppg).transpose();
        const Mat<T> fa = acc.forward(ps, c.acc_in, pool, c.acc).transpose();
        const Mat<T> a = mhca.forward(ps, fp, fa, c.attn);
        return norm.forward(ps, a, c.norm);
    }

    /// skip_grads[b]: extra gradient on the per-block skip features (mean of both stems).
    template <class T>
    void backward(const nn::ParamStore<T>& ps, const Cache<T>& c, const Mat<T>& dz,
                  const std::vector<Mat<T>>& skip_grads, nn::Grads<T>& g) const {
        const Mat<T> da = norm.backward(ps, c.norm, dz, g);
        auto [dq, dkv] = mhca.backward(ps, c.attn, da, g);
        const std::size_t nb = ppg.blocks.size();
        std::vector<Mat<T>> dp(nb), dacc(nb);
        for (std::size_t b = 0; b < skip_grads.size() && b < nb; ++b) {
            if (skip_grads[b].size() == 0) continue;
            dp[b] = skip_grads[b] * T(0.5);
            dacc[b] = dp[b];
        }
        dp.back() = dp.back().size() ? Mat<T>(dp.back() + dq.transpose()) : Mat<T>(dq.transpose());
        dacc.back() = dacc.back().size() ? Mat<T>(dacc.back() + dkv.transpose()) : Mat<T>(dkv.transpose());
        ppg.backward(ps, c.ppg, std::move(dp), pool, g);
        acc.backward(ps, c.acc, std::move(dacc), pool, g);
    }

    /// Skip feature for block b: average of the two stems' pooled outputs.
    template <class T>
    static Mat<T> skip_feature(const Cache<T>& c, std::size_t b) {
        return (c.ppg.pooled[b] + c.acc.pooled[b]) * T(0.5);
    }
};

/// Regression head: flatten -> dense -> ReLU -> dense(1).
struct RegressionHead {
    nn::Linear fc1, fc2;

    template <class T>
    struct Cache {
        Mat<T> flat, hidden;
    };

    template <class T>
    static RegressionHead create(nn::ParamStore<T>& ps, const ModelConfig& cfg) {
        RegressionHead h;
        const Index flat = static_cast<Index>(cfg.feature_length()) * cfg.feature_dim();
        h.fc1 = nn::Linear::create(ps, "head.fc1", nn::ParamKind::Dense, flat, cfg.head_hidden, 2.0);
        h.fc2 = nn::Linear::create(ps, "head.fc2", nn::ParamKind::Dense, cfg.head_hidden, 1, 1.0);
        return h;
    }

    template <class T>
    T forward(const nn::ParamStore<T>& ps, const Mat<T>& z, Cache<T>& c) const {
        c.flat = Eigen::Map<const Mat<T>>(z.data(), 1, z.size());
        c.hidden = fc1.forward(ps, c.flat);
        nn::relu_inplace(c.hidden);
        return fc2.forward(ps, c.hidden)(0, 0);
    }

    template <class T>
    Mat<T> backward(const nn::ParamStore<T>& ps, const Cache<T>& c, T dy, Index rows, Index cols,
                    nn::Grads<T>& g) const {
        Mat<T> dout(1, 1);
        dout(0, 0) = dy;
        Mat<T> dh = fc2.backward(ps, c.hidden, dout, g);
        dh = nn::relu_backward(c.hidden, dh);
        const Mat<T> dflat = fc1.backward(ps, c.flat, dh, g);
        return Eigen::Map<const Mat<T>>(dflat.data(), rows, cols);
    }
};

/// Decoder: self-attention on the latent tokens, then one up-sampling block
/// per encoder block (transposed conv x2, optional skip concat, conv stack).
struct Decoder {
    nn::MultiHeadAttention attn;
    nn::LayerNorm norm;
    struct Block {
        nn::ConvTranspose1d up;
        int skip_from = -1;  // encoder block whose pooled output is concatenated
        std::vector<nn::Conv1d> convs;
    };
    std::vector<Block> blocks;

    template <class T>
    struct Cache {
        nn::MultiHeadAttention::Cache<T> attn;
        nn::LayerNorm::Cache<T> norm;
        std::vector<Mat<T>> up_in, up_out, cat;
        std::vector<std::vector<Mat<T>>> cols, act;
    };

    template <class T>
    static Decoder create(nn::ParamStore<T>& ps, const ModelConfig& cfg) {
        Decoder d;
        d.attn = nn::MultiHeadAttention::create(ps, "dec.attn", cfg.feature_dim(), cfg.attention_heads);
        d.norm = nn::LayerNorm::create(ps, "dec.norm", cfg.feature_dim());
        const auto& ch = cfg.block_channels;
        const int nb = static_cast<int>(ch.size());
        Index cur = cfg.feature_dim();
        for (int i = 0; i < nb; ++i) {
            const int mirrored = nb - 1 - i;
            const Index target = ch[static_cast<std::size_t>(std::max(mirrored - 1, 0))];
            Block blk;
            const std::string name = "dec.block" + std::to_string(i);
            blk.up = nn::ConvTranspose1d::create(ps, name + ".up", cur, target, cfg.pool_factor,
                                                 cfg.pool_factor);
            Index in = target;
            if (cfg.skip_connections && mirrored >= 1) {
                blk.skip_from = mirrored - 1;
                in += ch[static_cast<std::size_t>(mirrored - 1)];
            }
            for (int l = 0; l < cfg.layers_per_block; ++l) {
                const bool last = i == nb - 1 && l == cfg.layers_per_block - 1;
                const Index out = last ? 4 : target;
                blk.convs.push_back(nn::Conv1d::create(ps, name + ".conv" + std::to_string(l), in,
                                                       out, cfg.effective_kernel(),
                                                       cfg.effective_dilation(), last ? 1.0 : 2.0));
                in = out;
            }
            cur = target;
            d.blocks.push_back(std::move(blk));
        }
        return d;
    }

    template <class T>
    Mat<T> forward(const nn::ParamStore<T>& ps, const Mat<T>& z,
                   const Encoder::Cache<T>& enc, Cache<T>& c) const {
        const Mat<T> a = attn.forward(ps, z, z, c.attn);
        Mat<T> h = norm.forward(ps, a, c.norm).transpose();
        const std::size_t nb = blocks.size();
        c.up_in.assign(nb, {});
        c.up_out.assign(nb, {});
        c.cat.assign(nb, {});
        c.cols.assign(nb, {});
        c.act.assign(nb, {});
        for (std::size_t i = 0; i < nb; ++i) {
            const Block& blk = blocks[i];
            c.up_in[i] = std::move(h);
            c.up_out[i] = blk.up.forward(ps, c.up_in[i]);
            nn::relu_inplace(c.up_out[i]);
            if (blk.skip_from >= 0) {
                const Mat<T> skip = Encoder::skip_feature(enc, static_cast<std::size_t>(blk.skip_from));
                c.cat[i].resize(c.up_out[i].rows() + skip.rows(), c.up_out[i].cols());
                c.cat[i] << c.up_out[i], skip;
            } else {
                c.cat[i] = c.up_out[i];
            }
            c.cols[i].resize(blk.convs.size());
            c.act[i].resize(blk.convs.size());
            const Mat<T>* in = &c.cat[i];
            for (std::size_t l = 0; l < blk.convs.size(); ++l) {
                c.act[i][l] = blk.convs[l].forward(ps, *in, c.cols[i][l]);
                const bool last = i == nb - 1 && l == blk.convs.size() - 1;
                if (!last) nn::relu_inplace(c.act[i][l]);
                in = &c.act[i][l];
            }
            h = *in;
        }
        return h;
    }

    /// Returns (d latent, per-encoder-block skip gradients).
    template <class T>
    std::pair<Mat<T>, std::vector<Mat<T>>> backward(const nn::ParamStore<T>& ps, const Cache<T>& c,
                                                    const Mat<T>& dout, nn::Grads<T>& g) const {
        const std::size_t nb = blocks.size();
        std::vector<Mat<T>> skip_grads(nb);
        Mat<T> d = dout;
        for (std::size_t i = nb; i-- > 0;) {
            const Block& blk = blocks[i];
            for (std::size_t l = blk.convs.size(); l-- > 0;) {
                const bool last = i == nb - 1 && l == blk.convs.size() - 1;
                if (!last) d = nn::relu_backward(c.act[i][l], d);
                d = blk.convs[l].backward(ps, c.cols[i][l], d, g);
            }
            const Index up_ch = c.up_out[i].rows();
            if (blk.skip_from >= 0) {
                skip_grads[static_cast<std::size_t>(blk.skip_from)] = d.bottomRows(d.rows() - up_ch);
                d = Mat<T>(d.topRows(up_ch));
            }
            d = nn::relu_backward(c.up_out[i], d);
            d = blk.up.backward(ps, c.up_in[i], d, g);
        }
        const Mat<T> da = norm.backward(ps, c.norm, Mat<T>(d.transpose()), g);
        auto [dq, dkv] = attn.backward(ps, c.attn, da, g);
        return {Mat<T>(dq + dkv), std::move(skip_grads)};
    }
};

/// Per-layer accounting row.
struct LayerInfo {
    std::string name;
    std::string type;
    std::string output_shape;
    long long params = 0;
    long long macs = 0;
};

/// The heart-rate estimator (variant Estimator) or its autoencoder form.
template <class T>
class PulseModel {
public:
    struct EstimatorCache {
        Encoder::Cache<T> enc;
        RegressionHead::Cache<T> head;
        Mat<T> latent;
    };
    struct AutoencoderCache {
        Encoder::Cache<T> enc;
        Decoder::Cache<T> dec;
        Mat<T> latent;
    };

    PulseModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        encoder_ = Encoder::create(params_, cfg_);
        if (cfg_.variant == Variant::Estimator) head_ = RegressionHead::create(params_, cfg_);
        else decoder_ = Decoder::create(params_, cfg_);
        params_.initialize(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const nn::ParamStore<T>& params() const { return params_; }

    void check_input(const Mat<T>& x) const {
        if (x.rows() != 4 || x.cols() != cfg_.input_length)
            throw ArgumentError("model input must be 4 x " + std::to_string(cfg_.input_length) +
                                ", got " + std::to_string(x.rows()) + " x " +
                                std::to_string(x.cols()));
    }

    /// Latent tokens (feature_length x feature_dim) after attention + normalization.
    Mat<T> encode(const Mat<T>& x) const {
        check_input(x);
        Encoder::Cache<T> c;
        return encoder_.forward(params_, x, c);
    }

    T forward_estimator(const Mat<T>& x, EstimatorCache& c) const {
        require(Variant::Estimator);
        check_input(x);
        c.latent = encoder_.forward(params_, x, c.enc);
        return head_.forward(params_, c.latent, c.head);
    }

    void backward_estimator(const EstimatorCache& c, T dy, nn::Grads<T>& g) const {
        const Mat<T> dz = head_.backward(params_, c.head, dy, c.latent.rows(), c.latent.cols(), g);
        encoder_.backward(params_, c.enc, dz, {}, g);
    }

    Mat<T> forward_autoencoder(const Mat<T>& x, AutoencoderCache& c) const {
        require(Variant::Autoencoder);
        check_input(x);
        c.latent = encoder_.forward(params_, x, c.enc);
        return decoder_.forward(params_, c.latent, c.enc, c.dec);
    }

    void backward_autoencoder(const AutoencoderCache& c, const Mat<T>& dout, nn::Grads<T>& g) const {
        auto [dz, skips] = decoder_.backward(params_, c.dec, dout, g);
        encoder_.backward(params_, c.enc, dz, skips, g);
    }

    T predict(const Mat<T>& x) const {
        EstimatorCache c;
        return forward_estimator(x, c);
    }

    Mat<T> reconstruct(const Mat<T>& x) const {
        AutoencoderCache c;
        return forward_autoencoder(x, c);
    }

    std::vector<T> predict_batch(const std::vector<Mat<T>>& xs) const {
        std::vector<T> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(predict(x));
        return out;
    }

    std::vector<Mat<T>> reconstruct_batch(const std::vector<Mat<T>>& xs) const {
        std::vector<Mat<T>> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(reconstruct(x));
        return out;
    }

    /// Re-draws the regression head only.
    void reinitialize_head(std::uint64_t seed) {
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_.entry(i).name.rfind("head.", 0) == 0) params_.initialize_entry(i, seed);
    }

    std::size_t head_output_bias() const { return head_.fc2.b; }

    std::vector<LayerInfo> describe() const;

private:
    void require(Variant v) const {
        if (cfg_.variant != v)
            throw ArgumentError("model variant is " + std::string(to_string(cfg_.variant)) +
                                ", operation needs " + std::string(to_string(v)));
    }

    ModelConfig cfg_;
    nn::ParamStore<T> params_;
    Encoder encoder_;
    RegressionHead head_;
    Decoder decoder_;
};

namespace detail {
inline std::string shape(long c, long l) { return "(" + std::to_string(c) + ", " + std::to_string(l) + ")"; }
} // namespace detail

/// Analytic per-layer parameter and multiply-accumulate counts for one window.
inline std::vector<LayerInfo> describe_layers(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<LayerInfo> rows;
    const long k = cfg.effective_kernel();
    const long pool = cfg.pool_factor;
    for (const auto& [stem, in0] : {std::pair<std::string, long>{"enc.ppg", 1}, {"enc.acc", 3}}) {
        long in = in0, len = cfg.input_length;
        for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
            const long out = cfg.block_channels[b];
            for (int l = 0; l < cfg.layers_per_block; ++l) {
                rows.push_back({stem + ".block" + std::to_string(b) + ".conv" + std::to_string(l),
                                "conv1d k=" + std::to_string(k) + " d=" + std::to_string(cfg.effective_dilation()),
                                detail::shape(out, len), in * out * k + out, in * out * k * len});
                in = out;
            }
            len /= pool;
            rows.push_back({stem + ".block" + std::to_string(b) + ".pool", "avg_pool",
                            detail::shape(out, len), 0, 0});
        }
    }
    const long d = cfg.feature_dim(), lf = cfg.feature_length();
    const long attn_params = 4 * (d * d + d);
    const long attn_macs = lf * d * d + 2 * lf * d * d + 2 * lf * lf * d + lf * d * d;
    rows.push_back({"enc.mhca", "cross_attention h=" + std::to_string(cfg.attention_heads),
                    detail::shape(lf, d), attn_params, attn_macs});
    rows.push_back({"enc.norm", "layer_norm", detail::shape(lf, d), 2 * d, 0});
    if (cfg.variant == Variant::Estimator) {
        const long flat = lf * d, hid = cfg.head_hidden;
        rows.push_back({"head.fc1", "dense", detail::shape(1, hid), flat * hid + hid, flat * hid});
        rows.push_back({"head.fc2", "dense", detail::shape(1, 1), hid + 1, hid});
        return rows;
    }
    rows.push_back({"dec.attn", "self_attention h=" + std::to_string(cfg.attention_heads),
                    detail::shape(lf, d), attn_params, attn_macs});
    rows.push_back({"dec.norm", "layer_norm", detail::shape(lf, d), 2 * d, 0});
    const auto& ch = cfg.block_channels;
    const long nb = static_cast<long>(ch.size());
    long cur = d, len = lf;
    for (long i = 0; i < nb; ++i) {
        const long mirrored = nb - 1 - i;
        const long target = ch[static_cast<std::size_t>(std::max(mirrored - 1, 0L))];
        const std::string name = "dec.block" + std::to_string(i);
        rows.push_back({name + ".up", "conv_transpose1d s=" + std::to_string(pool),
                        detail::shape(target, len * pool), cur * target * pool + target,
                        cur * target * pool * len});
        len *= pool;
        long in = target;
        if (cfg.skip_connections && mirrored >= 1) in += ch[static_cast<std::size_t>(mirrored - 1)];
        for (int l = 0; l < cfg.layers_per_block; ++l) {
            const bool last = i == nb - 1 && l == cfg.layers_per_block - 1;
            const long out = last ? 4 : target;
            rows.push_back({name + ".conv" + std::to_string(l), "conv1d k=" + std::to_string(k),
                            detail::shape(out, len), in * out * k + out, in * out * k * len});
            in = out;
        }
        cur = target;
    }
    return rows;
}

template <class T>
std::vector<LayerInfo> PulseModel<T>::describe() const {
    return describe_layers(cfg_);
}

/// Exact trainable scalar count.
template <class T>
long long count_params(const PulseModel<T>& model) {
    return static_cast<long long>(model.params().scalar_count());
}

/// Multiply-accumulates for one forward pass on a 4 x input_length window.
template <class T>
long long count_macs(const PulseModel<T>& model, std::array<int, 2> input_shape = {4, 0}) {
    ModelConfig cfg = model.config();
    if (input_shape[1] > 0) cfg.input_length = input_shape[1];
    if (input_shape[0] != 4) throw ArgumentError("count_macs: input must have 4 channels");
    long long total = 0;
    for (const auto& row : describe_layers(cfg)) total += row.macs;
    return total;
}

template <class T>
PulseModel<T> build_estimator(ModelConfig cfg, std::uint64_t seed) {
    if (cfg.variant != Variant::Estimator)
        throw ArgumentError("build_estimator: config variant must be estimator");
    return PulseModel<T>(std::move(cfg), seed);
}

template <class T>
PulseModel<T> build_autoencoder(ModelConfig cfg, std::uint64_t seed) {
    if (cfg.variant != Variant::Autoencoder)
        throw ArgumentError("build_autoencoder: config variant must be autoencoder");
    return PulseModel<T>(std::move(cfg), seed);
}

/// Mean squared error over batch, channels and time.
template <class T>
T mse_multimodal(const std::vector<Mat<T>>& recon, const std::vector<Mat<T>>& target) {
    if (recon.size() != target.size() || recon.empty())
        throw ArgumentError("mse_multimodal: batch sizes differ or are empty");
    T sum = 0;
    Index count = 0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        if (recon[i].rows() != target[i].rows() || recon[i].cols() != target[i].cols())
            throw ArgumentError("mse_multimodal: shape mismatch");
        sum += (recon[i] - target[i]).squaredNorm();
        count += recon[i].size();
    }
    return sum / static_cast<T>(count);
}

} // namespace enhanceppg
