#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "params.hpp"

namespace enhanceppg::nn {

// Feature maps are (channels, length) for the convolutional parts and
// (tokens, features) for attention and normalization.

/// 1-D convolution, stride 1, "same" zero padding, optional dilation.
/// weight: (out, in * k) with column index ci * k + tap.
struct Conv1d {
    std::size_t w = 0, b = 0;
    Index in = 0, out = 0, k = 1, dilation = 1;

    template <class T>
    static Conv1d create(ParamStore<T>& ps, const std::string& name, Index in, Index out, Index k,
                         Index dilation, double gain) {
        Conv1d c;
        c.in = in;
        c.out = out;
        c.k = k;
        c.dilation = dilation;
        c.w = ps.add(name + ".weight", ParamKind::Conv, out, in * k, Init::Uniform,
                     static_cast<double>(in * k), gain);
        c.b = ps.add(name + ".bias", ParamKind::Conv, out, 1, Init::Zeros);
        return c;
    }

    Index left_pad() const { return dilation * (k - 1) / 2; }

    template <class T>
    void im2col(const Mat<T>& x, Mat<T>& cols) const {
        const Index len = x.cols();
        cols.setZero(in * k, len);
        for (Index ci = 0; ci < in; ++ci)
            for (Index j = 0; j < k; ++j) {
                const Index shift = j * dilation - left_pad();
                const Index t0 = std::max<Index>(0, -shift);
                const Index t1 = std::min<Index>(len, len - shift);
                if (t1 > t0) cols.row(ci * k + j).segment(t0, t1 - t0) = x.row(ci).segment(t0 + shift, t1 - t0);
            }
    }

    /// cols receives the im2col buffer needed by backward().
    template <class T>
    Mat<T> forward(const ParamStore<T>& ps, const Mat<T>& x, Mat<T>& cols) const {
        if (x.rows() != in) throw ArgumentError("conv1d: expected " + std::to_string(in) + " input channels");
        im2col(x, cols);
        Mat<T> y(out, x.cols());
        y.noalias() = ps[w] * cols;
        y.colwise() += ps[b].col(0);
        return y;
    }

    template <class T>
    Mat<T> backward(const ParamStore<T>& ps, const Mat<T>& cols, const Mat<T>& dy, Grads<T>& g,
                    bool need_dx = true) const {
        g[w].noalias() += dy * cols.transpose();
        g[b].col(0) += dy.rowwise().sum();
        if (!need_dx) return {};
        Mat<T> dcols(in * k, dy.cols());
        dcols.noalias() = ps[w].transpose() * dy;
        const Index len = dy.cols();
        Mat<T> dx = Mat<T>::Zero(in, len);
        for (Index ci = 0; ci < in; ++ci)
            for (Index j = 0; j < k; ++j) {
                const Index shift = j * dilation - left_pad();
                const Index t0 = std::max<Index>(0, -shift);
                const Index t1 = std::min<Index>(len, len - shift);
                if (t1 > t0) dx.row(ci).segment(t0 + shift, t1 - t0) += dcols.row(ci * k + j).segment(t0, t1 - t0);
            }
        return dx;
    }

    long long macs(Index len_out) const { return static_cast<long long>(in * out * k * len_out); }
};

/// Transposed 1-D convolution with stride s and kernel k, no padding:
/// L_out = (L_in - 1) * s + k.  weight: (in, out * k).
struct ConvTranspose1d {
    std::size_t w = 0, b = 0;
    Index in = 0, out = 0, k = 2, stride = 2;

    template <class T>
    static ConvTranspose1d create(ParamStore<T>& ps, const std::string& name, Index in, Index out,
                                  Index k, Index stride) {
        ConvTranspose1d c;
        c.in = in;
        c.out = out;
        c.k = k;
        c.stride = stride;
        c.w = ps.add(name + ".weight", ParamKind::ConvTranspose, in, out * k, Init::Uniform,
                     static_cast<double>(in * k) / static_cast<double>(stride), 2.0);
        c.b = ps.add(name + ".bias", ParamKind::ConvTranspose, out, 1, Init::Zeros);
        return c;
    }

    Index output_length(Index len_in) const { return (len_in - 1) * stride + k; }

    template <class T>
    Mat<T> forward(const ParamStore<T>& ps, const Mat<T>& x) const {
        if (x.rows() != in) throw ArgumentError("conv_transpose1d: channel mismatch");
        Mat<T> ycols(out * k, x.cols());
        ycols.noalias() = ps[w].transpose() * x;
        Mat<T> y(out, output_length(x.cols()));
        y.colwise() = ps[b].col(0);
        for (Index co = 0; co < out; ++co)
            for (Index j = 0; j < k; ++j)
                for (Index t = 0; t < x.cols(); ++t) y(co, t * stride + j) += ycols(co * k + j, t);
        return y;
    }

    template <class T>
    Mat<T> backward(const ParamStore<T>& ps, const Mat<T>& x, const Mat<T>& dy, Grads<T>& g) const {
        Mat<T> dycols(out * k, x.cols());
        for (Index co = 0; co < out; ++co)
            for (Index j = 0; j < k; ++j)
                for (Index t = 0; t < x.cols(); ++t) dycols(co * k + j, t) = dy(co, t * stride + j);
        g[w].noalias() += x * dycols.transpose();
        g[b].col(0) += dy.rowwise().sum();
        Mat<T> dx(in, x.cols());
        dx.noalias() = ps[w] * dycols;
        return dx;
    }

    long long macs(Index len_in) const { return static_cast<long long>(in * out * k * len_in); }
};

/// Row-wise affine map: Y = X W^T + b, weight (out, in).
struct Linear {
    std::size_t w = 0, b = 0;
    Index in = 0, out = 0;

    template <class T>
    static Linear create(ParamStore<T>& ps, const std::string& name, ParamKind kind, Index in,
                         Index out, double gain) {
        Linear l;
        l.in = in;
        l.out = out;
        l.w = ps.add(name + ".weight", kind, out, in, Init::Uniform, static_cast<double>(in), gain);
        l.b = ps.add(name + ".bias", kind, 1, out, Init::Zeros);
        return l;
    }

    template <class T>
    Mat<T> forward(const ParamStore<T>& ps, const Mat<T>& x) const {
        if (x.cols() != in) throw ArgumentError("linear: expected " + std::to_string(in) + " features");
        Mat<T> y(x.rows(), out);
        y.noalias() = x * ps[w].transpose();
        y.rowwise() += ps[b].row(0);
        return y;
    }

    template <class T>
    Mat<T> backward(const ParamStore<T>& ps, const Mat<T>& x, const Mat<T>& dy, Grads<T>& g) const {
        g[w].noalias() += dy.transpose() * x;
        g[b].row(0) += dy.colwise().sum();
        Mat<T> dx(x.rows(), in);
        dx.noalias() = dy * ps[w];
        return dx;
    }

    long long macs(Index rows) const { return static_cast<long long>(rows * in * out); }
};

template <class T>
void relu_inplace(Mat<T>& x) {
    x = x.cwiseMax(T(0));
}

/// dy masked by the sign of the ReLU output y.
template <class T>
Mat<T> relu_backward(const Mat<T>& y, const Mat<T>& dy) {
    return (y.array() > T(0)).select(dy, T(0));
}

template <class T>
Mat<T> avg_pool(const Mat<T>& x, Index factor) {
    if (x.cols() % factor != 0) throw ArgumentError("avg_pool: pool factor does not divide length");
    const Index len = x.cols() / factor;
    Mat<T> y = Mat<T>::Zero(x.rows(), len);
    for (Index c = 0; c < x.rows(); ++c)
        for (Index t = 0; t < len; ++t) {
            T s = 0;
            for (Index j = 0; j < factor; ++j) s += x(c, t * factor + j);
            y(c, t) = s / static_cast<T>(factor);
        }
    return y;
}

template <class T>
Mat<T> avg_pool_backward(const Mat<T>& dy, Index factor) {
    Mat<T> dx(dy.rows(), dy.cols() * factor);
    const T scale = T(1) / static_cast<T>(factor);
    for (Index c = 0; c < dy.rows(); ++c)
        for (Index t = 0; t < dy.cols(); ++t)
            for (Index j = 0; j < factor; ++j) dx(c, t * factor + j) = dy(c, t) * scale;
    return dx;
}

/// Normalization over the feature dimension of each token (row).
struct LayerNorm {
    std::size_t gamma = 0, beta = 0;
    Index dim = 0;
    static constexpr double kEps = 1e-5;

    template <class T>
    struct Cache {
        Mat<T> xhat;
        std::vector<T> inv_std;
    };

    template <class T>
    static LayerNorm create(ParamStore<T>& ps, const std::string& name, Index dim) {
        LayerNorm n;
        n.dim = dim;
        n.gamma = ps.add(name + ".gamma", ParamKind::Norm, 1, dim, Init::Ones);
        n.beta = ps.add(name + ".beta", ParamKind::Norm, 1, dim, Init::Zeros);
        return n;
    }

    template <class T>
    Mat<T> forward(const ParamStore<T>& ps, const Mat<T>& x, Cache<T>& cache) const {
        const Index rows = x.rows();
        cache.xhat.resize(rows, dim);
        cache.inv_std.resize(static_cast<std::size_t>(rows));
        Mat<T> y(rows, dim);
        for (Index r = 0; r < rows; ++r) {
            const T mean = x.row(r).mean();
            const T var = (x.row(r).array() - mean).square().mean();
            const T inv = T(1) / std::sqrt(var + static_cast<T>(kEps));
            cache.inv_std[static_cast<std::size_t>(r)] = inv;
            cache.xhat.row(r) = (x.row(r).array() - mean) * inv;
            y.row(r) = cache.xhat.row(r).cwiseProduct(ps[gamma].row(0)) + ps[beta].row(0);
        }
        return y;
    }

    template <class T>
    Mat<T> backward(const ParamStore<T>& ps, const Cache<T>& cache, const Mat<T>& dy,
                    Grads<T>& g) const {
        const Index rows = dy.rows();
        g[gamma].row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
        g[beta].row(0) += dy.colwise().sum();
        Mat<T> dx(rows, dim);
        const T n = static_cast<T>(dim);
        for (Index r = 0; r < rows; ++r) {
            const auto dxhat = dy.row(r).cwiseProduct(ps[gamma].row(0));
            const T sum_dxhat = dxhat.sum();
            const T sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat.row(r)).sum();
            dx.row(r) = (cache.inv_std[static_cast<std::size_t>(r)] / n) *
                        (n * dxhat.array() - sum_dxhat - cache.xhat.row(r).array() * sum_dxhat_xhat);
        }
        return dx;
    }
};

/// Multi-head attention; queries from one token sequence, keys and values
/// from another (the same one for self-attention).
struct MultiHeadAttention {
    Linear q, k, v, o;
    Index dim = 0, heads = 1;

    template <class T>
    struct Cache {
        Mat<T> xq, xkv, Q, K, V, O;
        std::vector<Mat<T>> attn;  // per head, (Lq, Lk)
    };

    template <class T>
    static MultiHeadAttention create(ParamStore<T>& ps, const std::string& name, Index dim,
                                     Index heads) {
        if (heads < 1 || dim % heads != 0)
            throw ArgumentError("attention: head count must divide the feature dimension");
        MultiHeadAttention m;
        m.dim = dim;
        m.heads = heads;
        m.q = Linear::create(ps, name + ".q", ParamKind::Attention, dim, dim, 1.0);
        m.k = Linear::create(ps, name + ".k", ParamKind::Attention, dim, dim, 1.0);
        m.v = Linear::create(ps, name + ".v", ParamKind::Attention, dim, dim, 1.0);
        m.o = Linear::create(ps, name + ".o", ParamKind::Attention, dim, dim, 1.0);
        return m;
    }

    template <class T>
    Mat<T> forward(const ParamStore<T>& ps, const Mat<T>& xq, const Mat<T>& xkv,
                   Cache<T>& c) const {
        c.xq = xq;
        c.xkv = xkv;
        c.Q = q.forward(ps, xq);
        c.K = k.forward(ps, xkv);
        c.V = v.forward(ps, xkv);
        const Index dh = dim / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        c.O.resize(xq.rows(), dim);
        c.attn.resize(static_cast<std::size_t>(heads));
        for (Index h = 0; h < heads; ++h) {
            Mat<T>& a = c.attn[static_cast<std::size_t>(h)];
            a.noalias() = c.Q.middleCols(h * dh, dh) * c.K.middleCols(h * dh, dh).transpose();
            a *= scale;
            for (Index r = 0; r < a.rows(); ++r) {
                const T mx = a.row(r).maxCoeff();
                a.row(r) = (a.row(r).array() - mx).exp();
                a.row(r) /= a.row(r).sum();
            }
            c.O.middleCols(h * dh, dh).noalias() = a * c.V.middleCols(h * dh, dh);
        }
        return o.forward(ps, c.O);
    }

    /// Returns (d xq, d xkv).
    template <class T>
    std::pair<Mat<T>, Mat<T>> backward(const ParamStore<T>& ps, const Cache<T>& c,
                                       const Mat<T>& dy, Grads<T>& g) const {
        const Mat<T> dO = o.backward(ps, c.O, dy, g);
        const Index dh = dim / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        Mat<T> dQ(c.Q.rows(), dim), dK(c.K.rows(), dim), dV(c.V.rows(), dim);
        for (Index h = 0; h < heads; ++h) {
            const Mat<T>& a = c.attn[static_cast<std::size_t>(h)];
            const auto dOh = dO.middleCols(h * dh, dh);
            Mat<T> da(a.rows(), a.cols());
            da.noalias() = dOh * c.V.middleCols(h * dh, dh).transpose();
            dV.middleCols(h * dh, dh).noalias() = a.transpose() * dOh;
            Mat<T> ds(a.rows(), a.cols());
            for (Index r = 0; r < a.rows(); ++r) {
                const T dot = da.row(r).dot(a.row(r));
                ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
            }
            ds *= scale;
            dQ.middleCols(h * dh, dh).noalias() = ds * c.K.middleCols(h * dh, dh);
            dK.middleCols(h * dh, dh).noalias() = ds.transpose() * c.Q.middleCols(h * dh, dh);
        }
        Mat<T> dxq = q.backward(ps, c.xq, dQ, g);
        Mat<T> dxkv = k.backward(ps, c.xkv, dK, g);
        dxkv += v.backward(ps, c.xkv, dV, g);
        return {std::move(dxq), std::move(dxkv)};
    }

    long long macs(Index lq, Index lk) const {
        const long long d = dim;
        return lq * d * d + 2 * lk * d * d + 2 * lq * lk * d + lq * d * d;
    }
};

} // namespace enhanceppg::nn
