#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "../error.hpp"
#include "../random.hpp"

namespace enhanceppg::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

enum class ParamKind { Conv, ConvTranspose, Attention, Norm, Dense };

inline std::string_view to_string(ParamKind k) {
    switch (k) {
    case ParamKind::Conv: return "conv";
    case ParamKind::ConvTranspose: return "conv_transpose";
    case ParamKind::Attention: return "attention";
    case ParamKind::Norm: return "norm";
    case ParamKind::Dense: return "dense";
    }
    return "?";
}

enum class Init { Zeros, Ones, Uniform };

/// Ordered, named parameter tensors. Layers hold indices into the store, so
/// one store can be shared by reentrant forward passes.
template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        ParamKind kind;
        Init init;
        double fan_in;
        double gain;  // uniform bound = sqrt(3 * gain / fan_in)
        Mat<T> value;
    };

    std::size_t add(std::string name, ParamKind kind, Index rows, Index cols, Init init,
                    double fan_in = 1.0, double gain = 1.0) {
        if (find(name)) throw ArgumentError("duplicate parameter " + name);
        entries_.push_back({std::move(name), kind, init, fan_in, gain, Mat<T>::Zero(rows, cols)});
        return entries_.size() - 1;
    }

    std::optional<std::size_t> find(std::string_view name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return i;
        return std::nullopt;
    }

    std::size_t index_of(std::string_view name) const {
        if (auto i = find(name)) return *i;
        throw ArgumentError("no parameter named " + std::string(name));
    }

    /// Draws every tensor from a counter-based stream keyed by (seed, entry index).
    void initialize(std::uint64_t seed) {
        for (std::size_t i = 0; i < entries_.size(); ++i) initialize_entry(i, seed);
    }

    void initialize_entry(std::size_t i, std::uint64_t seed) {
        auto& e = entries_[i];
        switch (e.init) {
        case Init::Zeros: e.value.setZero(); break;
        case Init::Ones: e.value.setOnes(); break;
        case Init::Uniform: {
            CounterRng rng(seed, i);
            const double bound = std::sqrt(3.0 * e.gain / e.fan_in);
            for (Index k = 0; k < e.value.size(); ++k)
                e.value.data()[k] = static_cast<T>(rng.uniform(-bound, bound));
            break;
        }
        }
    }

    std::size_t size() const { return entries_.size(); }
    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Mat<T>& operator[](std::size_t i) { return entries_[i].value; }
    const Mat<T>& operator[](std::size_t i) const { return entries_[i].value; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
        return n;
    }

    /// Zero gradients shaped like the parameters.
    std::vector<Mat<T>> zero_grads() const {
        std::vector<Mat<T>> g;
        g.reserve(entries_.size());
        for (const auto& e : entries_) g.push_back(Mat<T>::Zero(e.value.rows(), e.value.cols()));
        return g;
    }

private:
    std::vector<Entry> entries_;
};

template <class T>
using Grads = std::vector<Mat<T>>;

template <class T>
void zero(Grads<T>& g) {
    for (auto& m : g) m.setZero();
}

} // namespace enhanceppg::nn
