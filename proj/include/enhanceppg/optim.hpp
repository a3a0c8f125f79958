#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "nn/params.hpp"

namespace enhanceppg {

/// Flushes denormal floats to zero while alive. Dying ReLU channels drive
/// weights and gradients into the denormal range, where x86 arithmetic is
/// an order of magnitude slower.
class FlushDenormals {
public:
#if defined(__SSE__)
    FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }  // FTZ | DAZ
    ~FlushDenormals() { _mm_setcsr(saved_); }
#endif
    FlushDenormals(const FlushDenormals&) = delete;
    FlushDenormals& operator=(const FlushDenormals&) = delete;

private:
#if defined(__SSE__)
    unsigned saved_;
#endif
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW) when > 0
};

/// Adam with bias correction; weight decay is applied to the parameters
/// directly (AdamW), not folded into the gradient.
template <class T>
class Adam {
public:
    Adam(const nn::ParamStore<T>& ps, AdamOptions opt) : opt_(opt), m_(ps.zero_grads()), v_(ps.zero_grads()) {}

    void step(nn::ParamStore<T>& ps, const nn::Grads<T>& g, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
        const T decay = static_cast<T>(1.0 - lr * opt_.weight_decay);
        const T step_size = static_cast<T>(lr / c1);
        const T inv_c2 = static_cast<T>(1.0 / std::sqrt(c2));
        const T eps = static_cast<T>(opt_.eps);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto p = ps[i].array();
            auto m = m_[i].array();
            auto v = v_[i].array();
            const auto gi = g[i].array();
            m = b1 * m + (T(1) - b1) * gi;
            v = b2 * v + (T(1) - b2) * gi.square();
            if (opt_.weight_decay > 0.0) p *= decay;
            p -= step_size * m / (v.sqrt() * inv_c2 + eps);
        }
    }

    long steps() const { return t_; }

private:
    AdamOptions opt_;
    nn::Grads<T> m_, v_;
    long t_ = 0;
};

/// lr_base * 0.5 * (1 + cos(pi * t / horizon)), clamped to [0, horizon].
inline double cosine_decay_lr(double base_lr, double t, double horizon) {
    if (horizon <= 0.0) return 0.0;
    const double x = std::clamp(t / horizon, 0.0, 1.0);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

/// Constant learning rate until the validation loss has not improved for
/// `plateau_patience` epochs, then half-cycle cosine decay over the epochs
/// remaining until `max_epochs`. The decay does not reset on later improvement.
struct SchedulerState {
    double base_lr = 1e-3;
    int plateau_patience = 5;
    int max_epochs = 500;
    std::optional<int> decay_start;  // epoch at whose end the plateau was detected
};

/// Index of the first occurrence of the minimum (improvement means strictly lower).
inline std::size_t best_index(std::span<const double> history) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i] < history[best]) best = i;
    return best;
}

/// Learning rate for the epoch following `val_history` (one entry per finished epoch).
inline double scheduler_step(SchedulerState& state, std::span<const double> val_history) {
    if (val_history.empty()) return state.base_lr;
    const int n = static_cast<int>(val_history.size());
    if (!state.decay_start) {
        const int best = static_cast<int>(best_index(val_history));
        if ((n - 1) - best >= state.plateau_patience) state.decay_start = n - 1;
    }
    if (!state.decay_start) return state.base_lr;
    const int start = *state.decay_start;
    return cosine_decay_lr(state.base_lr, n - start, state.max_epochs - start);
}

} // namespace enhanceppg
