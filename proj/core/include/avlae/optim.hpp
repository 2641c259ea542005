#pragma once

// Adam with bias correction. Each optimizer instance owns the first/second
// moment buffers for a fixed parameter group; the training loop keeps one
// instance per update group so moments never leak across groups.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "avlae/tensor.hpp"

namespace avlae {

template <typename T>
struct AdamConfig {
    T alpha = T(2e-4);
    T beta1 = T(0.5);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
};

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
};

/// One bias-corrected Adam update for a single parameter. grad may be null
/// (treated as all zeros), which leaves a fresh state's parameter unchanged.
template <typename T>
void adam_step(TensorT<T>& param, const T* grad, AdamState<T>& state, const AdamConfig<T>& cfg,
               std::int64_t t) {
    const std::size_t n = param.data.size();
    if (state.m.size() != n) state.m.assign(n, T(0));
    if (state.v.size() != n) state.v.assign(n, T(0));
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t)));
    for (std::size_t i = 0; i < n; ++i) {
        const T g = grad ? grad[i] : T(0);
        state.m[i] = cfg.beta1 * state.m[i] + (T(1) - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (T(1) - cfg.beta2) * g * g;
        const T mhat = state.m[i] / bc1;
        const T vhat = state.v[i] / bc2;
        param.data[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

template <typename T>
class AdamOpt {
public:
    AdamOpt() = default;
    AdamOpt(std::vector<TensorPtr<T>> params, AdamConfig<T> cfg)
        : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

    /// Applies one update from the gradients currently held on the parameters.
    void step() {
        ++t_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            const T* g = p.grad.size() == p.data.size() ? p.grad.data() : nullptr;
            adam_step(p, g, states_[i], cfg_, t_);
        }
    }

    std::int64_t t() const { return t_; }
    void set_t(std::int64_t t) { t_ = t; }
    std::size_t param_count() const { return params_.size(); }
    const std::vector<TensorPtr<T>>& params() const { return params_; }
    AdamState<T>& state(std::size_t i) { return states_[i]; }
    const AdamState<T>& state(std::size_t i) const { return states_[i]; }
    const AdamConfig<T>& config() const { return cfg_; }

private:
    std::vector<TensorPtr<T>> params_;
    std::vector<AdamState<T>> states_;
    AdamConfig<T> cfg_;
    std::int64_t t_ = 0;
};

}  // namespace avlae
