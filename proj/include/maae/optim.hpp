#pragma once

// Adam with bias correction. State lives outside the tensors; one state
// object per parameter group.

#include <cmath>
#include <vector>

#include "maae/errors.hpp"
#include "maae/io.hpp"
#include "maae/tensor.hpp"

namespace maae {

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v; // first/second moments, one entry per param
    std::size_t t = 0;
    T beta1 = T{0.9};
    T beta2 = T{0.999};
    T eps = T{1e-8};
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<Tensor<T>>& params) {
    AdamState<T> s;
    for (const auto& p : params) {
        s.m.emplace_back(p.numel(), T{0});
        s.v.emplace_back(p.numel(), T{0});
    }
    return s;
}

/// One Adam update over a parameter group, reading each tensor's accumulated
/// gradient. Gradients are left untouched; callers zero them per step.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr) {
    if (params.size() != state.m.size())
        throw ShapeMismatch("adam state covers " + std::to_string(state.m.size()) +
                            " params, got " + std::to_string(params.size()));
    state.t += 1;
    const T bc1 = T{1} - static_cast<T>(std::pow(static_cast<double>(state.beta1),
                                                 static_cast<double>(state.t)));
    const T bc2 = T{1} - static_cast<T>(std::pow(static_cast<double>(state.beta2),
                                                 static_cast<double>(state.t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (p.grad().size() != p.numel())
            throw ShapeMismatch("parameter " + std::to_string(i) + " has no gradient buffer");
        if (state.m[i].size() != p.numel())
            throw ShapeMismatch("adam moment size mismatch at param " + std::to_string(i));
        auto vals = p.values_mut();
        const auto g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
            m[j] = state.beta1 * m[j] + (T{1} - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (T{1} - state.beta2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            vals[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

template <typename T>
std::vector<Tensor<T>> tensors_of(const NamedParams<T>& named) {
    std::vector<Tensor<T>> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

} // namespace maae
