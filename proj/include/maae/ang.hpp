#pragma once

// Adaptive noise generator: a trainable N x C weight matrix that modulates
// Gaussian noise, eps' = A * (W (.) eps), injected as X* = X + eps'. The
// generator is trained adversarially: L_ANG = -lambda_ang * L_e
// + lambda_re * ||W||_2, and only updates W.

#include <cstdint>

#include "maae/errors.hpp"
#include "maae/rng.hpp"
#include "maae/tensor.hpp"

namespace maae {

template <typename T>
struct NoiseParams {
    Tensor<T> weights;      // N x C, trainable
    T intensity = T{0.5};   // A
    std::uint64_t rng_seed = 0;
};

/// W starts at a constant 0.01 so the first reconstruction steps see nearly
/// clean features.
template <typename T>
NoiseParams<T> make_noise_params(std::size_t n, std::size_t c, T intensity, std::uint64_t seed) {
    if (intensity < T{0}) throw ConfigError("noise intensity A must be >= 0");
    NoiseParams<T> p;
    p.weights = Tensor<T>::full({n, c}, T{0.01}, true);
    p.intensity = intensity;
    p.rng_seed = seed;
    return p;
}

/// The Gaussian draw for a given (step, stream) pair; replayable on demand.
template <typename T>
Tensor<T> ang_noise(const NoiseParams<T>& params, std::uint64_t step, std::uint64_t stream) {
    SplitMix64 rng(mix_seed(params.rng_seed, step, stream));
    return Tensor<T>::random_normal(params.weights.shape(), rng, T{0}, T{1});
}

template <typename T>
struct AngSample {
    Tensor<T> x_star;
    Tensor<T> eps_prime;
};

/// x_star = x + A * (W (.) eps) with eps ~ N(0,1) drawn from the stream
/// keyed by (seed, step, stream). eps is a constant: gradients reach W but
/// never x through the noise term.
template <typename T>
AngSample<T> ang_sample(Tape<T>& tape, const NoiseParams<T>& params, const Tensor<T>& x,
                        std::uint64_t step, std::uint64_t stream) {
    if (x.shape() != params.weights.shape())
        throw ShapeMismatch("ang_sample: x " + shape_str(x.shape()) + " vs W " +
                            shape_str(params.weights.shape()));
    auto eps = ang_noise(params, step, stream);
    AngSample<T> out;
    out.eps_prime = scale(tape, hadamard(tape, params.weights, eps), params.intensity);
    out.x_star = add(tape, x, out.eps_prime);
    return out;
}

/// L_ANG = -lambda_ang * L_e + lambda_re * ||w||_2. Used only to update W.
template <typename T>
Tensor<T> ang_loss(Tape<T>& tape, const Tensor<T>& l_e, const Tensor<T>& w, T lambda_ang,
                   T lambda_re) {
    return add(tape, scale(tape, l_e, -lambda_ang), scale(tape, l2_norm(tape, w), lambda_re));
}

} // namespace maae
