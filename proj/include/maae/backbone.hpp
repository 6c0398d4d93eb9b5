#pragma once

// Deterministic toy feature extractor standing in for a pretrained backbone.
// Four conv blocks (3x3, stride 2, bias, leaky-ramp 0.1) with frozen random
// weights derived from a seed; purely a function of (image, seed).

#include <cstdint>
#include <string>

#include "maae/errors.hpp"
#include "maae/image.hpp"
#include "maae/io.hpp"
#include "maae/rng.hpp"
#include "maae/tensor.hpp"

namespace maae {

inline constexpr std::size_t kBackboneChannels[4] = {16, 32, 64, 128};

template <typename T>
struct BackboneWeights {
    std::vector<Tensor<T>> kernels; // stage s: C_s x C_{s-1} x 3 x 3
    std::vector<Tensor<T>> biases;
};

template <typename T>
BackboneWeights<T> make_backbone_weights(std::uint64_t seed) {
    BackboneWeights<T> w;
    std::size_t c_in = 3;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t c_out = kBackboneChannels[s];
        SplitMix64 rng(mix_seed(seed, s));
        const T stddev = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c_in * 9)));
        w.kernels.push_back(Tensor<T>::random_normal({c_out, c_in, 3, 3}, rng, T{0}, stddev));
        w.biases.push_back(Tensor<T>::random_uniform({c_out}, rng, T{-0.1}, T{0.1}));
        c_in = c_out;
    }
    return w;
}

/// Extract the 4-stage feature pyramid from a 3xHxW image. H and W must be
/// divisible by 16. Weights are frozen: no gradients ever flow here.
template <typename T>
FeatureStack<T> toy_backbone_extract(const Tensor<T>& image, std::uint64_t seed) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw BadDims("backbone expects a 3xHxW image, got " + shape_str(image.shape()));
    if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0)
        throw BadDims("image dims must be divisible by 16, got " + shape_str(image.shape()));
    static thread_local std::uint64_t cached_seed = ~std::uint64_t{0};
    static thread_local BackboneWeights<T> cached;
    if (cached_seed != seed) {
        cached = make_backbone_weights<T>(seed);
        cached_seed = seed;
    }
    Tape<T> tape; // stays empty: nothing requires grad
    FeatureStack<T> stack;
    Tensor<T> h = image;
    for (std::size_t s = 0; s < 4; ++s) {
        h = conv2d(tape, h, cached.kernels[s], 2, 1, 1);
        h = add_channel_bias(tape, h, cached.biases[s]);
        h = leaky_ramp(tape, h, T{0.1});
        stack.stages.push_back(h);
    }
    validate_stack(stack);
    return stack;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> v(img.data.begin(), img.data.end());
    return Tensor<T>::from({img.channels, img.height, img.width}, std::move(v));
}

} // namespace maae
