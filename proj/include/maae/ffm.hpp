#pragma once

// Feature fusion: iterated (strided conv -> channel concat) over the four
// backbone stages, a dilated convolution over the fused grid, and the
// flattening between grid and token views.

#include <cstddef>
#include <vector>

#include "maae/errors.hpp"
#include "maae/io.hpp"
#include "maae/rng.hpp"
#include "maae/tensor.hpp"

namespace maae {

/// Token matrix X (N x C) plus the grid it was flattened from.
template <typename T>
struct FusedFeature {
    Tensor<T> tokens;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<std::size_t> channel_plan;
};

template <typename T>
struct FfmParams {
    std::vector<Tensor<T>> down_kernels; // step i: C_i x C_i x 3 x 3, stride-2 pad-1
    std::vector<Tensor<T>> down_biases;
    Tensor<T> dc_kernel;                 // C x C x 3 x 3, dilation d, pad d
    Tensor<T> dc_bias;
    int dilation = 4;
};

/// Trainable FFM parameters for a given stage channel plan. Kernels are
/// uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
template <typename T>
FfmParams<T> make_ffm_params(const std::vector<std::size_t>& channel_plan, int dilation,
                             SplitMix64& rng) {
    if (channel_plan.size() != 4) throw ConfigError("channel plan must have 4 stages");
    if (dilation < 1) throw ConfigError("dilation must be >= 1");
    FfmParams<T> p;
    p.dilation = dilation;
    std::size_t c_low = channel_plan[0];
    for (std::size_t s = 1; s < 4; ++s) {
        const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c_low * 9)));
        p.down_kernels.push_back(
            Tensor<T>::random_uniform({c_low, c_low, 3, 3}, rng, -bound, bound, true));
        p.down_biases.push_back(Tensor<T>::random_uniform({c_low}, rng, -bound, bound, true));
        c_low += channel_plan[s];
    }
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c_low * 9)));
    p.dc_kernel = Tensor<T>::random_uniform({c_low, c_low, 3, 3}, rng, -bound, bound, true);
    p.dc_bias = Tensor<T>::random_uniform({c_low}, rng, -bound, bound, true);
    return p;
}

/// Row-major flatten of a C x H x W grid into H*W tokens of C channels.
template <typename T>
Tensor<T> tokens_from_grid(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 3) throw RankError("tokens_from_grid expects CxHxW");
    const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
    auto out = Tensor<T>::zeros({n, c});
    const auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < n; ++i) ov[i * c + ci] = xv[ci * n + i];
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), on = out.node(), c, n] {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t i = 0; i < n; ++i) xn->grad[ci * n + i] += on->grad[i * c + ci];
        });
    }
    return out;
}

template <typename T>
Tensor<T> grid_from_tokens(Tape<T>& tape, const Tensor<T>& x, std::size_t h, std::size_t w) {
    if (x.rank() != 2) throw RankError("grid_from_tokens expects NxC tokens");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (n != h * w)
        throw ShapeMismatch("token count " + std::to_string(n) + " does not match grid " +
                            std::to_string(h) + "x" + std::to_string(w));
    auto out = Tensor<T>::zeros({c, h, w});
    const auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < n; ++i) ov[ci * n + i] = xv[i * c + ci];
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), on = out.node(), c, n] {
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t i = 0; i < n; ++i) xn->grad[i * c + ci] += on->grad[ci * n + i];
        });
    }
    return out;
}

/// One fusion step: downsample the low-level map with a stride-2 conv and
/// stack the high-level map onto its channels. The result becomes the new
/// low-level feature.
template <typename T>
Tensor<T> ffm_downsample_step(Tape<T>& tape, const Tensor<T>& low, const Tensor<T>& high,
                              const Tensor<T>& kernel, const Tensor<T>& bias) {
    if (high.dim(1) * 2 != low.dim(1) || high.dim(2) * 2 != low.dim(2))
        throw ShapeMismatch("high-level dims " + shape_str(high.shape()) +
                            " are not half of low-level " + shape_str(low.shape()));
    auto down = add_channel_bias(tape, conv2d(tape, low, kernel, 2, 1, 1), bias);
    return concat_channels(tape, down, high);
}

/// Full fusion of a 4-stage stack into tokens at the stage-4 grid:
/// three downsample/concat steps, then a channel-preserving dilated conv.
template <typename T>
FusedFeature<T> ffm_fuse(Tape<T>& tape, const FeatureStack<T>& stack, const FfmParams<T>& params) {
    validate_stack(stack);
    Tensor<T> low = stack.stages[0];
    for (std::size_t s = 1; s < 4; ++s)
        low = ffm_downsample_step(tape, low, stack.stages[s], params.down_kernels[s - 1],
                                  params.down_biases[s - 1]);
    auto refined = add_channel_bias(
        tape, conv2d(tape, low, params.dc_kernel, 1, params.dilation, params.dilation),
        params.dc_bias);
    FusedFeature<T> out;
    out.grid_h = refined.dim(1);
    out.grid_w = refined.dim(2);
    for (const auto& st : stack.stages) out.channel_plan.push_back(st.dim(0));
    out.tokens = tokens_from_grid(tape, refined);
    return out;
}

namespace detail {

// Aligned-corners bilinear sample of a single-channel row-major grid.
template <typename T>
T bilinear_at(const T* src, std::size_t h, std::size_t w, double y, double x) {
    const auto y0 = static_cast<std::size_t>(y);
    const auto x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double a = static_cast<double>(src[y0 * w + x0]) * (1 - fx) +
                     static_cast<double>(src[y0 * w + x1]) * fx;
    const double b = static_cast<double>(src[y1 * w + x0]) * (1 - fx) +
                     static_cast<double>(src[y1 * w + x1]) * fx;
    return static_cast<T>(a * (1 - fy) + b * fy);
}

template <typename T>
std::vector<T> bilinear_resize(const T* src, std::size_t h, std::size_t w,
                               std::size_t oh, std::size_t ow) {
    std::vector<T> out(oh * ow);
    const double sy = oh > 1 ? static_cast<double>(h - 1) / static_cast<double>(oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(w - 1) / static_cast<double>(ow - 1) : 0.0;
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
            out[y * ow + x] = bilinear_at(src, h, w, sy * y, sx * x);
    return out;
}

} // namespace detail

/// Ablation fallback for FFM: bilinear-downsample every stage to the stage-4
/// grid and concatenate. No learnable parameters, no dilated conv.
template <typename T>
FusedFeature<T> bilinear_fuse(Tape<T>& tape, const FeatureStack<T>& stack) {
    validate_stack(stack);
    const std::size_t gh = stack.stages[3].dim(1), gw = stack.stages[3].dim(2);
    std::size_t c_total = 0;
    for (const auto& st : stack.stages) c_total += st.dim(0);
    std::vector<T> grid(c_total * gh * gw);
    std::size_t c_off = 0;
    for (const auto& st : stack.stages) {
        const std::size_t c = st.dim(0), h = st.dim(1), w = st.dim(2);
        for (std::size_t ci = 0; ci < c; ++ci) {
            auto plane = detail::bilinear_resize(st.values().data() + ci * h * w, h, w, gh, gw);
            std::copy(plane.begin(), plane.end(), grid.begin() + (c_off + ci) * gh * gw);
        }
        c_off += c;
    }
    FusedFeature<T> out;
    out.grid_h = gh;
    out.grid_w = gw;
    for (const auto& st : stack.stages) out.channel_plan.push_back(st.dim(0));
    out.tokens = tokens_from_grid(tape, Tensor<T>::from({c_total, gh, gw}, std::move(grid)));
    return out;
}

} // namespace maae
