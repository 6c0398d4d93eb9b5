#pragma once

// The mixed-attention auto encoder. Each block computes
//     Y = DC( SA(X) + (SA(X^T))^T )
// with single-head scaled dot-product attention on both branches and a
// channel-preserving dilated convolution over the token grid. A residual
// connection is added after every M blocks.

#include <cstdio>
#include <string>
#include <vector>

#include "maae/errors.hpp"
#include "maae/ffm.hpp"
#include "maae/io.hpp"
#include "maae/rng.hpp"
#include "maae/tensor.hpp"

namespace maae {

template <typename T>
struct SaParams {
    Tensor<T> query, key, value, out; // each dim x dim for the branch's token dim
};

template <typename T>
struct BlockParams {
    SaParams<T> spatial;  // projections C x C
    SaParams<T> channel;  // projections N x N (undefined in spatial-only mode)
    Tensor<T> dc_kernel;  // C x C x 3 x 3    (undefined in spatial-only mode)
    Tensor<T> dc_bias;
};

template <typename T>
struct MaaeParams {
    std::vector<BlockParams<T>> blocks;
    std::size_t residual_period = 3; // M
    std::size_t grid_h = 0, grid_w = 0;
    int dilation = 4;
    bool mixed = true; // false: plain spatial self-attention blocks (ablation)
};

namespace detail {

template <typename T>
SaParams<T> make_sa_params(std::size_t dim, SplitMix64& rng) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
    SaParams<T> p;
    p.query = Tensor<T>::random_uniform({dim, dim}, rng, -bound, bound, true);
    p.key = Tensor<T>::random_uniform({dim, dim}, rng, -bound, bound, true);
    p.value = Tensor<T>::random_uniform({dim, dim}, rng, -bound, bound, true);
    // damped output projection: blocks start near zero so the residual
    // connections make the initial network close to the identity
    p.out = Tensor<T>::random_uniform({dim, dim}, rng, -bound / 10, bound / 10, true);
    return p;
}

} // namespace detail

template <typename T>
MaaeParams<T> make_maae_params(std::size_t num_blocks, std::size_t residual_period,
                               std::size_t n_tokens, std::size_t channels,
                               std::size_t grid_h, std::size_t grid_w, int dilation,
                               bool mixed, SplitMix64& rng) {
    if (residual_period < 1) throw ConfigError("residual period M must be >= 1");
    if (dilation < 1) throw ConfigError("dilation must be >= 1");
    if (n_tokens != grid_h * grid_w)
        throw ConfigError("token count does not match the DC grid");
    if (num_blocks % residual_period != 0)
        std::fprintf(stderr,
                     "warning: num_blocks (%zu) is not a multiple of M (%zu); "
                     "the trailing blocks get no residual connection\n",
                     num_blocks, residual_period);
    MaaeParams<T> p;
    p.residual_period = residual_period;
    p.grid_h = grid_h;
    p.grid_w = grid_w;
    p.dilation = dilation;
    p.mixed = mixed;
    const T dc_bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels * 9)));
    for (std::size_t b = 0; b < num_blocks; ++b) {
        BlockParams<T> blk;
        blk.spatial = detail::make_sa_params<T>(channels, rng);
        if (mixed) {
            blk.channel = detail::make_sa_params<T>(n_tokens, rng);
            blk.dc_kernel = Tensor<T>::random_uniform({channels, channels, 3, 3}, rng,
                                                      -dc_bound / 10, dc_bound / 10, true);
            blk.dc_bias = Tensor<T>::zeros({channels}, true);
        }
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

/// Single-head scaled dot-product self-attention with an output projection.
/// attn_out, when given, receives the softmax-normalized attention matrix.
template <typename T>
Tensor<T> sa(Tape<T>& tape, const Tensor<T>& x, const SaParams<T>& p,
             Tensor<T>* attn_out = nullptr) {
    if (x.rank() != 2) throw RankError("sa expects a rank-2 token matrix");
    const std::size_t k = x.dim(1);
    if (p.query.dim(0) != k || p.query.dim(1) != k)
        throw ShapeMismatch("sa projections are " + shape_str(p.query.shape()) +
                            " but tokens have dim " + std::to_string(k));
    auto q = matmul(tape, x, p.query);
    auto kk = matmul(tape, x, p.key);
    auto v = matmul(tape, x, p.value);
    auto scores = scale(tape, matmul(tape, q, transpose2d(tape, kk)),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(k))));
    auto attn = softmax_rows(tape, scores);
    if (attn_out) *attn_out = attn;
    return matmul(tape, matmul(tape, attn, v), p.out);
}

/// One mixed block: spatial SA plus transposed channel SA, summed, then the
/// dilated convolution over the token grid. Shape-preserving N x C -> N x C.
template <typename T>
Tensor<T> mixed_block(Tape<T>& tape, const Tensor<T>& x, const BlockParams<T>& blk,
                      std::size_t grid_h, std::size_t grid_w, int dilation) {
    auto ys = sa(tape, x, blk.spatial);
    auto yc = transpose2d(tape, sa(tape, transpose2d(tape, x), blk.channel));
    auto mixed = add(tape, ys, yc);
    auto grid = grid_from_tokens(tape, mixed, grid_h, grid_w);
    auto dc = add_channel_bias(tape, conv2d(tape, grid, blk.dc_kernel, 1, dilation, dilation),
                               blk.dc_bias);
    return tokens_from_grid(tape, dc);
}

/// Apply the block stack; after every M-th block the value that entered the
/// group is added back.
template <typename T>
Tensor<T> maae_forward(Tape<T>& tape, const Tensor<T>& x_star, const MaaeParams<T>& params) {
    if (x_star.rank() != 2)
        throw ConfigMismatch("maae_forward expects NxC tokens");
    if (x_star.dim(0) != params.grid_h * params.grid_w)
        throw ConfigMismatch("token count " + std::to_string(x_star.dim(0)) +
                             " does not match configured grid " + std::to_string(params.grid_h) +
                             "x" + std::to_string(params.grid_w));
    if (!params.blocks.empty() && params.blocks[0].spatial.query.dim(0) != x_star.dim(1))
        throw ConfigMismatch("channel dim " + std::to_string(x_star.dim(1)) +
                             " does not match block projections");
    Tensor<T> h = x_star;
    Tensor<T> checkpoint = x_star;
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const auto& blk = params.blocks[b];
        if (params.mixed)
            h = mixed_block(tape, h, blk, params.grid_h, params.grid_w, params.dilation);
        else
            h = sa(tape, h, blk.spatial);
        if ((b + 1) % params.residual_period == 0) {
            h = add(tape, h, checkpoint);
            checkpoint = h;
        }
    }
    return h;
}

/// Eq-style reconstruction loss: squared L2 of (Y - target) over N tokens.
template <typename T>
Tensor<T> recon_loss(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& target, std::size_t n) {
    return mse(tape, y, target, n);
}

// ---------------------------------------------------------------------------
// parameter enumeration (checkpoints, optimizer groups)
// ---------------------------------------------------------------------------

template <typename T>
void append_named(NamedParams<T>& out, const std::string& prefix, const SaParams<T>& p) {
    out.emplace_back(prefix + ".q", p.query);
    out.emplace_back(prefix + ".k", p.key);
    out.emplace_back(prefix + ".v", p.value);
    out.emplace_back(prefix + ".o", p.out);
}

template <typename T>
NamedParams<T> named_params(const MaaeParams<T>& model) {
    NamedParams<T> out;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto prefix = "block" + std::to_string(b);
        append_named(out, prefix + ".sa", model.blocks[b].spatial);
        if (model.mixed) {
            append_named(out, prefix + ".ca", model.blocks[b].channel);
            out.emplace_back(prefix + ".dc.k", model.blocks[b].dc_kernel);
            out.emplace_back(prefix + ".dc.b", model.blocks[b].dc_bias);
        }
    }
    return out;
}

template <typename T>
NamedParams<T> named_params(const FfmParams<T>& ffm) {
    NamedParams<T> out;
    for (std::size_t i = 0; i < ffm.down_kernels.size(); ++i) {
        out.emplace_back("ffm.down" + std::to_string(i) + ".k", ffm.down_kernels[i]);
        out.emplace_back("ffm.down" + std::to_string(i) + ".b", ffm.down_biases[i]);
    }
    out.emplace_back("ffm.dc.k", ffm.dc_kernel);
    out.emplace_back("ffm.dc.b", ffm.dc_bias);
    return out;
}

} // namespace maae
