#include "maae/ffm.hpp"
#include "maae/model.hpp"

#include <gtest/gtest.h>

#include "common/oracles.hpp"

using namespace maae;

namespace {

FeatureStack<double> random_stack(SplitMix64& rng, const std::vector<std::size_t>& plan,
                                  std::size_t top_hw) {
    FeatureStack<double> s;
    std::size_t hw = top_hw;
    for (std::size_t i = 0; i < 4; ++i) {
        s.stages.push_back(Tensor<double>::random_uniform({plan[i], hw, hw}, rng, -1.0, 1.0));
        hw /= 2;
    }
    return s;
}

// per-channel identity taps: downsample kernels pick the center of each
// 3x3 window, the dilated kernel reduces to the identity
FfmParams<double> identity_ffm(const std::vector<std::size_t>& plan, int dilation) {
    FfmParams<double> p;
    p.dilation = dilation;
    std::size_t c = plan[0];
    for (std::size_t s = 1; s < 4; ++s) {
        auto k = Tensor<double>::zeros({c, c, 3, 3});
        for (std::size_t i = 0; i < c; ++i) k.values_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
        p.down_kernels.push_back(k);
        p.down_biases.push_back(Tensor<double>::zeros({c}));
        c += plan[s];
    }
    p.dc_kernel = Tensor<double>::zeros({c, c, 3, 3});
    for (std::size_t i = 0; i < c; ++i)
        p.dc_kernel.values_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
    p.dc_bias = Tensor<double>::zeros({c});
    return p;
}

} // namespace

TEST(Tokens, GridRoundTripAndIndexLaw) {
    SplitMix64 rng(1);
    auto g = Tensor<double>::random_uniform({2, 2, 2}, rng, -1.0, 1.0);
    Tape<double> tape;
    auto tok = tokens_from_grid(tape, g);
    ASSERT_EQ(tok.shape(), (Shape{4, 2}));
    // token i lives at grid (i / W, i % W)
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            EXPECT_EQ(tok.values()[i * 2 + c], g.values()[c * 4 + (i / 2) * 2 + (i % 2)]);
    auto back = grid_from_tokens(tape, tok, 2, 2);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(back.values()[i], g.values()[i]);
    EXPECT_THROW(grid_from_tokens(tape, tok, 3, 2), ShapeMismatch);
}

TEST(Tokens, GradientFlowsThroughReshape) {
    auto g = Tensor<double>::full({2, 2, 2}, 1.0, true);
    Tape<double> tape;
    auto loss = sum(tape, scale(tape, tokens_from_grid(tape, g), 3.0));
    tape.backward(loss);
    for (double v : g.grad()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(DownsampleStep, ShapeArithmetic) {
    SplitMix64 rng(2);
    auto low = Tensor<double>::random_uniform({16, 32, 32}, rng, -1.0, 1.0);
    auto high = Tensor<double>::random_uniform({32, 16, 16}, rng, -1.0, 1.0);
    auto k = Tensor<double>::random_uniform({16, 16, 3, 3}, rng, -0.2, 0.2);
    auto b = Tensor<double>::zeros({16});
    Tape<double> tape;
    auto fused = ffm_downsample_step(tape, low, high, k, b);
    EXPECT_EQ(fused.shape(), (Shape{48, 16, 16}));
    EXPECT_THROW(ffm_downsample_step(tape, low, Tensor<double>::zeros({32, 15, 16}), k, b),
                 ShapeMismatch);
}

TEST(DownsampleStep, ZeroKernelLeavesHighIntact) {
    SplitMix64 rng(3);
    auto low = Tensor<double>::random_uniform({4, 8, 8}, rng, -1.0, 1.0);
    auto high = Tensor<double>::random_uniform({6, 4, 4}, rng, -1.0, 1.0);
    Tape<double> tape;
    auto fused = ffm_downsample_step(tape, low, high, Tensor<double>::zeros({4, 4, 3, 3}),
                                     Tensor<double>::zeros({4}));
    for (std::size_t i = 0; i < 4 * 16; ++i) EXPECT_DOUBLE_EQ(fused.values()[i], 0.0);
    for (std::size_t i = 0; i < 6 * 16; ++i)
        EXPECT_DOUBLE_EQ(fused.values()[4 * 16 + i], high.values()[i]);
}

TEST(DownsampleStep, MatchesLoopOracle) {
    SplitMix64 rng(4);
    auto low = Tensor<double>::random_uniform({3, 8, 8}, rng, -1.0, 1.0);
    auto high = Tensor<double>::random_uniform({5, 4, 4}, rng, -1.0, 1.0);
    auto k = Tensor<double>::random_uniform({3, 3, 3, 3}, rng, -0.5, 0.5);
    auto b = Tensor<double>::random_uniform({3}, rng, -0.5, 0.5);
    Tape<double> tape;
    auto fused = ffm_downsample_step(tape, low, high, k, b);
    auto conv = oracle::conv2d(std::vector<double>(low.values().begin(), low.values().end()),
                               3, 8, 8,
                               std::vector<double>(k.values().begin(), k.values().end()),
                               3, 3, 3, 2, 1, 1);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 16; ++i)
            EXPECT_NEAR(fused.values()[c * 16 + i], conv[c * 16 + i] + b.values()[c], 1e-9);
    for (std::size_t i = 0; i < 5 * 16; ++i)
        EXPECT_DOUBLE_EQ(fused.values()[3 * 16 + i], high.values()[i]);
}

TEST(FfmFuse, ToyStackShapeContract) {
    SplitMix64 rng(5);
    const std::vector<std::size_t> plan{16, 32, 64, 128};
    auto stack = random_stack(rng, plan, 32);
    auto params = make_ffm_params<double>(plan, 4, rng);
    Tape<double> tape;
    auto fused = ffm_fuse(tape, stack, params);
    EXPECT_EQ(fused.tokens.shape(), (Shape{16, 240}));
    EXPECT_EQ(fused.grid_h, 4u);
    EXPECT_EQ(fused.grid_w, 4u);
    std::size_t c_sum = 0;
    for (auto c : fused.channel_plan) c_sum += c;
    EXPECT_EQ(c_sum, 240u);
}

TEST(FfmFuse, IdentityTapsDegradeToNearestTapConcat) {
    SplitMix64 rng(6);
    const std::vector<std::size_t> plan{2, 3, 3, 4};
    auto stack = random_stack(rng, plan, 16);
    auto params = identity_ffm(plan, 2);
    Tape<double> tape;
    auto fused = ffm_fuse(tape, stack, params);
    // ten-line oracle: stage s contributes its (2^(3-s) * y, 2^(3-s) * x) samples
    const std::size_t gh = 2, gw = 2;
    std::size_t c_off = 0;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t f = std::size_t{1} << (3 - s);
        const auto& st = stack.stages[s];
        const std::size_t hw = st.dim(1);
        for (std::size_t c = 0; c < st.dim(0); ++c)
            for (std::size_t y = 0; y < gh; ++y)
                for (std::size_t x = 0; x < gw; ++x) {
                    const double expect = st.values()[(c * hw + f * y) * hw + f * x];
                    const double got = fused.tokens.values()[(y * gw + x) * 12 + c_off + c];
                    EXPECT_NEAR(got, expect, 1e-12);
                }
        c_off += st.dim(0);
    }
}

TEST(FfmFuse, MatchesComposedLoopOracle) {
    SplitMix64 rng(7);
    const std::vector<std::size_t> plan{2, 2, 3, 3};
    auto stack = random_stack(rng, plan, 16);
    auto params = make_ffm_params<double>(plan, 2, rng);
    Tape<double> tape;
    auto fused = ffm_fuse(tape, stack, params);

    auto vec = [](const Tensor<double>& t) {
        return std::vector<double>(t.values().begin(), t.values().end());
    };
    std::vector<double> low = vec(stack.stages[0]);
    std::size_t c_low = plan[0], hw = 16;
    for (std::size_t s = 1; s < 4; ++s) {
        auto conv = oracle::conv2d(low, c_low, hw, hw, vec(params.down_kernels[s - 1]),
                                   c_low, 3, 3, 2, 1, 1);
        hw /= 2;
        for (std::size_t c = 0; c < c_low; ++c)
            for (std::size_t i = 0; i < hw * hw; ++i)
                conv[c * hw * hw + i] += params.down_biases[s - 1].values()[c];
        conv.insert(conv.end(), stack.stages[s].values().begin(), stack.stages[s].values().end());
        low = std::move(conv);
        c_low += plan[s];
    }
    auto refined = oracle::conv2d(low, c_low, hw, hw, vec(params.dc_kernel), c_low, 3, 3,
                                  1, 2, 2);
    for (std::size_t c = 0; c < c_low; ++c)
        for (std::size_t i = 0; i < hw * hw; ++i)
            refined[c * hw * hw + i] += params.dc_bias.values()[c];
    for (std::size_t i = 0; i < hw * hw; ++i)
        for (std::size_t c = 0; c < c_low; ++c)
            EXPECT_NEAR(fused.tokens.values()[i * c_low + c], refined[c * hw * hw + i], 1e-8);
}

TEST(FfmFuse, AllParamsReceiveGradient) {
    SplitMix64 rng(8);
    const std::vector<std::size_t> plan{2, 2, 3, 3};
    auto stack = random_stack(rng, plan, 16);
    auto params = make_ffm_params<double>(plan, 2, rng);
    auto target = Tensor<double>::random_uniform({4, 10}, rng, -1.0, 1.0);
    Tape<double> tape;
    auto fused = ffm_fuse(tape, stack, params);
    auto loss = mse(tape, fused.tokens, target, 4);
    tape.backward(loss);
    for (const auto& [name, p] : named_params(params)) {
        double norm = 0.0;
        for (double g : p.grad()) norm += g * g;
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST(BilinearFuse, ShapeAndConstancy) {
    SplitMix64 rng(9);
    const std::vector<std::size_t> plan{2, 3, 3, 4};
    auto stack = random_stack(rng, plan, 16);
    Tape<double> tape;
    auto fused = bilinear_fuse(tape, stack);
    EXPECT_EQ(fused.tokens.shape(), (Shape{4, 12}));
    // stage-4 channels pass through untouched (already at the target grid)
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 4; ++c)
            EXPECT_DOUBLE_EQ(fused.tokens.values()[i * 12 + 8 + c],
                             stack.stages[3].values()[c * 4 + i]);
}
