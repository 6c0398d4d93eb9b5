#include "maae/model.hpp"

#include <gtest/gtest.h>

#include "common/oracles.hpp"

using namespace maae;

namespace {

Tensor<double> random_tokens(std::size_t n, std::size_t c, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return Tensor<double>::random_uniform({n, c}, rng, -1.0, 1.0);
}

std::vector<double> vec(const Tensor<double>& t) {
    return {t.values().begin(), t.values().end()};
}

} // namespace

TEST(Sa, SingleTokenAttentionIsOne) {
    SplitMix64 rng(1);
    auto x = random_tokens(1, 5, 2);
    auto p = detail::make_sa_params<double>(5, rng);
    Tape<double> tape;
    Tensor<double> attn;
    auto y = sa(tape, x, p, &attn);
    ASSERT_EQ(attn.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(attn.values()[0], 1.0);
    // output reduces to x V O for a single token
    auto direct = matmul(tape, matmul(tape, x, p.value), p.out);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_NEAR(y.values()[i], direct.values()[i], 1e-12);
}

TEST(Sa, IdenticalTokensGiveIdenticalRows) {
    SplitMix64 rng(3);
    auto row = random_tokens(1, 4, 4);
    std::vector<double> data;
    for (int i = 0; i < 6; ++i)
        data.insert(data.end(), row.values().begin(), row.values().end());
    auto x = Tensor<double>::from({6, 4}, std::move(data));
    auto p = detail::make_sa_params<double>(4, rng);
    Tape<double> tape;
    auto y = sa(tape, x, p);
    for (std::size_t i = 1; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            EXPECT_NEAR(y.values()[i * 4 + j], y.values()[j], 1e-12);
}

TEST(Sa, MatchesNaiveOracle) {
    SplitMix64 rng(5);
    auto x = random_tokens(4, 6, 6);
    auto p = detail::make_sa_params<double>(6, rng);
    Tape<double> tape;
    auto y = sa(tape, x, p);
    auto ref = oracle::attention(vec(x), 4, 6, vec(p.query), vec(p.key), vec(p.value), vec(p.out));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-8);

    EXPECT_THROW(sa(tape, random_tokens(4, 5, 7), p), ShapeMismatch);
}

TEST(Sa, AttentionRowsSumToOne) {
    SplitMix64 rng(7);
    auto x = random_tokens(5, 4, 8);
    auto p = detail::make_sa_params<double>(4, rng);
    Tape<double> tape;
    Tensor<double> attn;
    sa(tape, x, p, &attn);
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) s += attn.values()[i * 5 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(MixedBlock, ShapePreservedAndChannelAblation) {
    SplitMix64 rng(9);
    const std::size_t n = 4, c = 6;
    auto x = random_tokens(n, c, 10);
    auto params = make_maae_params<double>(1, 1, n, c, 2, 2, 1, true, rng);
    auto& blk = params.blocks[0];
    Tape<double> tape;
    auto y = mixed_block(tape, x, blk, 2, 2, 1);
    EXPECT_EQ(y.shape(), x.shape());

    // zero the channel-branch output projection: block becomes DC(SA(X))
    std::fill(blk.channel.out.values_mut().begin(), blk.channel.out.values_mut().end(), 0.0);
    Tape<double> t2;
    auto yz = mixed_block(t2, x, blk, 2, 2, 1);
    auto spatial_only = tokens_from_grid(
        t2, add_channel_bias(t2,
                             conv2d(t2, grid_from_tokens(t2, sa(t2, x, blk.spatial), 2, 2),
                                    blk.dc_kernel, 1, 1, 1),
                             blk.dc_bias));
    for (std::size_t i = 0; i < yz.numel(); ++i)
        EXPECT_NEAR(yz.values()[i], spatial_only.values()[i], 1e-12);
}

TEST(MixedBlock, MatchesComposedOracle) {
    SplitMix64 rng(11);
    const std::size_t n = 16, c = 24;
    auto x = random_tokens(n, c, 12);
    auto params = make_maae_params<double>(1, 1, n, c, 4, 4, 2, true, rng);
    const auto& blk = params.blocks[0];
    Tape<double> tape;
    auto y = mixed_block(tape, x, blk, 4, 4, 2);

    // from-scratch composition with the naive oracles
    auto ys = oracle::attention(vec(x), n, c, vec(blk.spatial.query), vec(blk.spatial.key),
                                vec(blk.spatial.value), vec(blk.spatial.out));
    std::vector<double> xt(c * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) xt[j * n + i] = x.values()[i * c + j];
    auto yct = oracle::attention(xt, c, n, vec(blk.channel.query), vec(blk.channel.key),
                                 vec(blk.channel.value), vec(blk.channel.out));
    std::vector<double> grid(c * n); // mixed sum, laid out channel-major
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            grid[j * n + i] = ys[i * c + j] + yct[j * n + i];
    auto dc = oracle::conv2d(grid, c, 4, 4, vec(blk.dc_kernel), c, 3, 3, 1, 2, 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            EXPECT_NEAR(y.values()[i * c + j], dc[j * n + i] + blk.dc_bias.values()[j], 1e-7);
}

TEST(MaaeForward, EmptyStackIsIdentity) {
    SplitMix64 rng(13);
    auto x = random_tokens(4, 3, 14);
    auto params = make_maae_params<double>(0, 3, 4, 3, 2, 2, 1, true, rng);
    Tape<double> tape;
    auto y = maae_forward(tape, x, params);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(MaaeForward, ZeroDcWithUnitPeriodIsIdentity) {
    SplitMix64 rng(15);
    auto x = random_tokens(4, 3, 16);
    auto params = make_maae_params<double>(3, 1, 4, 3, 2, 2, 1, true, rng);
    for (auto& blk : params.blocks) {
        std::fill(blk.dc_kernel.values_mut().begin(), blk.dc_kernel.values_mut().end(), 0.0);
        std::fill(blk.dc_bias.values_mut().begin(), blk.dc_bias.values_mut().end(), 0.0);
    }
    Tape<double> tape;
    auto y = maae_forward(tape, x, params);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i]);
}

TEST(MaaeForward, MatchesManualComposition) {
    SplitMix64 rng(17);
    const std::size_t n = 4, c = 5;
    auto x = random_tokens(n, c, 18);
    auto params = make_maae_params<double>(6, 3, n, c, 2, 2, 1, true, rng);
    Tape<double> tape;
    auto y = maae_forward(tape, x, params);

    auto h = x;
    for (std::size_t g = 0; g < 2; ++g) {
        auto entry = h;
        for (std::size_t b = 0; b < 3; ++b)
            h = mixed_block(tape, h, params.blocks[g * 3 + b], 2, 2, 1);
        h = add(tape, h, entry);
    }
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.values()[i], h.values()[i], 1e-10);
}

TEST(MaaeForward, ConfigMismatch) {
    SplitMix64 rng(19);
    auto params = make_maae_params<double>(2, 1, 4, 3, 2, 2, 1, true, rng);
    Tape<double> tape;
    EXPECT_THROW(maae_forward(tape, random_tokens(6, 3, 20), params), ConfigMismatch);
    EXPECT_THROW(maae_forward(tape, random_tokens(4, 5, 21), params), ConfigMismatch);
}

TEST(MaaeForward, EveryParameterGetsGradient) {
    SplitMix64 rng(21);
    const std::size_t n = 4, c = 5;
    auto x = random_tokens(n, c, 22);
    auto target = random_tokens(n, c, 23);
    auto params = make_maae_params<double>(2, 3, n, c, 2, 2, 1, true, rng);
    Tape<double> tape;
    auto y = maae_forward(tape, x, params);
    auto loss = recon_loss(tape, y, target, n);
    tape.backward(loss);
    for (const auto& [name, p] : named_params(params)) {
        double norm = 0.0;
        for (double g : p.grad()) norm += g * g;
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST(ReconLoss, ValuesAndGradient) {
    Tape<double> tape;
    auto y = Tensor<double>::from({2, 2}, {2, 0, 0, 0});
    auto t = Tensor<double>::zeros({2, 2});
    EXPECT_DOUBLE_EQ(recon_loss(tape, y, y, 2).item(), 0.0);
    EXPECT_DOUBLE_EQ(recon_loss(tape, y, t, 2).item(), 2.0);

    auto a = random_tokens(3, 4, 24);
    auto b = random_tokens(3, 4, 25);
    auto rep = grad_check_leaves<double>(
        [&](Tape<double>& tp) { return recon_loss(tp, a, b, 3); }, {a, b}, 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_rel_err;
}

TEST(MaaeForward, SpatialOnlyAblation) {
    SplitMix64 rng(23);
    const std::size_t n = 4, c = 5;
    auto x = random_tokens(n, c, 26);
    auto params = make_maae_params<double>(2, 2, n, c, 2, 2, 1, false, rng);
    Tape<double> tape;
    auto y = maae_forward(tape, x, params);
    // plain SA blocks with the residual structure intact
    auto h = sa(tape, sa(tape, x, params.blocks[0].spatial), params.blocks[1].spatial);
    h = add(tape, h, x);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.values()[i], h.values()[i], 1e-12);
}

TEST(EndToEnd, DeepCompositeGradientCheck) {
    SplitMix64 rng(27);
    const std::vector<std::size_t> plan{1, 2, 2, 3};
    FeatureStack<double> stack;
    std::size_t hw = 16;
    for (std::size_t s = 0; s < 4; ++s) {
        stack.stages.push_back(Tensor<double>::random_uniform({plan[s], hw, hw}, rng, -1.0, 1.0));
        hw /= 2;
    }
    auto ffm = make_ffm_params<double>(plan, 2, rng);
    auto model = make_maae_params<double>(2, 2, 4, 8, 2, 2, 2, true, rng);
    auto target = Tensor<double>::random_uniform({4, 8}, rng, -1.0, 1.0);

    std::vector<Tensor<double>> leaves;
    for (auto& [name, p] : named_params(ffm)) leaves.push_back(p);
    for (auto& [name, p] : named_params(model)) leaves.push_back(p);
    leaves.push_back(stack.stages[0]);

    auto rep = grad_check_leaves<double>(
        [&](Tape<double>& tape) {
            auto fused = ffm_fuse(tape, stack, ffm);
            auto y = maae_forward(tape, fused.tokens, model);
            return recon_loss(tape, y, target, 4);
        },
        leaves, 1e-5, 1e-3);
    EXPECT_TRUE(rep.passed) << "max rel err " << rep.max_rel_err;
}
