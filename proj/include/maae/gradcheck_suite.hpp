#pragma once

// Finite-difference verification of every differentiable operation, run in
// 64-bit mode. Each op is checked on randomized small instances; outputs are
// reduced to a scalar through a fixed random weighting so the whole Jacobian
// is exercised.

#include <string>
#include <vector>

#include "maae/ang.hpp"
#include "maae/model.hpp"
#include "maae/tensor.hpp"

namespace maae {

struct SuiteOpResult {
    std::string op;
    std::size_t instances = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = true;
};

namespace detail {

inline std::size_t pick(SplitMix64& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

template <typename Builder>
void run_op_check(std::vector<SuiteOpResult>& results, const std::string& name, int instances,
                  double tol, std::uint64_t seed, Builder&& make_instance) {
    SuiteOpResult res;
    res.op = name;
    res.tolerance = tol;
    for (int i = 0; i < instances; ++i) {
        SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        auto [build, leaves] = make_instance(rng);
        auto rep = grad_check_leaves<double>(build, leaves, 1e-5, tol);
        res.instances += 1;
        res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
        res.passed = res.passed && rep.passed;
    }
    results.push_back(res);
}

using GradBuild = std::function<Tensor<double>(Tape<double>&)>;
using GradInstance = std::pair<GradBuild, std::vector<Tensor<double>>>;

inline Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& x,
                                   const Tensor<double>& weights) {
    return sum(tape, hadamard(tape, x, weights));
}

} // namespace detail

/// Run the full finite-difference suite; `instances` random cases per op.
inline std::vector<SuiteOpResult> run_gradient_suite(int instances = 20,
                                                     std::uint64_t seed = 0xA11CE) {
    using detail::GradInstance;
    using detail::pick;
    std::vector<SuiteOpResult> results;
    auto uni = [](SplitMix64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
        return Tensor<double>::random_uniform(std::move(shape), rng, lo, hi);
    };

    detail::run_op_check(results, "matmul", instances, 1e-4, mix_seed(seed, 1),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
                             auto a = uni(rng, {m, k});
                             auto b = uni(rng, {k, n});
                             auto w = uni(rng, {m, n});
                             return {[=](Tape<double>& t) {
                                         return detail::weighted_sum(t, matmul(t, a, b), w);
                                     },
                                     {a, b}};
                         });

    detail::run_op_check(results, "transpose2d", instances, 1e-4, mix_seed(seed, 2),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto m = pick(rng, 1, 6), n = pick(rng, 1, 6);
                             auto x = uni(rng, {m, n});
                             auto w = uni(rng, {n, m});
                             return {[=](Tape<double>& t) {
                                         return detail::weighted_sum(t, transpose2d(t, x), w);
                                     },
                                     {x}};
                         });

    detail::run_op_check(results, "softmax_rows", instances, 1e-4, mix_seed(seed, 3),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto m = pick(rng, 2, 5), n = pick(rng, 2, 5);
                             auto x = uni(rng, {m, n}, -2.0, 2.0);
                             auto w = uni(rng, {m, n});
                             return {[=](Tape<double>& t) {
                                         return detail::weighted_sum(t, softmax_rows(t, x), w);
                                     },
                                     {x}};
                         });

    detail::run_op_check(
        results, "conv2d", instances, 1e-4, mix_seed(seed, 4),
        [&](SplitMix64& rng) -> GradInstance {
            const bool dilated = rng.uniform() < 0.5; // alternate plain and stride-2/dilation-4
            const auto ci = pick(rng, 1, 2), co = pick(rng, 1, 3);
            const auto hw = dilated ? pick(rng, 6, 9) : pick(rng, 4, 6);
            const int stride = dilated ? 2 : 1;
            const int dil = dilated ? 4 : 1;
            const int pad = dilated ? 4 : 1;
            auto x = uni(rng, {ci, hw, hw});
            auto k = uni(rng, {co, ci, 3, 3});
            const auto d = detail::conv_dims(x, k, stride, dil, pad);
            auto w = uni(rng, {co, d.h_out, d.w_out});
            return {[=](Tape<double>& t) {
                        return detail::weighted_sum(t, conv2d(t, x, k, stride, dil, pad), w);
                    },
                    {x, k}};
        });

    detail::run_op_check(results, "concat_channels", instances, 1e-4, mix_seed(seed, 5),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto c1 = pick(rng, 1, 3), c2 = pick(rng, 1, 3);
                             const auto hw = pick(rng, 2, 4);
                             auto a = uni(rng, {c1, hw, hw});
                             auto b = uni(rng, {c2, hw, hw});
                             auto w = uni(rng, {c1 + c2, hw, hw});
                             return {[=](Tape<double>& t) {
                                         return detail::weighted_sum(
                                             t, concat_channels(t, a, b), w);
                                     },
                                     {a, b}};
                         });

    detail::run_op_check(
        results, "elementwise", instances, 1e-4, mix_seed(seed, 6),
        [&](SplitMix64& rng) -> GradInstance {
            const auto n = pick(rng, 2, 8);
            auto a = uni(rng, {n});
            auto b = uni(rng, {n});
            auto w = uni(rng, {n});
            const double c = rng.uniform(-2.0, 2.0);
            return {[=](Tape<double>& t) {
                        auto mixed = hadamard(t, add(t, a, b), sub(t, a, scale(t, b, c)));
                        return detail::weighted_sum(t, mixed, w);
                    },
                    {a, b}};
        });

    detail::run_op_check(results, "mse", instances, 1e-4, mix_seed(seed, 7),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto n = pick(rng, 2, 5), c = pick(rng, 2, 5);
                             auto y = uni(rng, {n, c});
                             auto tgt = uni(rng, {n, c});
                             return {[=](Tape<double>& t) { return mse(t, y, tgt, n); },
                                     {y, tgt}};
                         });

    detail::run_op_check(results, "l2_norm", instances, 1e-4, mix_seed(seed, 8),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto n = pick(rng, 1, 9);
                             auto x = uni(rng, {n}, 0.2, 1.2); // keep away from the kink at 0
                             return {[=](Tape<double>& t) { return l2_norm(t, x); }, {x}};
                         });

    detail::run_op_check(results, "sa", instances, 1e-4, mix_seed(seed, 9),
                         [&](SplitMix64& rng) -> GradInstance {
                             const auto m = pick(rng, 1, 4), k = pick(rng, 2, 5);
                             auto x = uni(rng, {m, k});
                             SaParams<double> p = detail::make_sa_params<double>(k, rng);
                             auto w = uni(rng, {m, k});
                             return {[=](Tape<double>& t) {
                                         return detail::weighted_sum(t, sa(t, x, p), w);
                                     },
                                     {x, p.query, p.key, p.value, p.out}};
                         });

    detail::run_op_check(
        results, "mixed_block", instances, 1e-4, mix_seed(seed, 10),
        [&](SplitMix64& rng) -> GradInstance {
            const std::size_t gh = 2, gw = 2, n = gh * gw;
            const auto c = pick(rng, 3, 5);
            const int dil = rng.uniform() < 0.5 ? 1 : 2;
            auto params = make_maae_params<double>(1, 1, n, c, gh, gw, dil, true, rng);
            auto x = uni(rng, {n, c});
            auto w = uni(rng, {n, c});
            const auto blk = params.blocks[0];
            std::vector<Tensor<double>> leaves{x,          blk.spatial.query, blk.spatial.key,
                                               blk.spatial.value, blk.spatial.out,
                                               blk.channel.query, blk.channel.key,
                                               blk.channel.value, blk.channel.out,
                                               blk.dc_kernel,     blk.dc_bias};
            return {[=](Tape<double>& t) {
                        return detail::weighted_sum(t, mixed_block(t, x, blk, gh, gw, dil), w);
                    },
                    leaves};
        });

    detail::run_op_check(
        results, "maae_forward.ffm_fuse", instances, 1e-3, mix_seed(seed, 11),
        [&](SplitMix64& rng) -> GradInstance {
            const std::vector<std::size_t> plan{1, 2, 2, 3};
            auto stack = std::make_shared<FeatureStack<double>>();
            std::size_t hw = 16;
            for (std::size_t s = 0; s < 4; ++s) {
                stack->stages.push_back(uni(rng, {plan[s], hw, hw}));
                hw /= 2;
            }
            auto ffm = std::make_shared<FfmParams<double>>(
                make_ffm_params<double>(plan, 2, rng));
            auto model = std::make_shared<MaaeParams<double>>(
                make_maae_params<double>(2, 2, 4, 8, 2, 2, 2, true, rng));
            auto target = uni(rng, {4, 8});
            std::vector<Tensor<double>> leaves;
            for (auto& [name, p] : named_params(*ffm)) leaves.push_back(p);
            for (auto& [name, p] : named_params(*model)) leaves.push_back(p);
            leaves.push_back(stack->stages[0]);
            leaves.push_back(stack->stages[3]);
            return {[=](Tape<double>& t) {
                        auto fused = ffm_fuse(t, *stack, *ffm);
                        auto y = maae_forward(t, fused.tokens, *model);
                        return recon_loss(t, y, target, 4);
                    },
                    leaves};
        });

    return results;
}

} // namespace maae
