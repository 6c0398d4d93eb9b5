#include "maae/optim.hpp"

#include <gtest/gtest.h>

using namespace maae;

TEST(Adam, ZeroGradientLeavesAllStateUntouched) {
    auto p = Tensor<double>::full({3}, 1.5, true);
    std::vector<Tensor<double>> group{p};
    auto state = make_adam_state(group);
    for (int i = 0; i < 5; ++i) adam_step(group, state, 1e-3);
    for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 1.5);
    for (double m : state.m[0]) EXPECT_DOUBLE_EQ(m, 0.0);
    for (double v : state.v[0]) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Adam, ConstantGradientApproachesLrStep) {
    auto p = Tensor<double>::zeros({2}, true);
    std::vector<Tensor<double>> group{p};
    auto state = make_adam_state(group);
    const double lr = 1e-3;
    double before = 0.0;
    for (int i = 0; i < 300; ++i) {
        p.zero_grad();
        p.grad_mut()[0] = 0.37;
        p.grad_mut()[1] = -5.0;
        before = p.values()[0];
        adam_step(group, state, lr);
    }
    // late-stage update magnitude approaches lr * sign(g)
    EXPECT_NEAR(std::abs(p.values()[0] - before), lr, lr * 1e-3);
    EXPECT_LT(p.values()[0], 0.0);
    EXPECT_GT(p.values()[1], 0.0);
}

TEST(Adam, HandComputedThreeStepTrace) {
    // scalar Adam, lr 0.1, gradients 1.0, 0.5, -0.25 - the reference
    // transcript below applies the textbook update formulas literally
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double grads[3] = {1.0, 0.5, -0.25};
    double x = 0.3, m = 0.0, v = 0.0;
    double expected[3];
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
        expected[t - 1] = x;
    }

    auto p = Tensor<double>::full({1}, 0.3, true);
    std::vector<Tensor<double>> group{p};
    auto state = make_adam_state(group);
    for (int t = 0; t < 3; ++t) {
        p.zero_grad();
        p.grad_mut()[0] = grads[t];
        adam_step(group, state, lr);
        EXPECT_DOUBLE_EQ(p.values()[0], expected[t]) << "step " << t;
    }
}

TEST(Adam, RejectsMismatchedState) {
    auto p = Tensor<double>::zeros({2}, true);
    auto q = Tensor<double>::zeros({3}, true);
    std::vector<Tensor<double>> group{p};
    auto state = make_adam_state(group);
    std::vector<Tensor<double>> wrong{p, q};
    EXPECT_THROW(adam_step(wrong, state, 1e-3), ShapeMismatch);
}
