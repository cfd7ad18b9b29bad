#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "../oracles.hpp"
#include "o2o/errors.hpp"
#include "o2o/nn.hpp"

using namespace o2o;

TEST(InitNet, SameSeedSameParameters) {
    EXPECT_EQ(init_net({2, 1}, Activation::relu, Activation::linear, 7),
              init_net({2, 1}, Activation::relu, Activation::linear, 7));
    EXPECT_FALSE(init_net({2, 1}, Activation::relu, Activation::linear, 7) ==
                 init_net({2, 1}, Activation::relu, Activation::linear, 8));
}

TEST(InitNet, Shapes) {
    const auto net = init_net({3, 4, 2}, Activation::tanh, Activation::linear, 1);
    ASSERT_EQ(net.num_layers(), 2u);
    EXPECT_EQ(net.weights[0].rows(), 4);
    EXPECT_EQ(net.weights[0].cols(), 3);
    EXPECT_EQ(net.weights[1].rows(), 2);
    EXPECT_EQ(net.weights[1].cols(), 4);
    EXPECT_EQ(net.biases[0].size(), 4);
    EXPECT_EQ(net.biases[1].size(), 2);
    EXPECT_EQ(net.num_parameters(), 3u * 4 + 4 + 4 * 2 + 2);
}

TEST(InitNet, InvalidSpecs) {
    EXPECT_THROW(init_net({2, 0, 1}, Activation::relu, Activation::linear, 1), InvalidSpec);
    EXPECT_THROW(init_net({2}, Activation::relu, Activation::linear, 1), InvalidSpec);
    EXPECT_THROW(init_net({2, 3, 1}, Activation::relu, Activation::relu, 1), InvalidSpec);
}

TEST(InitNet, UniformFanInBound) {
    const auto net = init_net({16, 8}, Activation::relu, Activation::linear, 3);
    EXPECT_LE(net.weights[0].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
    EXPECT_EQ(net.biases[0].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, ZeroWeightsGiveBias) {
    auto net = init_net({3, 5, 2}, Activation::relu, Activation::linear, 1);
    for (auto& w : net.weights) w.setZero();
    net.biases[0].setZero();
    net.biases[1].setConstant(0.5);
    Matrix x = Matrix::Random(7, 3) * 10;
    const Matrix y = forward(net, x);
    EXPECT_TRUE((y.array() == 0.5).all());
}

TEST(Forward, SingleLinearLayer) {
    auto net = init_net({2, 2}, Activation::relu, Activation::linear, 1);
    net.weights[0] << 2, 0, 0, 3;
    net.biases[0].setZero();
    Vector x(2);
    x << 1, 1;
    const Vector y = forward(net, x);
    EXPECT_DOUBLE_EQ(y[0], 2.0);
    EXPECT_DOUBLE_EQ(y[1], 3.0);
}

TEST(Forward, TanhSaturates) {
    auto net = init_net({1, 3, 1}, Activation::tanh, Activation::linear, 1);
    net.weights[0].setConstant(100.0);
    net.biases[0].setZero();
    const auto trace = forward_trace(net, Matrix::Ones(1, 1));
    EXPECT_NEAR(trace.activations[1].minCoeff(), 1.0, 1e-9);
}

TEST(Forward, InputWidthChecked) {
    const auto net = init_net({3, 2}, Activation::relu, Activation::linear, 1);
    EXPECT_THROW(forward(net, Matrix(Matrix::Ones(2, 4))), ShapeError);
}

TEST(Backward, ZeroOutputGradGivesZero) {
    const auto net = init_net({4, 8, 3}, Activation::tanh, Activation::linear, 2);
    const auto g = backward(net, Matrix::Random(5, 4), Matrix::Zero(5, 3));
    EXPECT_EQ(g, Gradients::zeros_like(net));
}

TEST(Backward, LinearLayerOuterProduct) {
    const auto net = init_net({3, 2}, Activation::relu, Activation::linear, 5);
    Matrix x(1, 3);
    x << 1.0, -2.0, 0.5;
    Matrix g(1, 2);
    g << 0.3, -1.5;
    const auto grads = backward(net, x, g);
    const Matrix expected = g.transpose() * x;
    EXPECT_TRUE(grads.weights[0].isApprox(expected, 1e-15));
    EXPECT_TRUE(grads.biases[0].isApprox(g.transpose(), 1e-15));
}

TEST(Backward, MatchesFiniteDifferencesTanh) {
    const auto net = init_net({4, 8, 3}, Activation::tanh, Activation::tanh, 11);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix x(6, 4), g(6, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
    const auto analytic = backward(net, x, g);
    const auto numeric = oracle::fd_gradients(net, x, g);
    EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4);
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
    const auto net = init_net({3, 6, 2}, Activation::tanh, Activation::linear, 9);
    Matrix x = Matrix::Random(2, 3);
    Matrix g = Matrix::Random(2, 2);
    const auto res = backward(net, forward_trace(net, x), g);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Matrix up = x, down = x;
        up.data()[i] += h;
        down.data()[i] -= h;
        const double num = ((forward(net, up).array() - forward(net, down).array()) * g.array()).sum() / (2 * h);
        EXPECT_NEAR(res.input_grad.data()[i], num, 1e-6);
    }
}

TEST(Adam, ZeroGradientLeavesParameters) {
    auto net = init_net({3, 4, 1}, Activation::relu, Activation::linear, 1);
    const auto before = net;
    auto state = AdamState::for_net(net, 0.01);
    adam_step(net, Gradients::zeros_like(net), state);
    EXPECT_EQ(net, before);
}

TEST(Adam, FirstStepIsSignTimesLr) {
    auto net = init_net({1, 1}, Activation::relu, Activation::linear, 1);
    const double w0 = net.weights[0](0, 0);
    auto state = AdamState::for_net(net, 0.01);
    auto g = Gradients::zeros_like(net);
    g.weights[0](0, 0) = 0.37;
    adam_step(net, g, state);
    EXPECT_NEAR(net.weights[0](0, 0) - w0, -0.01 * 0.37 / (0.37 + 1e-8), 1e-12);
    EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, QuadraticMatchesScalarOracle) {
    auto net = init_net({1, 1}, Activation::relu, Activation::linear, 1);
    net.weights[0](0, 0) = 1.0;
    auto state = AdamState::for_net(net, 0.1);
    for (int i = 0; i < 100; ++i) {
        auto g = Gradients::zeros_like(net);
        g.weights[0](0, 0) = 2.0 * net.weights[0](0, 0);
        adam_step(net, g, state);
    }
    const double expected = oracle::scalar_adam(1.0, 0.1, 100, [](double w) { return 2 * w; });
    EXPECT_NEAR(net.weights[0](0, 0), expected, 1e-12);
    EXPECT_LT(std::abs(net.weights[0](0, 0)), 0.2);
}

TEST(Adam, RejectsNonFiniteAndMismatchedGradients) {
    auto net = init_net({2, 2}, Activation::relu, Activation::linear, 1);
    auto state = AdamState::for_net(net, 0.01);
    auto g = Gradients::zeros_like(net);
    g.weights[0](0, 0) = std::nan("");
    EXPECT_THROW(adam_step(net, g, state), NumericError);
    const auto other = init_net({3, 2}, Activation::relu, Activation::linear, 1);
    EXPECT_THROW(adam_step(net, Gradients::zeros_like(other), state), ShapeError);
}

TEST(Polyak, InterpolatesTowardOnline) {
    auto target = init_net({2, 3, 1}, Activation::relu, Activation::linear, 1);
    const auto online = init_net({2, 3, 1}, Activation::relu, Activation::linear, 2);
    const auto t0 = target;
    polyak_update(target, online, 0.25);
    const Matrix expected = 0.75 * t0.weights[1] + 0.25 * online.weights[1];
    EXPECT_TRUE(target.weights[1].isApprox(expected, 1e-15));
    polyak_update(target, online, 1.0);
    EXPECT_EQ(target, online);
}

TEST(NetJson, RoundTripIsExact) {
    const auto net = init_net({5, 7, 2}, Activation::tanh, Activation::tanh, 42);
    const nlohmann::json j = net;
    const auto back = nlohmann::json::parse(j.dump()).get<DenseNet>();
    EXPECT_EQ(back, net);
    auto state = AdamState::for_net(net, 0.003);
    auto copy = net;
    auto g = Gradients::zeros_like(net);
    g.biases[0].setConstant(0.1);
    adam_step(copy, g, state);
    const auto s2 = nlohmann::json::parse(nlohmann::json(state).dump()).get<AdamState>();
    EXPECT_EQ(s2.first_moment, state.first_moment);
    EXPECT_EQ(s2.step_count, 1u);
}

TEST(NetJson, SchemaErrors) {
    nlohmann::json j = init_net({2, 2}, Activation::relu, Activation::linear, 1);
    j["layer_sizes"] = {2, 3};
    EXPECT_THROW(j.get<DenseNet>(), SchemaError);
}
