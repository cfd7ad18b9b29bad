#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace o2o {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { linear, tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Fully connected feed-forward network. Inputs are row-major batches
/// (one sample per row); layer l maps width layer_sizes[l] to layer_sizes[l+1].
struct DenseNet {
    std::vector<int> layer_sizes;
    std::vector<Matrix> weights;  // (out x in)
    std::vector<Vector> biases;   // (out)
    Activation hidden_activation = Activation::relu;
    Activation output_activation = Activation::linear;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    std::size_t num_layers() const { return weights.size(); }
    std::size_t num_parameters() const;

    bool operator==(const DenseNet& other) const;
};

/// Shape-congruent with a DenseNet. Also used for Adam moments.
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    static Gradients zeros_like(const DenseNet& net);
    bool all_finite() const;
    double squared_norm() const;
    double dot(const Gradients& other) const;
    bool operator==(const Gradients& other) const;
};

struct AdamState {
    Gradients first_moment;
    Gradients second_moment;
    std::uint64_t step_count = 0;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_net(const DenseNet& net, double learning_rate);
};

DenseNet init_net(const std::vector<int>& layer_sizes, Activation hidden, Activation output,
                  std::uint64_t seed);

Matrix forward(const DenseNet& net, const Matrix& inputs);

/// Single-sample convenience wrapper.
Vector forward(const DenseNet& net, const Vector& input);

/// Per-layer pre-activations and activations retained for backprop.
struct ForwardTrace {
    std::vector<Matrix> activations;      // activations[0] = inputs, back() = outputs
    std::vector<Matrix> pre_activations;  // one per layer

    const Matrix& output() const { return activations.back(); }
};

ForwardTrace forward_trace(const DenseNet& net, const Matrix& inputs);

struct BackwardResult {
    Gradients grads;
    Matrix input_grad;  // batch x in
};

/// Gradient of sum_batch <output, output_grad> with respect to every parameter
/// and every input. Sums over the batch; callers divide by batch size.
BackwardResult backward(const DenseNet& net, const ForwardTrace& trace, const Matrix& output_grad);

Gradients backward(const DenseNet& net, const Matrix& inputs, const Matrix& output_grad);

void adam_step(DenseNet& net, const Gradients& grads, AdamState& state);

/// target <- (1 - tau) * target + tau * online
void polyak_update(DenseNet& target, const DenseNet& online, double tau);

void to_json(nlohmann::json& j, const DenseNet& net);
void from_json(const nlohmann::json& j, DenseNet& net);
void to_json(nlohmann::json& j, const AdamState& state);
void from_json(const nlohmann::json& j, AdamState& state);

}  // namespace o2o
