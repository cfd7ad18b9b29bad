#include "o2o/nn.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "o2o/errors.hpp"
#include "o2o/seeding.hpp"

namespace o2o {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "linear";
}

Activation activation_from_string(const std::string& name) {
    if (name == "linear") return Activation::linear;
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw InvalidSpec("unknown activation '" + name + "'");
}

namespace {

void apply_activation(Activation a, Matrix& m) {
    switch (a) {
        case Activation::linear: break;
        case Activation::tanh: m = m.array().tanh().matrix(); break;
        case Activation::relu: m = m.cwiseMax(0.0); break;
    }
}

// Multiplies upstream grad by the activation derivative, given the
// pre-activation z and the post-activation y.
void apply_activation_grad(Activation a, const Matrix& z, const Matrix& y, Matrix& grad) {
    switch (a) {
        case Activation::linear: break;
        case Activation::tanh: grad.array() *= (1.0 - y.array().square()); break;
        case Activation::relu: grad.array() *= (z.array() > 0.0).cast<double>(); break;
    }
}

Activation layer_activation(const DenseNet& net, std::size_t layer) {
    return layer + 1 == net.num_layers() ? net.output_activation : net.hidden_activation;
}

void check_congruent(const DenseNet& net, const Gradients& g) {
    if (g.weights.size() != net.num_layers() || g.biases.size() != net.num_layers())
        throw ShapeError("gradient layer count does not match network");
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        if (g.weights[l].rows() != net.weights[l].rows() ||
            g.weights[l].cols() != net.weights[l].cols() ||
            g.biases[l].size() != net.biases[l].size())
            throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
    }
}

}  // namespace

std::size_t DenseNet::num_parameters() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
}

bool DenseNet::operator==(const DenseNet& other) const {
    if (layer_sizes != other.layer_sizes || hidden_activation != other.hidden_activation ||
        output_activation != other.output_activation)
        return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
    }
    return true;
}

Gradients Gradients::zeros_like(const DenseNet& net) {
    Gradients g;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        g.weights.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
        g.biases.push_back(Vector::Zero(net.biases[l].size()));
    }
    return g;
}

bool Gradients::all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    }
    return true;
}

double Gradients::squared_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        s += weights[l].squaredNorm() + biases[l].squaredNorm();
    return s;
}

double Gradients::dot(const Gradients& other) const {
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        s += weights[l].cwiseProduct(other.weights[l]).sum();
        s += biases[l].dot(other.biases[l]);
    }
    return s;
}

bool Gradients::operator==(const Gradients& other) const {
    if (weights.size() != other.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
    }
    return true;
}

AdamState AdamState::for_net(const DenseNet& net, double learning_rate) {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    AdamState s;
    s.first_moment = Gradients::zeros_like(net);
    s.second_moment = Gradients::zeros_like(net);
    s.learning_rate = learning_rate;
    return s;
}

DenseNet init_net(const std::vector<int>& layer_sizes, Activation hidden, Activation output,
                  std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw InvalidSpec("a network needs at least two layer sizes");
    for (int s : layer_sizes) {
        if (s < 1) throw InvalidSpec("layer sizes must be >= 1");
    }
    if (hidden == Activation::linear && layer_sizes.size() > 2)
        throw InvalidSpec("hidden activation must be tanh or relu");
    if (output == Activation::relu) throw InvalidSpec("output activation must be linear or tanh");

    DenseNet net;
    net.layer_sizes = layer_sizes;
    net.hidden_activation = hidden;
    net.output_activation = output;

    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int in = layer_sizes[l];
        const int out = layer_sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix w(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) w(r, c) = dist(rng);
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vector::Zero(out));
    }
    return net;
}

ForwardTrace forward_trace(const DenseNet& net, const Matrix& inputs) {
    if (inputs.cols() != net.input_dim())
        throw ShapeError("input width " + std::to_string(inputs.cols()) + " != network input " +
                         std::to_string(net.input_dim()));
    ForwardTrace trace;
    trace.activations.reserve(net.num_layers() + 1);
    trace.pre_activations.reserve(net.num_layers());
    trace.activations.push_back(inputs);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        Matrix z = trace.activations.back() * net.weights[l].transpose();
        z.rowwise() += net.biases[l].transpose();
        Matrix y = z;
        apply_activation(layer_activation(net, l), y);
        trace.pre_activations.push_back(std::move(z));
        trace.activations.push_back(std::move(y));
    }
    return trace;
}

Matrix forward(const DenseNet& net, const Matrix& inputs) {
    if (inputs.cols() != net.input_dim())
        throw ShapeError("input width " + std::to_string(inputs.cols()) + " != network input " +
                         std::to_string(net.input_dim()));
    Matrix x = inputs;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        Matrix z = x * net.weights[l].transpose();
        z.rowwise() += net.biases[l].transpose();
        apply_activation(layer_activation(net, l), z);
        x = std::move(z);
    }
    return x;
}

Vector forward(const DenseNet& net, const Vector& input) {
    return forward(net, Matrix(input.transpose())).row(0).transpose();
}

BackwardResult backward(const DenseNet& net, const ForwardTrace& trace, const Matrix& output_grad) {
    const auto& out = trace.output();
    if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols())
        throw ShapeError("output gradient shape does not match forward output");

    BackwardResult result;
    result.grads = Gradients::zeros_like(net);
    Matrix delta = output_grad;
    for (std::size_t l = net.num_layers(); l-- > 0;) {
        apply_activation_grad(layer_activation(net, l), trace.pre_activations[l],
                              trace.activations[l + 1], delta);
        result.grads.weights[l] = delta.transpose() * trace.activations[l];
        result.grads.biases[l] = delta.colwise().sum().transpose();
        delta = delta * net.weights[l];
    }
    result.input_grad = std::move(delta);
    return result;
}

Gradients backward(const DenseNet& net, const Matrix& inputs, const Matrix& output_grad) {
    return backward(net, forward_trace(net, inputs), output_grad).grads;
}

void adam_step(DenseNet& net, const Gradients& grads, AdamState& state) {
    check_congruent(net, grads);
    check_congruent(net, state.first_moment);
    check_congruent(net, state.second_moment);
    if (!grads.all_finite()) throw NumericError("non-finite gradient entry");

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double lr = state.learning_rate;
    const double eps = state.epsilon;

    auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        update(net.weights[l], grads.weights[l], state.first_moment.weights[l],
               state.second_moment.weights[l]);
        update(net.biases[l], grads.biases[l], state.first_moment.biases[l],
               state.second_moment.biases[l]);
    }
}

void polyak_update(DenseNet& target, const DenseNet& online, double tau) {
    if (target.layer_sizes != online.layer_sizes) throw ShapeError("polyak: architecture mismatch");
    for (std::size_t l = 0; l < target.num_layers(); ++l) {
        target.weights[l] = (1.0 - tau) * target.weights[l] + tau * online.weights[l];
        target.biases[l] = (1.0 - tau) * target.biases[l] + tau * online.biases[l];
    }
}

// ---- serialization ---------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json vector_to_json(const Vector& v) {
    auto out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw SchemaError("weight matrix has wrong row count");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw SchemaError("weight matrix has wrong column count");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

Vector vector_from_json(const nlohmann::json& j, Eigen::Index size) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size)
        throw SchemaError("bias vector has wrong length");
    Vector v(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

nlohmann::json gradients_to_json(const Gradients& g) {
    nlohmann::json j;
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
        j["weights"].push_back(matrix_to_json(g.weights[l]));
        j["biases"].push_back(vector_to_json(g.biases[l]));
    }
    return j;
}

Gradients gradients_from_json(const nlohmann::json& j) {
    Gradients g;
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (ws.size() != bs.size()) throw SchemaError("weights/biases layer count mismatch");
    for (std::size_t l = 0; l < ws.size(); ++l) {
        const auto rows = static_cast<Eigen::Index>(ws[l].size());
        const auto cols = rows > 0 ? static_cast<Eigen::Index>(ws[l][0].size()) : 0;
        g.weights.push_back(matrix_from_json(ws[l], rows, cols));
        g.biases.push_back(vector_from_json(bs[l], static_cast<Eigen::Index>(bs[l].size())));
    }
    return g;
}

}  // namespace

void to_json(nlohmann::json& j, const DenseNet& net) {
    j = nlohmann::json::object();
    j["layer_sizes"] = net.layer_sizes;
    j["activations"] = {to_string(net.hidden_activation), to_string(net.output_activation)};
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        j["weights"].push_back(matrix_to_json(net.weights[l]));
        j["biases"].push_back(vector_to_json(net.biases[l]));
    }
}

void from_json(const nlohmann::json& j, DenseNet& net) {
    try {
        DenseNet out;
        out.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
        const auto& acts = j.at("activations");
        if (!acts.is_array() || acts.size() != 2) throw SchemaError("activations must be [hidden, output]");
        out.hidden_activation = activation_from_string(acts[0].get<std::string>());
        out.output_activation = activation_from_string(acts[1].get<std::string>());
        if (out.layer_sizes.size() < 2) throw SchemaError("layer_sizes needs at least two entries");
        const auto& ws = j.at("weights");
        const auto& bs = j.at("biases");
        if (ws.size() + 1 != out.layer_sizes.size() || bs.size() + 1 != out.layer_sizes.size())
            throw SchemaError("layer count does not match layer_sizes");
        for (std::size_t l = 0; l + 1 < out.layer_sizes.size(); ++l) {
            out.weights.push_back(matrix_from_json(ws[l], out.layer_sizes[l + 1], out.layer_sizes[l]));
            out.biases.push_back(vector_from_json(bs[l], out.layer_sizes[l + 1]));
        }
        net = std::move(out);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("network json: ") + e.what());
    }
}

void to_json(nlohmann::json& j, const AdamState& state) {
    j = nlohmann::json::object();
    j["first_moment"] = gradients_to_json(state.first_moment);
    j["second_moment"] = gradients_to_json(state.second_moment);
    j["step_count"] = state.step_count;
    j["learning_rate"] = state.learning_rate;
    j["beta1"] = state.beta1;
    j["beta2"] = state.beta2;
    j["epsilon"] = state.epsilon;
}

void from_json(const nlohmann::json& j, AdamState& state) {
    try {
        AdamState s;
        s.first_moment = gradients_from_json(j.at("first_moment"));
        s.second_moment = gradients_from_json(j.at("second_moment"));
        s.step_count = j.at("step_count").get<std::uint64_t>();
        s.learning_rate = j.at("learning_rate").get<double>();
        s.beta1 = j.at("beta1").get<double>();
        s.beta2 = j.at("beta2").get<double>();
        s.epsilon = j.at("epsilon").get<double>();
        state = std::move(s);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("optimizer json: ") + e.what());
    }
}

}  // namespace o2o
