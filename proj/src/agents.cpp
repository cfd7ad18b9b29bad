#include "o2o/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "o2o/errors.hpp"

namespace o2o {

void Td3Hyper::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0,1]");
    if (policy_delay < 1) throw ConfigError("policy_delay must be >= 1");
    if (target_noise < 0.0 || noise_clip < 0.0 || explore_noise < 0.0)
        throw ConfigError("noise scales must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("learning rates must be > 0");
    for (int h : hidden) {
        if (h < 1) throw ConfigError("hidden sizes must be >= 1");
    }
}

void to_json(nlohmann::json& j, const Td3Hyper& h) {
    j = {{"gamma", h.gamma},           {"tau", h.tau},
         {"policy_delay", h.policy_delay}, {"target_noise", h.target_noise},
         {"noise_clip", h.noise_clip}, {"explore_noise", h.explore_noise},
         {"batch", h.batch},           {"actor_lr", h.actor_lr},
         {"critic_lr", h.critic_lr},   {"hidden", h.hidden}};
}

void from_json(const nlohmann::json& j, Td3Hyper& h) {
    Td3Hyper out;
    out.gamma = j.value("gamma", out.gamma);
    out.tau = j.value("tau", out.tau);
    out.policy_delay = j.value("policy_delay", out.policy_delay);
    out.target_noise = j.value("target_noise", out.target_noise);
    out.noise_clip = j.value("noise_clip", out.noise_clip);
    out.explore_noise = j.value("explore_noise", out.explore_noise);
    out.batch = j.value("batch", out.batch);
    out.actor_lr = j.value("actor_lr", out.actor_lr);
    out.critic_lr = j.value("critic_lr", out.critic_lr);
    out.hidden = j.value("hidden", out.hidden);
    out.validate();
    h = out;
}

namespace {

std::vector<int> sizes(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
}

DenseNet make_actor(int obs_dim, int action_dim, const Td3Hyper& h, std::uint64_t seed) {
    return init_net(sizes(obs_dim, h.hidden, action_dim), Activation::relu, Activation::tanh,
                    derive_seed(seed, "actor"));
}

DenseNet make_critic(int obs_dim, int action_dim, const Td3Hyper& h, std::uint64_t seed,
                     std::string_view tag) {
    return init_net(sizes(obs_dim + action_dim, h.hidden, 1), Activation::relu, Activation::linear,
                    derive_seed(seed, tag));
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

Matrix target_actions(const Td3Agent& agent, const Matrix& next_obs, Rng& rng) {
    Matrix a = forward(agent.actor_target, next_obs);
    const auto& h = agent.hyper;
    if (h.target_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, h.target_noise);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a.data()[i] += std::clamp(noise(rng), -h.noise_clip, h.noise_clip);
    }
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

// One MSE regression step of `critic` toward `targets`; returns the loss.
double regress_critic(DenseNet& critic, AdamState& opt, const Matrix& inputs, const Vector& targets) {
    const auto n = static_cast<double>(inputs.rows());
    const ForwardTrace trace = forward_trace(critic, inputs);
    const Vector diff = trace.output().col(0) - targets;
    const double loss = diff.squaredNorm() / n;
    if (!std::isfinite(loss)) return loss;
    Matrix grad = (2.0 / n) * diff;
    adam_step(critic, backward(critic, trace, grad).grads, opt);
    return loss;
}

[[noreturn]] void numeric_failure(const char* what, const Td3Agent& agent, const LossReport& r) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at update " << agent.update_count
        << " (critic1_loss=" << r.critic1_loss << ", critic2_loss=" << r.critic2_loss
        << ", actor_loss=" << r.actor_loss << ", mean_target=" << r.mean_target << ")";
    throw NumericError(msg.str());
}

}  // namespace

bool Td3Agent::same_state(const Td3Agent& o) const {
    auto same_opt = [](const AdamState& a, const AdamState& b) {
        return a.step_count == b.step_count && a.first_moment == b.first_moment &&
               a.second_moment == b.second_moment && a.learning_rate == b.learning_rate;
    };
    return obs_dim == o.obs_dim && action_dim == o.action_dim && hyper == o.hyper &&
           actor == o.actor && critic1 == o.critic1 && critic2 == o.critic2 &&
           actor_target == o.actor_target && critic1_target == o.critic1_target &&
           critic2_target == o.critic2_target && same_opt(actor_opt, o.actor_opt) &&
           same_opt(critic1_opt, o.critic1_opt) && same_opt(critic2_opt, o.critic2_opt) &&
           update_count == o.update_count;
}

Td3Agent make_agent(int obs_dim, int action_dim, const Td3Hyper& hyper, std::uint64_t seed) {
    hyper.validate();
    if (obs_dim < 1 || action_dim < 1) throw InvalidSpec("agent dimensions must be >= 1");
    Td3Agent a;
    a.obs_dim = obs_dim;
    a.action_dim = action_dim;
    a.hyper = hyper;
    a.actor = make_actor(obs_dim, action_dim, hyper, seed);
    a.critic1 = make_critic(obs_dim, action_dim, hyper, seed, "critic1");
    a.critic2 = make_critic(obs_dim, action_dim, hyper, seed, "critic2");
    a.actor_target = a.actor;
    a.critic1_target = a.critic1;
    a.critic2_target = a.critic2;
    a.actor_opt = AdamState::for_net(a.actor, hyper.actor_lr);
    a.critic1_opt = AdamState::for_net(a.critic1, hyper.critic_lr);
    a.critic2_opt = AdamState::for_net(a.critic2, hyper.critic_lr);
    return a;
}

Td3Agent reset_parameters(const Td3Agent& agent, std::uint64_t seed) {
    return make_agent(agent.obs_dim, agent.action_dim, agent.hyper, seed);
}

Vector act(const Td3Agent& agent, const Vector& obs, bool explore, Rng& rng) {
    if (obs.size() != agent.obs_dim) throw ShapeError("observation width does not match agent");
    Vector a = forward(agent.actor, obs);
    if (explore && agent.hyper.explore_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, agent.hyper.explore_noise);
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += noise(rng);
    }
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

Policy actor_policy(const DenseNet& actor) {
    return [actor](const Vector& obs, Rng&) { return forward(actor, obs); };
}

Gradients actor_gradients(const Td3Agent& agent, const Batch& batch, const RegularizerConfig& reg,
                          double* loss_out, double* q_scale_out) {
    const auto n = static_cast<double>(batch.size());
    const ForwardTrace actor_trace = forward_trace(agent.actor, batch.obs);
    const Matrix& pi = actor_trace.output();
    const ForwardTrace q_trace = forward_trace(agent.critic1, concat_cols(batch.obs, pi));
    const Matrix& q = q_trace.output();

    double lambda = 1.0;
    if (reg.q_normalization) {
        const double scale = q.cwiseAbs().mean();
        lambda = 1.0 / std::max(scale, 1e-8);
    }
    const Matrix diff = pi - batch.actions;
    if (loss_out)
        *loss_out = -lambda * q.mean() + reg.bc_coefficient * diff.squaredNorm() / n;
    if (q_scale_out) *q_scale_out = lambda;

    // d(loss)/dQ = -lambda / n per sample; pull it back to the action inputs.
    const Matrix dq = Matrix::Constant(q.rows(), 1, -lambda / n);
    const BackwardResult critic_back = backward(agent.critic1, q_trace, dq);
    Matrix dpi = critic_back.input_grad.rightCols(agent.action_dim);
    if (reg.bc_coefficient != 0.0) dpi += (2.0 * reg.bc_coefficient / n) * diff;
    return backward(agent.actor, actor_trace, dpi).grads;
}

LossReport td3_update(Td3Agent& agent, const Batch& batch, const RegularizerConfig& reg, Rng& rng) {
    if (batch.size() == 0) throw InvalidArgument("td3_update needs a non-empty batch");
    if (batch.obs.cols() != agent.obs_dim || batch.actions.cols() != agent.action_dim)
        throw ShapeError("batch widths do not match agent");
    if (reg.bc_coefficient < 0.0) throw ConfigError("bc coefficient must be >= 0");
    const auto& h = agent.hyper;
    agent.update_count += 1;
    LossReport report;

    const Matrix next_a = target_actions(agent, batch.next_obs, rng);
    const Matrix next_in = concat_cols(batch.next_obs, next_a);
    const Vector q1t = forward(agent.critic1_target, next_in).col(0);
    const Vector q2t = forward(agent.critic2_target, next_in).col(0);
    const Vector not_done = Vector::Ones(batch.terminated.size()) - batch.terminated;
    const Vector y = batch.rewards + h.gamma * not_done.cwiseProduct(q1t.cwiseMin(q2t));
    report.mean_target = y.mean();

    const Matrix in = concat_cols(batch.obs, batch.actions);
    report.critic1_loss = regress_critic(agent.critic1, agent.critic1_opt, in, y);
    report.critic2_loss = regress_critic(agent.critic2, agent.critic2_opt, in, y);
    if (!std::isfinite(report.critic1_loss) || !std::isfinite(report.critic2_loss))
        numeric_failure("critic loss", agent, report);

    if (agent.update_count % static_cast<std::uint64_t>(h.policy_delay) == 0) {
        const Gradients g = actor_gradients(agent, batch, reg, &report.actor_loss, &report.q_scale);
        if (!std::isfinite(report.actor_loss) || !g.all_finite())
            numeric_failure("actor loss", agent, report);
        adam_step(agent.actor, g, agent.actor_opt);
        report.actor_updated = true;
        polyak_update(agent.actor_target, agent.actor, h.tau);
        polyak_update(agent.critic1_target, agent.critic1, h.tau);
        polyak_update(agent.critic2_target, agent.critic2, h.tau);
    }
    return report;
}

// ---- pretraining -----------------------------------------------------------

TransitionTable::TransitionTable(const std::vector<Transition>& transitions)
    : all_(make_batch(transitions)) {}

Batch TransitionTable::gather(const std::vector<std::size_t>& rows) const {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Batch b;
    b.obs.resize(n, all_.obs.cols());
    b.actions.resize(n, all_.actions.cols());
    b.next_obs.resize(n, all_.next_obs.cols());
    b.rewards.resize(n);
    b.terminated.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
        b.obs.row(i) = all_.obs.row(r);
        b.actions.row(i) = all_.actions.row(r);
        b.next_obs.row(i) = all_.next_obs.row(r);
        b.rewards[i] = all_.rewards[r];
        b.terminated[i] = all_.terminated[r];
    }
    return b;
}

Batch TransitionTable::sample(std::size_t batch, Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, size() - 1);
    std::vector<std::size_t> rows(batch);
    for (auto& r : rows) r = pick(rng);
    return gather(rows);
}

DenseNet bc_pretrain(const OfflineDataset& dataset, int steps, std::uint64_t seed,
                     const Td3Hyper& hyper) {
    if (steps < 1) throw InvalidArgument("bc_pretrain needs steps >= 1");
    hyper.validate();
    const TransitionTable table(dataset.flatten());
    DenseNet actor = make_actor(dataset.obs_dim(), dataset.action_dim(), hyper, seed);
    AdamState opt = AdamState::for_net(actor, hyper.actor_lr);
    Rng rng(derive_seed(seed, "bc-batches"));
    const auto batch = static_cast<std::size_t>(hyper.batch);
    for (int step = 0; step < steps; ++step) {
        const Batch b = table.sample(batch, rng);
        const ForwardTrace trace = forward_trace(actor, b.obs);
        const Matrix grad = (2.0 / static_cast<double>(batch)) * (trace.output() - b.actions);
        adam_step(actor, backward(actor, trace, grad).grads, opt);
    }
    return actor;
}

FqeResult fqe(const DenseNet& policy, const std::vector<Transition>& transitions, int steps,
              std::uint64_t seed, const Td3Hyper& hyper) {
    if (steps < 1) throw InvalidArgument("fqe needs steps >= 1");
    if (transitions.empty()) throw InvalidArgument("fqe needs transitions");
    hyper.validate();
    const TransitionTable table(transitions);
    const int obs_dim = static_cast<int>(table.all().obs.cols());
    const int action_dim = static_cast<int>(table.all().actions.cols());
    if (policy.input_dim() != obs_dim || policy.output_dim() != action_dim)
        throw ShapeError("policy does not match dataset widths");

    FqeResult out;
    out.critic = make_critic(obs_dim, action_dim, hyper, seed, "fqe-critic");
    DenseNet target = out.critic;
    AdamState opt = AdamState::for_net(out.critic, hyper.critic_lr);
    Rng rng(derive_seed(seed, "fqe-batches"));
    out.td_loss.reserve(static_cast<std::size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        const Batch b = table.sample(static_cast<std::size_t>(hyper.batch), rng);
        const Matrix next_a = forward(policy, b.next_obs);
        const Vector q_next = forward(target, concat_cols(b.next_obs, next_a)).col(0);
        const Vector not_done = Vector::Ones(b.terminated.size()) - b.terminated;
        const Vector y = b.rewards + hyper.gamma * not_done.cwiseProduct(q_next);
        const double loss = regress_critic(out.critic, opt, concat_cols(b.obs, b.actions), y);
        if (!std::isfinite(loss))
            throw NumericError("non-finite FQE loss at step " + std::to_string(step));
        out.td_loss.push_back(loss);
        polyak_update(target, out.critic, hyper.tau);
    }
    return out;
}

FqeResult fqe(const DenseNet& policy, const OfflineDataset& dataset, int steps, std::uint64_t seed,
              const Td3Hyper& hyper) {
    return fqe(policy, dataset.flatten(), steps, seed, hyper);
}

double td_error(const DenseNet& critic, const DenseNet& policy,
                const std::vector<Transition>& transitions, double gamma) {
    const Batch b = make_batch(transitions);
    const Vector q = forward(critic, concat_cols(b.obs, b.actions)).col(0);
    const Matrix next_a = forward(policy, b.next_obs);
    const Vector q_next = forward(critic, concat_cols(b.next_obs, next_a)).col(0);
    const Vector not_done = Vector::Ones(b.terminated.size()) - b.terminated;
    const Vector y = b.rewards + gamma * not_done.cwiseProduct(q_next);
    return (q - y).squaredNorm() / static_cast<double>(b.size());
}

Td3Agent agent_from_bc(const DenseNet& actor, const DenseNet& critic, const Td3Hyper& hyper,
                       std::uint64_t seed) {
    const int obs_dim = actor.input_dim();
    const int action_dim = actor.output_dim();
    if (critic.input_dim() != obs_dim + action_dim || critic.output_dim() != 1)
        throw ShapeError("critic does not match actor widths");
    Td3Agent a = make_agent(obs_dim, action_dim, hyper, seed);
    if (!(actor.layer_sizes == a.actor.layer_sizes) || !(critic.layer_sizes == a.critic1.layer_sizes))
        throw ShapeError("pretrained nets do not match the agent architecture");
    a.actor = actor;
    a.critic1 = critic;
    a.critic2 = critic;
    a.actor_target = a.actor;
    a.critic1_target = a.critic1;
    a.critic2_target = a.critic2;
    return a;
}

Td3Agent offline_rl_pretrain(const OfflineDataset& dataset, int steps, double beta,
                             std::uint64_t seed, const Td3Hyper& hyper) {
    if (steps < 1) throw InvalidArgument("offline_rl_pretrain needs steps >= 1");
    if (!(beta > 0.0)) throw InvalidArgument("offline_rl_pretrain needs beta > 0");
    const TransitionTable table(dataset.flatten());
    Td3Agent agent = make_agent(dataset.obs_dim(), dataset.action_dim(), hyper, seed);
    Rng rng(derive_seed(seed, "offline-rl"));
    const RegularizerConfig reg{beta, true};
    for (int step = 0; step < steps; ++step)
        td3_update(agent, table.sample(static_cast<std::size_t>(hyper.batch), rng), reg, rng);
    return agent;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_file_atomic(path, j.dump() + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

}  // namespace

void save_checkpoint(const Td3Agent& agent, const std::filesystem::path& dir, double beta,
                     const nlohmann::json& extra_manifest) {
    std::filesystem::create_directories(dir);
    write_json(dir / "actor.json", agent.actor);
    write_json(dir / "critic1.json", agent.critic1);
    write_json(dir / "critic2.json", agent.critic2);
    write_json(dir / "actor_target.json", agent.actor_target);
    write_json(dir / "critic1_target.json", agent.critic1_target);
    write_json(dir / "critic2_target.json", agent.critic2_target);
    write_json(dir / "actor_opt.json", agent.actor_opt);
    write_json(dir / "critic1_opt.json", agent.critic1_opt);
    write_json(dir / "critic2_opt.json", agent.critic2_opt);
    nlohmann::json manifest = extra_manifest.is_object() ? extra_manifest : nlohmann::json::object();
    manifest["obs_dim"] = agent.obs_dim;
    manifest["action_dim"] = agent.action_dim;
    manifest["hyper"] = agent.hyper;
    manifest["update_count"] = agent.update_count;
    manifest["beta"] = beta;
    // Written last: its presence marks a complete checkpoint.
    write_json(dir / "manifest.json", manifest);
}

Td3Agent load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest_out) {
    if (!std::filesystem::exists(dir / "manifest.json"))
        throw FileError("no checkpoint manifest in " + dir.string());
    const nlohmann::json manifest = read_json(dir / "manifest.json");
    Td3Agent a;
    try {
        a.obs_dim = manifest.at("obs_dim").get<int>();
        a.action_dim = manifest.at("action_dim").get<int>();
        a.hyper = manifest.at("hyper").get<Td3Hyper>();
        a.update_count = manifest.at("update_count").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint manifest: ") + e.what());
    }
    a.actor = read_json(dir / "actor.json").get<DenseNet>();
    a.critic1 = read_json(dir / "critic1.json").get<DenseNet>();
    a.critic2 = read_json(dir / "critic2.json").get<DenseNet>();
    a.actor_target = read_json(dir / "actor_target.json").get<DenseNet>();
    a.critic1_target = read_json(dir / "critic1_target.json").get<DenseNet>();
    a.critic2_target = read_json(dir / "critic2_target.json").get<DenseNet>();
    a.actor_opt = read_json(dir / "actor_opt.json").get<AdamState>();
    a.critic1_opt = read_json(dir / "critic1_opt.json").get<AdamState>();
    a.critic2_opt = read_json(dir / "critic2_opt.json").get<AdamState>();
    if (a.actor.input_dim() != a.obs_dim || a.actor.output_dim() != a.action_dim)
        throw SchemaError("checkpoint actor does not match manifest dims");
    if (manifest_out) *manifest_out = manifest;
    return a;
}

}  // namespace o2o
