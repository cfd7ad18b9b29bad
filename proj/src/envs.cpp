#include "o2o/envs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "o2o/errors.hpp"

namespace o2o {

namespace {

std::atomic<std::uint64_t> g_interactions{0};

// Swing-up controller gains, tuned by simulation from hanging starts.
constexpr double kEnergyGain = 5.0;
constexpr double kStabilizeP = 10.0;
constexpr double kStabilizeD = 2.0;
constexpr double kCatchAngle = 0.5;

}  // namespace

std::uint64_t env_interaction_count() { return g_interactions.load(); }

std::string to_string(EnvKind kind) {
    switch (kind) {
        case EnvKind::point_goal_sparse: return "point_goal_sparse";
        case EnvKind::point_goal_dense: return "point_goal_dense";
        case EnvKind::pendulum: return "pendulum";
    }
    return "pendulum";
}

EnvKind env_kind_from_string(const std::string& name) {
    if (name == "point_goal_sparse") return EnvKind::point_goal_sparse;
    if (name == "point_goal_dense") return EnvKind::point_goal_dense;
    if (name == "pendulum") return EnvKind::pendulum;
    throw ConfigError("unknown environment '" + name + "'");
}

EnvSpec EnvSpec::make(EnvKind kind) {
    EnvSpec s;
    s.kind = kind;
    if (kind == EnvKind::pendulum) {
        s.horizon = 200;
        s.obs_dim = 3;
        s.action_dim = 1;
    } else {
        s.horizon = 100;
        s.obs_dim = 4;
        s.action_dim = 2;
    }
    return s;
}

double wrap_angle(double theta) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(theta + std::numbers::pi, two_pi);
    if (w < 0.0) w += two_pi;
    return w - std::numbers::pi;
}

Env::Env(EnvSpec spec) : spec_(std::move(spec)) {
    if (spec_.horizon < 1) throw InvalidSpec("horizon must be >= 1");
}

Vector Env::reset(std::uint64_t seed) {
    Rng rng(seed);
    noise_rng_.seed(derive_seed(seed, "transition-noise"));
    t_ = 0;
    started_ = true;
    finished_ = false;
    if (spec_.is_point_goal()) {
        std::uniform_real_distribution<double> u(spec_.arena_min, spec_.arena_max);
        x_ = u(rng);
        y_ = u(rng);
    } else {
        std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
        std::uniform_real_distribution<double> vel(-1.0, 1.0);
        theta_ = angle(rng);
        theta_dot_ = vel(rng);
    }
    return observation();
}

Vector Env::observation() const {
    if (spec_.is_point_goal()) {
        Vector o(4);
        o << x_, y_, spec_.goal_x - x_, spec_.goal_y - y_;
        return o;
    }
    Vector o(3);
    o << std::cos(theta_), std::sin(theta_), theta_dot_;
    return o;
}

void Env::set_point_position(double x, double y) {
    x_ = x;
    y_ = y;
}

void Env::set_pendulum_state(double theta, double theta_dot) {
    theta_ = theta;
    theta_dot_ = theta_dot;
}

StepResult Env::step(const Vector& action) {
    if (!started_) throw UsageError("step before reset");
    if (finished_) throw UsageError("step after episode end; call reset");
    if (action.size() != spec_.action_dim)
        throw ShapeError("action dimension " + std::to_string(action.size()) + " != " +
                         std::to_string(spec_.action_dim));
    const Vector a = action.cwiseMax(-1.0).cwiseMin(1.0);
    ++g_interactions;
    ++t_;

    StepResult r;
    if (spec_.is_point_goal()) {
        std::normal_distribution<double> noise(0.0, 1.0);
        const double nx = spec_.noise_std > 0.0 ? spec_.noise_std * noise(noise_rng_) : 0.0;
        const double ny = spec_.noise_std > 0.0 ? spec_.noise_std * noise(noise_rng_) : 0.0;
        x_ = std::clamp(x_ + spec_.step_gain * a[0] + nx, spec_.arena_min, spec_.arena_max);
        y_ = std::clamp(y_ + spec_.step_gain * a[1] + ny, spec_.arena_min, spec_.arena_max);
        const double dist = std::hypot(x_ - spec_.goal_x, y_ - spec_.goal_y);
        const bool reached = dist <= spec_.goal_radius;
        if (spec_.kind == EnvKind::point_goal_sparse)
            r.reward = reached ? 1.0 : 0.0;
        else
            r.reward = -dist / 10.0;
        r.terminated = reached;
    } else {
        const double torque = spec_.max_torque * a[0];
        const double th = wrap_angle(theta_);
        r.reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * torque * torque);
        const double l = spec_.length;
        const double acc = 3.0 * spec_.gravity / (2.0 * l) * std::sin(theta_) +
                           3.0 * torque / (spec_.mass * l * l);
        theta_dot_ = std::clamp(theta_dot_ + acc * spec_.dt, -spec_.max_speed, spec_.max_speed);
        theta_ = theta_ + theta_dot_ * spec_.dt;
    }
    r.truncated = !r.terminated && t_ >= spec_.horizon;
    finished_ = r.terminated || r.truncated;
    r.next_obs = observation();
    return r;
}

// ---- behaviors -------------------------------------------------------------

BehaviorSpec BehaviorSpec::noisy_expert(double sigma) {
    BehaviorSpec b{BehaviorKind::noisy_expert, sigma, 0.0};
    b.validate();
    return b;
}

BehaviorSpec BehaviorSpec::epsilon_mixture(double epsilon) {
    BehaviorSpec b{BehaviorKind::epsilon_mixture, 0.0, epsilon};
    b.validate();
    return b;
}

void BehaviorSpec::validate() const {
    if (!(sigma >= 0.0)) throw ConfigError("behavior sigma must be >= 0");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("behavior epsilon must be in [0,1]");
}

std::string BehaviorSpec::describe() const {
    switch (kind) {
        case BehaviorKind::uniform_random: return "uniform_random";
        case BehaviorKind::expert: return "expert";
        case BehaviorKind::noisy_expert: return "noisy_expert(" + std::to_string(sigma) + ")";
        case BehaviorKind::epsilon_mixture: return "epsilon_mixture(" + std::to_string(epsilon) + ")";
    }
    return "expert";
}

void to_json(nlohmann::json& j, const BehaviorSpec& b) {
    switch (b.kind) {
        case BehaviorKind::uniform_random: j = {{"kind", "uniform_random"}}; break;
        case BehaviorKind::expert: j = {{"kind", "expert"}}; break;
        case BehaviorKind::noisy_expert: j = {{"kind", "noisy_expert"}, {"sigma", b.sigma}}; break;
        case BehaviorKind::epsilon_mixture:
            j = {{"kind", "epsilon_mixture"}, {"epsilon", b.epsilon}};
            break;
    }
}

void from_json(const nlohmann::json& j, BehaviorSpec& b) {
    const auto kind = j.at("kind").get<std::string>();
    BehaviorSpec out;
    if (kind == "uniform_random") {
        out.kind = BehaviorKind::uniform_random;
    } else if (kind == "expert") {
        out.kind = BehaviorKind::expert;
    } else if (kind == "noisy_expert") {
        out.kind = BehaviorKind::noisy_expert;
        out.sigma = j.at("sigma").get<double>();
    } else if (kind == "epsilon_mixture") {
        out.kind = BehaviorKind::epsilon_mixture;
        out.epsilon = j.at("epsilon").get<double>();
    } else {
        throw ConfigError("unknown behavior kind '" + kind + "'");
    }
    out.validate();
    b = out;
}

Vector expert_action(const EnvSpec& spec, const Vector& obs) {
    if (obs.size() != spec.obs_dim) throw ShapeError("observation width does not match env");
    if (spec.is_point_goal()) {
        Vector a(2);
        a << obs[2], obs[3];
        return a.cwiseMax(-1.0).cwiseMin(1.0);
    }
    const double theta = std::atan2(obs[1], obs[0]);
    const double theta_dot = obs[2];
    const double inertia = spec.mass * spec.length * spec.length / 3.0;
    const double energy = 0.5 * inertia * theta_dot * theta_dot +
                          spec.mass * spec.gravity * 0.5 * spec.length * (std::cos(theta) - 1.0);
    double torque;
    if (std::abs(theta) < kCatchAngle) {
        torque = -(kStabilizeP * theta + kStabilizeD * theta_dot);
    } else {
        const double direction = theta_dot >= 0.0 ? 1.0 : -1.0;
        torque = -kEnergyGain * energy * direction;
    }
    Vector a(1);
    a[0] = std::clamp(torque / spec.max_torque, -1.0, 1.0);
    return a;
}

Vector scripted_action(const BehaviorSpec& behavior, const EnvSpec& spec, const Vector& obs,
                       Rng& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto random_action = [&] {
        Vector a(spec.action_dim);
        for (int i = 0; i < spec.action_dim; ++i) a[i] = unit(rng);
        return a;
    };
    switch (behavior.kind) {
        case BehaviorKind::uniform_random: return random_action();
        case BehaviorKind::expert: return expert_action(spec, obs);
        case BehaviorKind::noisy_expert: {
            Vector a = expert_action(spec, obs);
            std::normal_distribution<double> noise(0.0, 1.0);
            for (int i = 0; i < a.size(); ++i) a[i] += behavior.sigma * noise(rng);
            return a.cwiseMax(-1.0).cwiseMin(1.0);
        }
        case BehaviorKind::epsilon_mixture: {
            std::uniform_real_distribution<double> coin(0.0, 1.0);
            if (coin(rng) < behavior.epsilon) return random_action();
            return expert_action(spec, obs);
        }
    }
    return expert_action(spec, obs);
}

Policy behavior_policy(const BehaviorSpec& behavior, const EnvSpec& spec) {
    return [behavior, spec](const Vector& obs, Rng& rng) {
        return scripted_action(behavior, spec, obs, rng);
    };
}

// ---- evaluation ------------------------------------------------------------

double ReferenceScores::normalize(double raw_return) const {
    return (raw_return - random_return) / (expert_return - random_return);
}

void to_json(nlohmann::json& j, const ReferenceScores& r) {
    j = {{"env", to_string(r.env)},
         {"random_return", r.random_return},
         {"expert_return", r.expert_return},
         {"episodes", r.episodes},
         {"seed", r.seed}};
}

void from_json(const nlohmann::json& j, ReferenceScores& r) {
    ReferenceScores out;
    out.env = env_kind_from_string(j.at("env").get<std::string>());
    out.random_return = j.at("random_return").get<double>();
    out.expert_return = j.at("expert_return").get<double>();
    out.episodes = j.at("episodes").get<int>();
    out.seed = j.at("seed").get<std::uint64_t>();
    if (!(out.expert_return > out.random_return))
        throw ConfigError("reference scores require expert_return > random_return");
    r = out;
}

double Episode::raw_return() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
}

Episode rollout(const EnvSpec& spec, const Policy& policy, std::uint64_t env_seed, Rng& policy_rng) {
    Env env(spec);
    Episode ep;
    ep.observations.push_back(env.reset(env_seed));
    while (true) {
        Vector a = policy(ep.observations.back(), policy_rng);
        StepResult r = env.step(a);
        ep.actions.push_back(a.cwiseMax(-1.0).cwiseMin(1.0));
        ep.rewards.push_back(r.reward);
        ep.observations.push_back(std::move(r.next_obs));
        if (r.done()) {
            ep.terminated = r.terminated;
            ep.truncated = r.truncated;
            break;
        }
    }
    return ep;
}

EvalResult evaluate_policy(const Policy& policy, const EnvSpec& spec,
                           const ReferenceScores& reference, int episodes, std::uint64_t seed) {
    if (episodes < 1) throw InvalidArgument("evaluate_policy needs episodes >= 1");
    EvalResult out;
    Rng policy_rng(derive_seed(seed, "policy"));
    double total = 0.0;
    for (int i = 0; i < episodes; ++i) {
        const Episode ep = rollout(spec, policy, derive_seed(seed, "episode", i), policy_rng);
        const double raw = ep.raw_return();
        const double norm = reference.normalize(raw);
        out.raw_returns.push_back(raw);
        out.normalized.push_back(norm);
        total += norm;
    }
    out.mean = total / episodes;
    return out;
}

ReferenceScores compute_reference_scores(const EnvSpec& spec, std::uint64_t seed, int episodes) {
    if (episodes < 1) throw InvalidArgument("reference scores need episodes >= 1");
    auto mean_raw = [&](const BehaviorSpec& b, std::string_view tag) {
        const Policy p = behavior_policy(b, spec);
        const std::uint64_t s = derive_seed(seed, tag);
        Rng rng(derive_seed(s, "policy"));
        double total = 0.0;
        for (int i = 0; i < episodes; ++i)
            total += rollout(spec, p, derive_seed(s, "episode", i), rng).raw_return();
        return total / episodes;
    };
    ReferenceScores r;
    r.env = spec.kind;
    r.random_return = mean_raw(BehaviorSpec::uniform_random(), "random");
    r.expert_return = mean_raw(BehaviorSpec::expert(), "expert");
    r.episodes = episodes;
    r.seed = seed;
    if (!(r.expert_return > r.random_return))
        throw ConfigError("degenerate reference scores: expert_return <= random_return");
    return r;
}

}  // namespace o2o
