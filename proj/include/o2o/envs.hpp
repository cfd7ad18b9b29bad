#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "o2o/nn.hpp"
#include "o2o/seeding.hpp"

namespace o2o {

enum class EnvKind { point_goal_sparse, point_goal_dense, pendulum };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

struct EnvSpec {
    EnvKind kind = EnvKind::pendulum;
    int horizon = 200;
    int obs_dim = 3;
    int action_dim = 1;

    // point_goal
    double step_gain = 0.3;
    double goal_radius = 0.5;
    double arena_min = 0.0;
    double arena_max = 10.0;
    double goal_x = 9.0;
    double goal_y = 9.0;
    double noise_std = 0.01;

    // pendulum
    double gravity = 10.0;
    double mass = 1.0;
    double length = 1.0;
    double dt = 0.05;
    double max_torque = 2.0;
    double max_speed = 8.0;

    static EnvSpec make(EnvKind kind);
    bool is_point_goal() const { return kind != EnvKind::pendulum; }
};

struct StepResult {
    Vector next_obs;
    double reward = 0.0;
    bool terminated = false;
    bool truncated = false;

    bool done() const { return terminated || truncated; }
};

/// Process-wide count of environment transitions; pretraining code must
/// leave it untouched.
std::uint64_t env_interaction_count();

class Env {
public:
    explicit Env(EnvSpec spec);

    Vector reset(std::uint64_t seed);
    StepResult step(const Vector& action);

    Vector observation() const;
    const EnvSpec& spec() const { return spec_; }
    int elapsed_steps() const { return t_; }

    // Direct state access for tests and controller tuning.
    void set_point_position(double x, double y);
    void set_pendulum_state(double theta, double theta_dot);
    double theta() const { return theta_; }
    double theta_dot() const { return theta_dot_; }

private:
    EnvSpec spec_;
    Rng noise_rng_;
    int t_ = 0;
    bool started_ = false;
    bool finished_ = false;
    double x_ = 0.0, y_ = 0.0;
    double theta_ = 0.0, theta_dot_ = 0.0;
};

/// Wraps an angle into [-pi, pi).
double wrap_angle(double theta);

enum class BehaviorKind { uniform_random, expert, noisy_expert, epsilon_mixture };

struct BehaviorSpec {
    BehaviorKind kind = BehaviorKind::expert;
    double sigma = 0.0;    // noisy_expert
    double epsilon = 0.0;  // epsilon_mixture

    static BehaviorSpec uniform_random() { return {BehaviorKind::uniform_random, 0.0, 0.0}; }
    static BehaviorSpec expert() { return {BehaviorKind::expert, 0.0, 0.0}; }
    static BehaviorSpec noisy_expert(double sigma);
    static BehaviorSpec epsilon_mixture(double epsilon);

    void validate() const;
    std::string describe() const;
    bool operator==(const BehaviorSpec&) const = default;
};

void to_json(nlohmann::json& j, const BehaviorSpec& b);
void from_json(const nlohmann::json& j, BehaviorSpec& b);

/// Deterministic expert. Point: clip(goal - pos) per axis. Pendulum: energy
/// pumping far from upright, PD stabilization near upright.
Vector expert_action(const EnvSpec& spec, const Vector& obs);

Vector scripted_action(const BehaviorSpec& behavior, const EnvSpec& spec, const Vector& obs,
                       Rng& rng);

using Policy = std::function<Vector(const Vector& obs, Rng& rng)>;

Policy behavior_policy(const BehaviorSpec& behavior, const EnvSpec& spec);

struct ReferenceScores {
    EnvKind env = EnvKind::pendulum;
    double random_return = 0.0;
    double expert_return = 1.0;
    int episodes = 0;
    std::uint64_t seed = 0;

    double normalize(double raw_return) const;
    bool operator==(const ReferenceScores&) const = default;
};

void to_json(nlohmann::json& j, const ReferenceScores& r);
void from_json(const nlohmann::json& j, ReferenceScores& r);

struct Episode {
    std::vector<Vector> observations;  // length steps + 1
    std::vector<Vector> actions;
    std::vector<double> rewards;
    bool terminated = false;
    bool truncated = false;

    double raw_return() const;
    std::size_t length() const { return actions.size(); }
};

/// Rolls one episode to termination or horizon. The env is reset with
/// env_seed; the policy draws from policy_rng.
Episode rollout(const EnvSpec& spec, const Policy& policy, std::uint64_t env_seed, Rng& policy_rng);

struct EvalResult {
    std::vector<double> raw_returns;
    std::vector<double> normalized;
    double mean = 0.0;  // of normalized
};

EvalResult evaluate_policy(const Policy& policy, const EnvSpec& spec,
                           const ReferenceScores& reference, int episodes, std::uint64_t seed);

ReferenceScores compute_reference_scores(const EnvSpec& spec, std::uint64_t seed, int episodes = 100);

}  // namespace o2o
