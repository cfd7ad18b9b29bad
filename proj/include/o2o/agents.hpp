#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2o/data.hpp"
#include "o2o/envs.hpp"
#include "o2o/nn.hpp"
#include "o2o/seeding.hpp"

namespace o2o {

struct Td3Hyper {
    double gamma = 0.99;
    double tau = 0.005;
    int policy_delay = 2;
    double target_noise = 0.2;
    double noise_clip = 0.5;
    double explore_noise = 0.1;
    int batch = 256;
    double actor_lr = 3e-4;
    double critic_lr = 3e-4;
    std::vector<int> hidden = {64, 64};

    void validate() const;
    bool operator==(const Td3Hyper&) const = default;
};

void to_json(nlohmann::json& j, const Td3Hyper& h);
/// Missing keys keep their defaults, so configs can override a subset.
void from_json(const nlohmann::json& j, Td3Hyper& h);

struct RegularizerConfig {
    double bc_coefficient = 0.0;  // beta
    bool q_normalization = false;
};

/// Deterministic actor (tanh output in the action box), twin critics over
/// obs||action, Polyak target copies and one Adam state per online net.
struct Td3Agent {
    int obs_dim = 0;
    int action_dim = 0;
    Td3Hyper hyper;
    DenseNet actor, critic1, critic2;
    DenseNet actor_target, critic1_target, critic2_target;
    AdamState actor_opt, critic1_opt, critic2_opt;
    std::uint64_t update_count = 0;

    /// Parameters, targets, optimizer states and update counter.
    bool same_state(const Td3Agent& other) const;
};

Td3Agent make_agent(int obs_dim, int action_dim, const Td3Hyper& hyper, std::uint64_t seed);

/// Fresh networks from `seed`, zeroed optimizers, targets equal to the online
/// nets, update counter zero. Dimensions and hyperparameters are kept.
Td3Agent reset_parameters(const Td3Agent& agent, std::uint64_t seed);

Vector act(const Td3Agent& agent, const Vector& obs, bool explore, Rng& rng);

/// Greedy policy closure over a copy of the actor.
Policy actor_policy(const DenseNet& actor);

struct LossReport {
    double critic1_loss = 0.0;
    double critic2_loss = 0.0;
    double mean_target = 0.0;
    bool actor_updated = false;
    double actor_loss = 0.0;
    double q_scale = 1.0;  // lambda applied to the Q term
};

/// Actor-loss gradients for the current critic, without applying them:
/// loss = -lambda * mean Q1(s, actor(s)) + beta * mean ||actor(s) - a||^2.
Gradients actor_gradients(const Td3Agent& agent, const Batch& batch, const RegularizerConfig& reg,
                          double* loss_out = nullptr, double* q_scale_out = nullptr);

LossReport td3_update(Td3Agent& agent, const Batch& batch, const RegularizerConfig& reg, Rng& rng);

/// All dataset transitions as row-stacked matrices for fast minibatching.
class TransitionTable {
public:
    explicit TransitionTable(const std::vector<Transition>& transitions);

    std::size_t size() const { return static_cast<std::size_t>(all_.obs.rows()); }
    Batch gather(const std::vector<std::size_t>& rows) const;
    Batch sample(std::size_t batch, Rng& rng) const;
    const Batch& all() const { return all_; }

private:
    Batch all_;
};

DenseNet bc_pretrain(const OfflineDataset& dataset, int steps, std::uint64_t seed,
                     const Td3Hyper& hyper = {});

struct FqeResult {
    DenseNet critic;
    std::vector<double> td_loss;  // per gradient step
};

FqeResult fqe(const DenseNet& policy, const std::vector<Transition>& transitions, int steps,
              std::uint64_t seed, const Td3Hyper& hyper = {});

FqeResult fqe(const DenseNet& policy, const OfflineDataset& dataset, int steps, std::uint64_t seed,
              const Td3Hyper& hyper = {});

/// Mean squared one-step TD error of `critic` for `policy`, bootstrapping
/// from the critic itself.
double td_error(const DenseNet& critic, const DenseNet& policy,
                const std::vector<Transition>& transitions, double gamma);

/// Wraps a BC actor and an FQE critic (duplicated into both critic slots)
/// into an agent ready for fine-tuning.
Td3Agent agent_from_bc(const DenseNet& actor, const DenseNet& critic, const Td3Hyper& hyper,
                       std::uint64_t seed);

Td3Agent offline_rl_pretrain(const OfflineDataset& dataset, int steps, double beta,
                             std::uint64_t seed, const Td3Hyper& hyper = {});

void save_checkpoint(const Td3Agent& agent, const std::filesystem::path& dir, double beta,
                     const nlohmann::json& extra_manifest = nlohmann::json::object());

Td3Agent load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest_out = nullptr);

}  // namespace o2o
