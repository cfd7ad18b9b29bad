#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2o/envs.hpp"
#include "o2o/nn.hpp"
#include "o2o/seeding.hpp"

namespace o2o {

struct Transition {
    Vector obs;
    Vector action;
    Vector next_obs;
    double reward = 0.0;
    bool terminated = false;
    bool truncated = false;

    bool operator==(const Transition& other) const;
};

struct BehaviorComponent {
    BehaviorSpec behavior;
    int n_traj = 0;
};

struct OfflineDataset {
    EnvKind env = EnvKind::pendulum;
    std::vector<BehaviorComponent> behavior;
    ReferenceScores reference;
    std::vector<std::vector<Transition>> trajectories;

    int obs_dim() const { return EnvSpec::make(env).obs_dim; }
    int action_dim() const { return EnvSpec::make(env).action_dim; }
    std::size_t num_transitions() const;
    std::vector<Transition> flatten() const;
    bool operator==(const OfflineDataset& other) const;
};

OfflineDataset generate_dataset(const EnvSpec& spec, const BehaviorSpec& behavior, int n_traj,
                                std::uint64_t seed);

/// Concatenates trajectories from several behaviors, in component order.
OfflineDataset generate_dataset(const EnvSpec& spec, const std::vector<BehaviorComponent>& components,
                                std::uint64_t seed);

struct DatasetReturn {
    std::vector<double> per_trajectory;  // normalized, undiscounted
    double mean = 0.0;                   // J(pi_D)
};

DatasetReturn dataset_return(const OfflineDataset& dataset);

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Transition t);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return size_ == 0; }

    /// i-th stored transition, oldest first.
    const Transition& at(std::size_t i) const;

    /// Uniform with replacement.
    std::vector<Transition> sample(std::size_t batch, Rng& rng) const;

    /// Number of transitions handed out by sample().
    std::uint64_t samples_drawn() const { return samples_drawn_; }

private:
    std::vector<Transition> storage_;
    std::size_t capacity_;
    std::size_t head_ = 0;  // next write slot once full
    std::size_t size_ = 0;
    mutable std::uint64_t samples_drawn_ = 0;
};

struct MixedBatch {
    std::vector<Transition> transitions;
    std::size_t offline_count = 0;
};

/// Dual-buffer sampler: every batch of size B holds exactly round(alpha * B)
/// offline transitions, shuffled together with the online part.
class MixedSampler {
public:
    MixedSampler(const ReplayBuffer& offline, const ReplayBuffer& online, double alpha);

    std::size_t offline_count(std::size_t batch) const;
    MixedBatch sample(std::size_t batch, Rng& rng) const;
    double alpha() const { return alpha_; }

private:
    const ReplayBuffer* offline_;
    const ReplayBuffer* online_;
    double alpha_;
};

/// Column-stacked view of a set of transitions for network updates.
struct Batch {
    Matrix obs;
    Matrix actions;
    Matrix next_obs;
    Vector rewards;
    Vector terminated;  // 1.0 where the episode terminated (not truncated)

    std::size_t size() const { return static_cast<std::size_t>(obs.rows()); }
};

Batch make_batch(const std::vector<Transition>& transitions);

/// JSON-lines: a header object, then one transition object per line.
/// `extra_header` fields are merged into the header (e.g. a config hash).
void save_dataset(const OfflineDataset& dataset, const std::filesystem::path& path,
                  const nlohmann::json& extra_header = nlohmann::json::object());

OfflineDataset load_dataset(const std::filesystem::path& path, nlohmann::json* header_out = nullptr);

/// Writes to a sibling temp file then renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace o2o
