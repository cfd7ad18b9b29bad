#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2o/agents.hpp"
#include "o2o/data.hpp"
#include "o2o/envs.hpp"
#include "o2o/metrics.hpp"

namespace o2o {

enum class FinetuneMethod { baseline, warmup, o2o_reg, replay, replay_reset, mixed };

std::string to_string(FinetuneMethod m);
FinetuneMethod finetune_method_from_string(const std::string& name);

enum class MethodClass { minimal, pi0_centric, data_centric, mixed };

std::string to_string(MethodClass c);
MethodClass method_class(FinetuneMethod m);
bool reads_dataset(FinetuneMethod m);

struct FinetuneConfig {
    FinetuneMethod method = FinetuneMethod::baseline;
    int total_env_steps = 50000;
    int utd = 1;
    int warmup_steps = 500;  // K
    double alpha = 0.5;
    double beta = 0.0;
    int eval_every = 1000;
    int eval_episodes = 20;
    int online_buffer_capacity = 0;  // 0: total_env_steps
    bool single_buffer = false;      // preload D into the online buffer instead of a second buffer

    void validate() const;
    std::size_t buffer_capacity() const;
    /// Steps collected before the first gradient update.
    int start_delay(int batch) const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, FinetuneConfig& c);

struct LossWindow {
    std::uint64_t env_step = 0;  // end of the window
    std::uint64_t updates = 0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double mean_target = 0.0;
};

struct RunCounters {
    std::uint64_t env_steps = 0;
    std::uint64_t total_updates = 0;
    std::uint64_t first_update_step = 0;  // 0: no update happened
    std::uint64_t online_size_at_first_update = 0;
    std::uint64_t offline_samples_drawn = 0;
    std::uint64_t updates_before_start = 0;
};

struct RunLog {
    std::uint64_t seed = 0;
    FinetuneConfig config;
    Td3Hyper hyper;
    EvalCurve curve;
    std::vector<LossWindow> losses;
    RunCounters counters;
    double wall_seconds = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

void to_json(nlohmann::json& j, const RunLog& log);
void from_json(const nlohmann::json& j, RunLog& log);

/// step,mean,ep0,ep1,...
std::string curve_csv(const EvalCurve& curve);

struct FinetuneResult {
    RunLog log;
    Td3Agent agent;
};

/// Online fine-tuning of `pi0`. Each iteration first runs the scheduled
/// updates, then collects one environment step. The curve starts with a
/// step-0 evaluation and adds one point every eval_every steps.
FinetuneResult run_finetune(const EnvSpec& spec, const OfflineDataset& dataset, const Td3Agent& pi0,
                            const FinetuneConfig& config, std::uint64_t seed);

/// Seed used for every evaluation point of a run.
std::uint64_t eval_seed(std::uint64_t run_seed);

double last_k_eval_stat(const RunLog& log, int k = 10);

}  // namespace o2o
