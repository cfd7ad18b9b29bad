#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2o/agents.hpp"
#include "o2o/data.hpp"
#include "o2o/envs.hpp"
#include "o2o/finetune.hpp"
#include "o2o/metrics.hpp"

namespace o2o {

inline constexpr const char* kToolVersion = "0.1.0";

enum class InconclusiveMapping { comparable, drop };

std::string to_string(InconclusiveMapping m);
InconclusiveMapping inconclusive_mapping_from_string(const std::string& s);

struct PretrainSpec {
    std::string algorithm = "offline_rl";  // or bc_fqe
    int steps = 10000;
    int fqe_steps = 0;  // 0: same as steps
    double beta = 0.4;
    int eval_episodes = 20;
    Td3Hyper hyper;
};

struct ExperimentConfig {
    std::string setting;
    EnvKind env = EnvKind::pendulum;
    std::uint64_t seed = 0;
    std::vector<BehaviorComponent> behavior;
    PretrainSpec pretrain;
    std::vector<FinetuneMethod> methods;
    FinetuneConfig finetune;               // method field unused
    nlohmann::json finetune_hyper = nlohmann::json::object();  // Td3Hyper keys applied before fine-tuning
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    double tost_delta = 0.05;
    double tost_alpha = 0.05;
    double compare_alpha = 0.05;
    int last_k = 10;
    InconclusiveMapping map_inconclusive = InconclusiveMapping::comparable;
    std::string output_dir = "runs";

    void validate() const;
    EnvSpec env_spec() const { return EnvSpec::make(env); }
    /// FNV-1a of the canonical JSON, output_dir excluded.
    std::string hash() const;
    FinetuneConfig finetune_for(FinetuneMethod m) const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);

struct StageMarker {
    std::string completed_at;
};

struct RunManifest {
    std::string config_hash;
    std::string tool_version = kToolVersion;
    std::string created_at;
    std::map<std::string, StageMarker> stages;

    bool done(const std::string& stage) const { return stages.count(stage) > 0; }
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

struct RunOptions {
    bool force = false;
    int jobs = 1;
    bool allow_mixed = false;
    std::optional<InconclusiveMapping> map_inconclusive;
    std::ostream* log = nullptr;
};

/// Root for all settings; O2O_OUTPUT_ROOT overrides the config's output_dir.
std::filesystem::path output_root(const ExperimentConfig& config);
std::filesystem::path setting_dir(const ExperimentConfig& config);

RunManifest read_manifest(const ExperimentConfig& config);

std::filesystem::path cmd_gen_data(const ExperimentConfig& config, const RunOptions& opts = {});

struct PretrainRecord {
    std::vector<std::uint64_t> seeds;
    std::vector<double> j0;                       // per seed
    std::vector<std::vector<double>> per_episode;  // per seed
};

void to_json(nlohmann::json& j, const PretrainRecord& r);
void from_json(const nlohmann::json& j, PretrainRecord& r);

PretrainRecord cmd_pretrain(const ExperimentConfig& config, const RunOptions& opts = {});

/// Loads seed `seed`'s checkpoint with the fine-tune hyperparameter overrides applied.
Td3Agent load_pretrained(const ExperimentConfig& config, std::uint64_t seed, bool apply_overrides = true);

/// Greedy evaluation used for the J(pi_0) record.
EvalResult evaluate_pretrained(const ExperimentConfig& config, const Td3Agent& agent,
                               const ReferenceScores& reference, std::uint64_t seed);

RegimeLabel cmd_classify(const ExperimentConfig& config, const RunOptions& opts = {});

std::uint64_t run_seed(const ExperimentConfig& config, FinetuneMethod method, std::uint64_t seed);

struct FinetuneSummary {
    std::size_t completed = 0;
    std::size_t resumed = 0;
    std::size_t quarantined = 0;
    std::size_t aborted = 0;
};

FinetuneSummary cmd_finetune(const ExperimentConfig& config, const RunOptions& opts = {});

/// Per-setting analysis; also writes report/analysis.json and the CSV tables.
nlohmann::json cmd_report(const ExperimentConfig& config, const RunOptions& opts = {});

/// Cross-setting confusion matrix from per-setting analyses.
nlohmann::json matrix_from_analyses(const std::vector<nlohmann::json>& analyses,
                                    InconclusiveMapping mapping);

nlohmann::json cmd_matrix(const std::vector<ExperimentConfig>& configs, const RunOptions& opts = {});

/// Every stage in order.
nlohmann::json cmd_run(const ExperimentConfig& config, const RunOptions& opts = {});

/// Mean and 1.96 standard errors across seeds at every shared step.
struct CiRow {
    std::uint64_t step = 0;
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t n = 0;
};

std::vector<CiRow> ci_table(const std::vector<EvalCurve>& curves);

}  // namespace o2o
