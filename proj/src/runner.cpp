#include "o2o/runner.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "o2o/errors.hpp"

namespace o2o {

namespace fs = std::filesystem;

namespace {

constexpr const char* kStageGenData = "gen-data";
constexpr const char* kStagePretrain = "pretrain";
constexpr const char* kStageClassify = "classify";
constexpr const char* kStageFinetune = "finetune";
constexpr const char* kStageReport = "report";
const std::vector<std::string> kStageOrder = {kStageGenData, kStagePretrain, kStageClassify,
                                              kStageFinetune, kStageReport};

std::string now_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

void say(const RunOptions& opts, const std::string& line) {
    static std::mutex mu;
    if (!opts.log) return;
    std::lock_guard<std::mutex> lock(mu);
    *opts.log << line << '\n';
    opts.log->flush();
}

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (failure) return;
                }
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

fs::path manifest_path(const ExperimentConfig& c) { return setting_dir(c) / "manifest.json"; }

void write_manifest(const ExperimentConfig& c, const RunManifest& m) {
    write_json_file(manifest_path(c), m);
}

/// Opens the manifest for a stage that is about to (re)write its outputs.
RunManifest begin_stage(const ExperimentConfig& config, const std::string& stage, const RunOptions& opts) {
    RunManifest m;
    const bool exists = fs::exists(manifest_path(config));
    if (exists) m = read_manifest(config);
    if (exists && m.config_hash != config.hash()) {
        if (!opts.force)
            throw UsageError("output in " + setting_dir(config).string() +
                             " was produced by a different config (hash " + m.config_hash +
                             "); rerun with --force");
        m.stages.clear();
    }
    if (m.done(stage) && !opts.force && stage != kStageFinetune && stage != kStageReport)
        throw UsageError("stage '" + stage + "' already complete in " + setting_dir(config).string() +
                         "; rerun with --force");
    if (m.created_at.empty()) m.created_at = now_utc();
    m.config_hash = config.hash();
    m.tool_version = kToolVersion;
    // Redoing a stage invalidates everything downstream.
    bool downstream = false;
    for (const auto& s : kStageOrder) {
        if (s == stage) downstream = true;
        if (downstream) m.stages.erase(s);
    }
    return m;
}

void finish_stage(const ExperimentConfig& config, RunManifest m, const std::string& stage) {
    m.stages[stage] = StageMarker{now_utc()};
    write_manifest(config, m);
}

void require_stage(const ExperimentConfig& config, const std::string& stage, const std::string& what) {
    if (!fs::exists(manifest_path(config)))
        throw FileError("missing " + what + ": no manifest in " + setting_dir(config).string());
    const auto m = read_manifest(config);
    if (!m.done(stage))
        throw FileError("missing " + what + ": stage '" + stage + "' has not completed in " +
                        setting_dir(config).string());
}

void check_hash(const nlohmann::json& j, const ExperimentConfig& config, const RunOptions& opts,
                const std::string& what) {
    const std::string h = j.value("config_hash", std::string());
    if (h != config.hash() && !opts.allow_mixed)
        throw ConsistencyError(what + " has config hash '" + h + "', expected '" + config.hash() +
                               "' (use --allow-mixed to override)");
}

OfflineDataset load_setting_dataset(const ExperimentConfig& config, const RunOptions& opts) {
    const fs::path path = setting_dir(config) / "dataset.jsonl";
    if (!fs::exists(path)) throw FileError("missing dataset " + path.string());
    nlohmann::json header;
    auto d = load_dataset(path, &header);
    check_hash(header, config, opts, "dataset");
    return d;
}

fs::path run_path(const ExperimentConfig& c, FinetuneMethod m, std::uint64_t seed) {
    return setting_dir(c) / "finetune" / to_string(m) / (std::to_string(seed) + ".json");
}

std::uint64_t pretrain_seed(const ExperimentConfig& c, std::uint64_t seed) {
    return derive_seed(c.seed, "pretrain", seed);
}

SampleStats stats_or_single(const std::vector<double>& v) { return SampleStats::from_values(v); }

nlohmann::json stats_json(const SampleStats& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

}  // namespace

// ---- config ----------------------------------------------------------------

std::string to_string(InconclusiveMapping m) {
    return m == InconclusiveMapping::comparable ? "comparable" : "drop";
}

InconclusiveMapping inconclusive_mapping_from_string(const std::string& s) {
    if (s == "comparable") return InconclusiveMapping::comparable;
    if (s == "drop") return InconclusiveMapping::drop;
    throw ConfigError("map_inconclusive must be 'comparable' or 'drop', got '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (setting.empty()) throw ConfigError("setting name is required");
    if (setting.find('/') != std::string::npos || setting == "." || setting == "..")
        throw ConfigError("setting name must be a plain directory name");
    if (behavior.empty()) throw ConfigError("behavior needs at least one component");
    for (const auto& b : behavior) {
        if (b.n_traj < 1) throw ConfigError("n_traj must be >= 1");
        b.behavior.validate();
    }
    if (pretrain.algorithm != "offline_rl" && pretrain.algorithm != "bc_fqe")
        throw ConfigError("pretrain.algorithm must be 'offline_rl' or 'bc_fqe'");
    if (pretrain.steps < 1 || pretrain.fqe_steps < 0) throw ConfigError("pretrain steps must be >= 1");
    if (pretrain.algorithm == "offline_rl" && !(pretrain.beta > 0.0))
        throw ConfigError("offline_rl needs beta > 0");
    if (pretrain.eval_episodes < 1) throw ConfigError("pretrain.eval_episodes must be >= 1");
    pretrain.hyper.validate();
    if (methods.empty()) throw ConfigError("method list must not be empty");
    if (std::set<FinetuneMethod>(methods.begin(), methods.end()).size() != methods.size())
        throw ConfigError("method list has duplicates");
    for (auto m : methods) finetune_for(m).validate();
    if (finetune_hyper.contains("hidden")) throw ConfigError("finetune.hyper cannot change hidden sizes");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds must be distinct");
    if (!(tost_delta >= 0.0)) throw ConfigError("tost delta must be >= 0");
    if (!(tost_alpha > 0.0 && tost_alpha < 1.0) || !(compare_alpha > 0.0 && compare_alpha < 1.0))
        throw ConfigError("alpha must be in (0,1)");
    if (last_k < 1) throw ConfigError("last_k must be >= 1");
}

FinetuneConfig ExperimentConfig::finetune_for(FinetuneMethod m) const {
    FinetuneConfig c = finetune;
    c.method = m;
    return c;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json behavior = nlohmann::json::array();
    for (const auto& b : c.behavior) behavior.push_back({{"behavior", b.behavior}, {"n_traj", b.n_traj}});
    nlohmann::json methods = nlohmann::json::array();
    for (auto m : c.methods) methods.push_back(to_string(m));
    nlohmann::json finetune = c.finetune;
    finetune.erase("method");
    finetune["hyper"] = c.finetune_hyper;
    j = {{"setting", c.setting},
         {"env", to_string(c.env)},
         {"seed", c.seed},
         {"behavior", behavior},
         {"pretrain",
          {{"algorithm", c.pretrain.algorithm},
           {"steps", c.pretrain.steps},
           {"fqe_steps", c.pretrain.fqe_steps},
           {"beta", c.pretrain.beta},
           {"eval_episodes", c.pretrain.eval_episodes},
           {"hyper", c.pretrain.hyper}}},
         {"methods", methods},
         {"finetune", finetune},
         {"seeds", c.seeds},
         {"tost", {{"delta", c.tost_delta}, {"alpha", c.tost_alpha}}},
         {"compare_alpha", c.compare_alpha},
         {"last_k", c.last_k},
         {"map_inconclusive", to_string(c.map_inconclusive)},
         {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    ExperimentConfig out;
    try {
        out.setting = j.at("setting").get<std::string>();
        out.env = env_kind_from_string(j.at("env").get<std::string>());
        out.seed = j.value("seed", out.seed);
        for (const auto& b : j.at("behavior"))
            out.behavior.push_back({b.at("behavior").get<BehaviorSpec>(), b.at("n_traj").get<int>()});
        if (j.contains("pretrain")) {
            const auto& p = j.at("pretrain");
            out.pretrain.algorithm = p.value("algorithm", out.pretrain.algorithm);
            out.pretrain.steps = p.value("steps", out.pretrain.steps);
            out.pretrain.fqe_steps = p.value("fqe_steps", out.pretrain.fqe_steps);
            out.pretrain.beta = p.value("beta", out.pretrain.beta);
            out.pretrain.eval_episodes = p.value("eval_episodes", out.pretrain.eval_episodes);
            if (p.contains("hyper")) out.pretrain.hyper = p.at("hyper").get<Td3Hyper>();
        }
        for (const auto& m : j.at("methods")) out.methods.push_back(finetune_method_from_string(m.get<std::string>()));
        if (j.contains("finetune")) {
            nlohmann::json f = j.at("finetune");
            if (f.contains("hyper")) {
                out.finetune_hyper = f.at("hyper");
                if (!out.finetune_hyper.is_object()) throw ConfigError("finetune.hyper must be an object");
                f.erase("hyper");
            }
            f.erase("method");
            out.finetune = f.get<FinetuneConfig>();
        }
        if (j.contains("seeds")) out.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("tost")) {
            out.tost_delta = j.at("tost").value("delta", out.tost_delta);
            out.tost_alpha = j.at("tost").value("alpha", out.tost_alpha);
        }
        out.compare_alpha = j.value("compare_alpha", out.compare_alpha);
        out.last_k = j.value("last_k", out.last_k);
        if (j.contains("map_inconclusive"))
            out.map_inconclusive = inconclusive_mapping_from_string(j.at("map_inconclusive").get<std::string>());
        out.output_dir = j.value("output_dir", out.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    out.validate();
    c = std::move(out);
}

std::string ExperimentConfig::hash() const {
    nlohmann::json j = *this;
    j.erase("output_dir");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw FileError("config not found: " + path.string());
    nlohmann::json j;
    try {
        j = read_json_file(path);
    } catch (const SchemaError& e) {
        throw ConfigError(e.what());
    }
    return j.get<ExperimentConfig>();
}

void to_json(nlohmann::json& j, const RunManifest& m) {
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& [name, marker] : m.stages) stages[name] = {{"completed_at", marker.completed_at}};
    j = {{"config_hash", m.config_hash},
         {"tool_version", m.tool_version},
         {"created_at", m.created_at},
         {"stages", stages}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
    m.config_hash = j.at("config_hash").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.stages.clear();
    for (const auto& [name, marker] : j.at("stages").items())
        m.stages[name] = StageMarker{marker.at("completed_at").get<std::string>()};
}

fs::path output_root(const ExperimentConfig& config) {
    if (const char* env = std::getenv("O2O_OUTPUT_ROOT"); env && *env) return env;
    return config.output_dir;
}

fs::path setting_dir(const ExperimentConfig& config) { return output_root(config) / config.setting; }

RunManifest read_manifest(const ExperimentConfig& config) {
    try {
        return read_json_file(manifest_path(config)).get<RunManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
}

// ---- stages ----------------------------------------------------------------

fs::path cmd_gen_data(const ExperimentConfig& config, const RunOptions& opts) {
    config.validate();
    const fs::path path = setting_dir(config) / "dataset.jsonl";
    if (fs::exists(path) && !opts.force)
        throw UsageError(path.string() + " already exists; rerun with --force to overwrite");
    fs::create_directories(setting_dir(config));
    RunManifest m = begin_stage(config, kStageGenData, RunOptions{true, 1, false, {}, nullptr});
    say(opts, "[" + config.setting + "] generating dataset");
    const auto dataset = generate_dataset(config.env_spec(), config.behavior, derive_seed(config.seed, "dataset"));
    save_dataset(dataset, path, {{"config_hash", config.hash()}, {"setting", config.setting}});
    finish_stage(config, m, kStageGenData);
    return path;
}

void to_json(nlohmann::json& j, const PretrainRecord& r) {
    j = {{"seeds", r.seeds}, {"j0", r.j0}, {"per_episode", r.per_episode}};
}

void from_json(const nlohmann::json& j, PretrainRecord& r) {
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.j0 = j.at("j0").get<std::vector<double>>();
    r.per_episode = j.at("per_episode").get<std::vector<std::vector<double>>>();
    if (r.seeds.size() != r.j0.size() || r.seeds.size() != r.per_episode.size())
        throw SchemaError("pretrain record lengths disagree");
}

EvalResult evaluate_pretrained(const ExperimentConfig& config, const Td3Agent& agent,
                               const ReferenceScores& reference, std::uint64_t seed) {
    return evaluate_policy(actor_policy(agent.actor), config.env_spec(), reference,
                           config.pretrain.eval_episodes, derive_seed(pretrain_seed(config, seed), "j0"));
}

PretrainRecord cmd_pretrain(const ExperimentConfig& config, const RunOptions& opts) {
    config.validate();
    require_stage(config, kStageGenData, "dataset");
    const auto dataset = load_setting_dataset(config, opts);
    RunManifest m = begin_stage(config, kStagePretrain, opts);
    const fs::path root = setting_dir(config) / "pretrain";
    if (fs::exists(root)) fs::remove_all(root);

    PretrainRecord record;
    record.seeds = config.seeds;
    record.j0.resize(config.seeds.size());
    record.per_episode.resize(config.seeds.size());
    const auto& p = config.pretrain;
    parallel_for(config.seeds.size(), opts.jobs, [&](std::size_t i) {
        const std::uint64_t s = config.seeds[i];
        const std::uint64_t ps = pretrain_seed(config, s);
        const fs::path dir = root / ("seed_" + std::to_string(s));
        Td3Agent agent;
        if (p.algorithm == "bc_fqe") {
            const DenseNet bc = bc_pretrain(dataset, p.steps, ps, p.hyper);
            const FqeResult q = fqe(bc, dataset, p.fqe_steps > 0 ? p.fqe_steps : p.steps,
                                    derive_seed(ps, "fqe"), p.hyper);
            agent = agent_from_bc(bc, q.critic, p.hyper, ps);
            fs::create_directories(dir);
            write_json_file(dir / "bc_actor.json", bc);
            write_json_file(dir / "fqe_critic.json", q.critic);
        } else {
            agent = offline_rl_pretrain(dataset, p.steps, p.beta, ps, p.hyper);
        }
        save_checkpoint(agent, dir, p.algorithm == "bc_fqe" ? 0.0 : p.beta,
                        {{"config_hash", config.hash()}, {"seed", s}, {"algorithm", p.algorithm}});
        const auto ev = evaluate_pretrained(config, agent, dataset.reference, s);
        record.j0[i] = ev.mean;
        record.per_episode[i] = ev.normalized;
        say(opts, "[" + config.setting + "] pretrain seed " + std::to_string(s) + " J(pi_0) = " +
                      std::to_string(ev.mean));
    });
    nlohmann::json out = record;
    out["config_hash"] = config.hash();
    out["eval_episodes"] = p.eval_episodes;
    write_json_file(root / "j0.json", out);
    finish_stage(config, m, kStagePretrain);
    return record;
}

Td3Agent load_pretrained(const ExperimentConfig& config, std::uint64_t seed, bool apply_overrides) {
    const fs::path dir = setting_dir(config) / "pretrain" / ("seed_" + std::to_string(seed));
    Td3Agent agent = load_checkpoint(dir);
    if (apply_overrides && !config.finetune_hyper.empty()) {
        nlohmann::json h = agent.hyper;
        h.update(config.finetune_hyper);
        agent.hyper = h.get<Td3Hyper>();
        agent.actor_opt.learning_rate = agent.hyper.actor_lr;
        agent.critic1_opt.learning_rate = agent.hyper.critic_lr;
        agent.critic2_opt.learning_rate = agent.hyper.critic_lr;
    }
    return agent;
}

RegimeLabel cmd_classify(const ExperimentConfig& config, const RunOptions& opts) {
    config.validate();
    require_stage(config, kStagePretrain, "pretrain records");
    const auto dataset = load_setting_dataset(config, opts);
    const fs::path j0_path = setting_dir(config) / "pretrain" / "j0.json";
    const auto j0_json = read_json_file(j0_path);
    check_hash(j0_json, config, opts, "pretrain record");
    const auto record = j0_json.get<PretrainRecord>();
    RunManifest m = begin_stage(config, kStageClassify, opts);

    const auto jd = dataset_return(dataset);
    const auto pi0_stats = stats_or_single(record.j0);
    const auto data_stats = stats_or_single(jd.per_trajectory);
    const auto label = tost_classify(pi0_stats, data_stats, config.tost_delta, config.tost_alpha);
    write_json_file(setting_dir(config) / "classify.json",
                    {{"config_hash", config.hash()},
                     {"setting", config.setting},
                     {"regime", label},
                     {"j0", stats_json(pi0_stats)},
                     {"jd", stats_json(data_stats)}});
    say(opts, "[" + config.setting + "] regime " + to_string(label.tag));
    finish_stage(config, m, kStageClassify);
    return label;
}

std::uint64_t run_seed(const ExperimentConfig& config, FinetuneMethod method, std::uint64_t seed) {
    return derive_seed(config.seed, to_string(method), seed);
}

FinetuneSummary cmd_finetune(const ExperimentConfig& config, const RunOptions& opts) {
    config.validate();
    require_stage(config, kStageClassify, "regime label");
    const auto dataset = load_setting_dataset(config, opts);
    RunManifest m = begin_stage(config, kStageFinetune, opts);
    if (opts.force && fs::exists(setting_dir(config) / "finetune"))
        fs::remove_all(setting_dir(config) / "finetune");

    struct Job {
        FinetuneMethod method;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto method : config.methods)
        for (auto s : config.seeds) jobs.push_back({method, s});

    FinetuneSummary summary;
    std::mutex mu;
    const EnvSpec spec = config.env_spec();
    parallel_for(jobs.size(), opts.jobs, [&](std::size_t i) {
        const auto [method, s] = jobs[i];
        const fs::path path = run_path(config, method, s);
        if (fs::exists(path)) {
            try {
                const auto j = read_json_file(path);
                if (j.value("config_hash", std::string()) == config.hash()) {
                    j.get<RunLog>();
                    std::lock_guard<std::mutex> lock(mu);
                    ++summary.resumed;
                    if (j.at("aborted").get<bool>()) ++summary.aborted;
                    return;
                }
            } catch (const std::exception&) {
            }
            fs::rename(path, fs::path(path).concat(".corrupt"));
            std::lock_guard<std::mutex> lock(mu);
            ++summary.quarantined;
        }
        const Td3Agent agent = load_pretrained(config, s);
        const std::uint64_t rs = run_seed(config, method, s);
        const auto result = run_finetune(spec, dataset, agent, config.finetune_for(method), rs);
        nlohmann::json j = result.log;
        j["config_hash"] = config.hash();
        j["setting"] = config.setting;
        j["method"] = to_string(method);
        j["seed_index"] = s;
        j["run_seed"] = rs;
        fs::create_directories(path.parent_path());
        write_file_atomic(fs::path(path).replace_extension(".csv"), curve_csv(result.log.curve));
        write_json_file(path, j);
        say(opts, "[" + config.setting + "] " + to_string(method) + " seed " + std::to_string(s) +
                      (result.log.aborted ? " ABORTED: " + result.log.abort_reason
                                          : " last = " + std::to_string(result.log.curve.points.back().mean)));
        std::lock_guard<std::mutex> lock(mu);
        ++summary.completed;
        if (result.log.aborted) ++summary.aborted;
    });
    finish_stage(config, m, kStageFinetune);
    return summary;
}

// ---- analysis --------------------------------------------------------------

std::vector<CiRow> ci_table(const std::vector<EvalCurve>& curves) {
    std::map<std::uint64_t, std::vector<double>> by_step;
    for (const auto& c : curves)
        for (const auto& p : c.points) by_step[p.env_step].push_back(p.mean);
    std::vector<CiRow> rows;
    for (const auto& [step, values] : by_step) {
        CiRow r;
        r.step = step;
        r.n = values.size();
        const auto s = SampleStats::from_values(values);
        r.mean = s.mean;
        const double half = r.n > 1 ? 1.96 * s.std / std::sqrt(static_cast<double>(r.n)) : 0.0;
        r.ci_lo = r.mean - half;
        r.ci_hi = r.mean + half;
        rows.push_back(r);
    }
    return rows;
}

namespace {

std::string ci_csv(const std::vector<CiRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "step,mean,ci_lo,ci_hi,n\n";
    for (const auto& r : rows) os << r.step << ',' << r.mean << ',' << r.ci_lo << ',' << r.ci_hi << ',' << r.n << '\n';
    return os.str();
}

std::optional<Regime> effective_regime(Regime r, InconclusiveMapping mapping) {
    if (r != Regime::Inconclusive) return r;
    if (mapping == InconclusiveMapping::comparable) return Regime::Comparable;
    return std::nullopt;
}

}  // namespace

nlohmann::json cmd_report(const ExperimentConfig& config, const RunOptions& opts) {
    config.validate();
    require_stage(config, kStageClassify, "regime label");
    const fs::path dir = setting_dir(config);
    const auto classify = read_json_file(dir / "classify.json");
    check_hash(classify, config, opts, "classify record");
    const auto label = classify.at("regime").get<RegimeLabel>();
    const double jd = classify.at("jd").at("mean").get<double>();
    const auto mapping = opts.map_inconclusive.value_or(config.map_inconclusive);

    RunManifest manifest = read_manifest(config);
    if (manifest.config_hash != config.hash() && !opts.allow_mixed)
        throw ConsistencyError("manifest config hash does not match the config");
    const bool finetune_done = manifest.done(kStageFinetune);

    nlohmann::json methods = nlohmann::json::object();
    nlohmann::json missing = nlohmann::json::array();
    std::vector<VariantRuns> pi0_variants, data_variants;
    std::ostringstream summary_csv;
    summary_csv.precision(17);
    summary_csv << "method,class,n,last_k_mean,ci_lo,ci_hi,prior,stability,plasticity,final\n";
    fs::create_directories(dir / "report");

    for (auto method : config.methods) {
        VariantRuns runs;
        runs.name = to_string(method);
        std::vector<EvalCurve> curves;
        std::vector<double> stats;
        nlohmann::json per_seed = nlohmann::json::array();
        KnowledgeDecomposition sum;
        std::size_t aborted = 0;
        for (auto s : config.seeds) {
            const fs::path path = run_path(config, method, s);
            if (!fs::exists(path)) {
                missing.push_back(to_string(method) + "/" + std::to_string(s));
                continue;
            }
            const auto j = read_json_file(path);
            check_hash(j, config, opts, path.string());
            const auto log = j.get<RunLog>();
            if (log.aborted) ++aborted;
            curves.push_back(log.curve);
            const auto& pts = log.curve.points;
            const auto d = decompose(log.curve, pts.front().mean, jd);
            sum.prior += d.prior;
            sum.stability += d.stability;
            sum.plasticity += d.plasticity;
            sum.final += d.final;
            nlohmann::json entry = {{"seed", s},
                                    {"run_seed", log.seed},
                                    {"aborted", log.aborted},
                                    {"step0", pts.front().mean},
                                    {"decomposition",
                                     {{"prior", d.prior},
                                      {"stability", d.stability},
                                      {"plasticity", d.plasticity},
                                      {"final", d.final}}}};
            if (pts.size() >= static_cast<std::size_t>(config.last_k)) {
                const double v = last_k_eval_stat(log, config.last_k);
                stats.push_back(v);
                std::vector<double> last;
                for (std::size_t i = pts.size() - static_cast<std::size_t>(config.last_k); i < pts.size(); ++i)
                    last.push_back(pts[i].mean);
                runs.per_seed.push_back(std::move(last));
                entry["last_k"] = v;
            } else {
                entry["last_k"] = nullptr;
            }
            per_seed.push_back(entry);
        }
        const double n = static_cast<double>(curves.size());
        nlohmann::json mj = {{"class", to_string(method_class(method))},
                             {"runs", curves.size()},
                             {"aborted", aborted},
                             {"per_seed", per_seed}};
        std::vector<CiRow> rows;
        if (!curves.empty()) {
            mj["decomposition_mean"] = {{"prior", sum.prior / n},
                                        {"stability", sum.stability / n},
                                        {"plasticity", sum.plasticity / n},
                                        {"final", sum.final / n}};
            rows = ci_table(curves);
            write_file_atomic(dir / "report" / ("curves_" + to_string(method) + ".csv"), ci_csv(rows));
        }
        if (!stats.empty()) {
            const auto st = SampleStats::from_values(stats);
            const double half = st.n > 1 ? 1.96 * st.std / std::sqrt(static_cast<double>(st.n)) : 0.0;
            mj["last_k"] = {{"mean", st.mean}, {"std", st.std}, {"n", st.n},
                            {"ci_lo", st.mean - half}, {"ci_hi", st.mean + half}};
            summary_csv << to_string(method) << ',' << to_string(method_class(method)) << ',' << st.n << ','
                        << st.mean << ',' << st.mean - half << ',' << st.mean + half << ','
                        << sum.prior / n << ',' << sum.stability / n << ',' << sum.plasticity / n << ','
                        << sum.final / n << '\n';
        }
        methods[to_string(method)] = mj;
        if (runs.per_seed.size() >= 2) {
            if (method_class(method) == MethodClass::pi0_centric) pi0_variants.push_back(runs);
            if (method_class(method) == MethodClass::data_centric) data_variants.push_back(runs);
        }
    }

    nlohmann::json analysis = {{"setting", config.setting},
                               {"config_hash", config.hash()},
                               {"tool_version", kToolVersion},
                               {"complete", finetune_done && missing.empty()},
                               {"missing", missing},
                               {"regime", label},
                               {"j_pi0", classify.at("j0")},
                               {"j_d", classify.at("jd")},
                               {"last_k", config.last_k},
                               {"methods", methods},
                               {"map_inconclusive", to_string(mapping)}};
    const auto eff = effective_regime(label.tag, mapping);
    analysis["effective_regime"] = eff ? nlohmann::json(to_string(*eff)) : nlohmann::json(nullptr);
    if (!pi0_variants.empty() && !data_variants.empty()) {
        const auto cmp = compare_classes(pi0_variants, data_variants, config.compare_alpha);
        analysis["comparison"] = cmp;
    } else {
        analysis["comparison"] = nullptr;
    }
    analysis["matrix"] = matrix_from_analyses({analysis}, mapping);
    write_file_atomic(dir / "report" / "methods.csv", summary_csv.str());
    write_json_file(dir / "report" / "analysis.json", analysis);
    if (finetune_done) {
        manifest.stages[kStageReport] = StageMarker{now_utc()};
        write_manifest(config, manifest);
    }
    return analysis;
}

nlohmann::json matrix_from_analyses(const std::vector<nlohmann::json>& analyses, InconclusiveMapping mapping) {
    std::vector<std::pair<Regime, Winner>> rows;
    nlohmann::json included = nlohmann::json::array();
    nlohmann::json dropped = nlohmann::json::array();
    for (const auto& a : analyses) {
        const std::string setting = a.value("setting", std::string());
        const auto tag = regime_from_string(a.at("regime").at("label").get<std::string>());
        const auto eff = effective_regime(tag, mapping);
        if (!eff) {
            dropped.push_back({{"setting", setting}, {"reason", "inconclusive regime"}});
            continue;
        }
        if (!a.contains("comparison") || a.at("comparison").is_null()) {
            dropped.push_back({{"setting", setting}, {"reason", "no class comparison"}});
            continue;
        }
        const auto winner = winner_from_string(a.at("comparison").at("winner").get<std::string>());
        rows.emplace_back(*eff, winner);
        included.push_back({{"setting", setting}, {"regime", to_string(*eff)}, {"winner", symbol(winner)}});
    }
    const auto cm = confusion_matrix(rows);
    return {{"settings", included}, {"dropped", dropped}, {"confusion", cm}};
}

nlohmann::json cmd_matrix(const std::vector<ExperimentConfig>& configs, const RunOptions& opts) {
    if (configs.empty()) throw UsageError("matrix needs at least one config");
    std::vector<nlohmann::json> analyses;
    nlohmann::json missing = nlohmann::json::array();
    std::optional<InconclusiveMapping> mapping = opts.map_inconclusive;
    for (const auto& c : configs) {
        const fs::path path = setting_dir(c) / "report" / "analysis.json";
        if (!fs::exists(path)) {
            missing.push_back(c.setting);
            continue;
        }
        auto a = read_json_file(path);
        check_hash(a, c, opts, path.string());
        analyses.push_back(std::move(a));
        if (!mapping) mapping = c.map_inconclusive;
    }
    if (analyses.empty()) throw FileError("no setting has a report yet");
    auto out = matrix_from_analyses(analyses, mapping.value_or(InconclusiveMapping::comparable));
    out["missing"] = missing;
    out["complete"] = missing.empty();
    return out;
}

nlohmann::json cmd_run(const ExperimentConfig& config, const RunOptions& opts) {
    config.validate();
    auto stage_done = [&](const char* stage) {
        if (opts.force || !fs::exists(manifest_path(config))) return false;
        const auto m = read_manifest(config);
        return m.config_hash == config.hash() && m.done(stage);
    };
    RunOptions forced = opts;
    forced.force = true;
    bool redo = opts.force;
    if (redo || !stage_done(kStageGenData)) {
        cmd_gen_data(config, forced);
        redo = true;
    }
    if (redo || !stage_done(kStagePretrain)) {
        cmd_pretrain(config, forced);
        redo = true;
    }
    if (redo || !stage_done(kStageClassify)) {
        cmd_classify(config, forced);
        redo = true;
    }
    if (redo || !stage_done(kStageFinetune)) cmd_finetune(config, redo ? forced : opts);
    return cmd_report(config, opts);
}

}  // namespace o2o
