#include "o2o/finetune.hpp"

#include <chrono>
#include <cstdio>
#include <optional>
#include <sstream>

#include "o2o/errors.hpp"

namespace o2o {

std::string to_string(FinetuneMethod m) {
    switch (m) {
        case FinetuneMethod::baseline: return "baseline";
        case FinetuneMethod::warmup: return "warmup";
        case FinetuneMethod::o2o_reg: return "o2o_reg";
        case FinetuneMethod::replay: return "replay";
        case FinetuneMethod::replay_reset: return "replay_reset";
        case FinetuneMethod::mixed: return "mixed";
    }
    return "baseline";
}

FinetuneMethod finetune_method_from_string(const std::string& name) {
    for (auto m : {FinetuneMethod::baseline, FinetuneMethod::warmup, FinetuneMethod::o2o_reg,
                   FinetuneMethod::replay, FinetuneMethod::replay_reset, FinetuneMethod::mixed})
        if (to_string(m) == name) return m;
    throw ConfigError("unknown fine-tuning method '" + name + "'");
}

std::string to_string(MethodClass c) {
    switch (c) {
        case MethodClass::minimal: return "minimal";
        case MethodClass::pi0_centric: return "pi0_centric";
        case MethodClass::data_centric: return "data_centric";
        case MethodClass::mixed: return "mixed";
    }
    return "minimal";
}

MethodClass method_class(FinetuneMethod m) {
    switch (m) {
        case FinetuneMethod::baseline: return MethodClass::minimal;
        case FinetuneMethod::warmup:
        case FinetuneMethod::o2o_reg: return MethodClass::pi0_centric;
        case FinetuneMethod::replay:
        case FinetuneMethod::replay_reset: return MethodClass::data_centric;
        case FinetuneMethod::mixed: return MethodClass::mixed;
    }
    return MethodClass::minimal;
}

bool reads_dataset(FinetuneMethod m) {
    return m == FinetuneMethod::replay || m == FinetuneMethod::replay_reset ||
           m == FinetuneMethod::mixed;
}

void FinetuneConfig::validate() const {
    if (total_env_steps < 1) throw ConfigError("total_env_steps must be >= 1");
    if (utd < 1) throw ConfigError("utd must be >= 1");
    if (warmup_steps < 0 || warmup_steps > total_env_steps)
        throw ConfigError("warmup_steps must be in [0, total_env_steps]");
    if (method == FinetuneMethod::warmup && warmup_steps < 1)
        throw ConfigError("warmup needs warmup_steps >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (online_buffer_capacity < 0) throw ConfigError("online_buffer_capacity must be >= 0");
}

std::size_t FinetuneConfig::buffer_capacity() const {
    return static_cast<std::size_t>(online_buffer_capacity > 0 ? online_buffer_capacity : total_env_steps);
}

int FinetuneConfig::start_delay(int batch) const {
    return method == FinetuneMethod::warmup ? warmup_steps : batch;
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
    j = {{"method", to_string(c.method)},
         {"total_env_steps", c.total_env_steps},
         {"utd", c.utd},
         {"warmup_steps", c.warmup_steps},
         {"alpha", c.alpha},
         {"beta", c.beta},
         {"eval_every", c.eval_every},
         {"eval_episodes", c.eval_episodes},
         {"online_buffer_capacity", c.online_buffer_capacity},
         {"single_buffer", c.single_buffer}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
    FinetuneConfig out;
    if (j.contains("method")) out.method = finetune_method_from_string(j.at("method").get<std::string>());
    out.total_env_steps = j.value("total_env_steps", out.total_env_steps);
    out.utd = j.value("utd", out.utd);
    out.warmup_steps = j.value("warmup_steps", out.warmup_steps);
    out.alpha = j.value("alpha", out.alpha);
    out.beta = j.value("beta", out.beta);
    out.eval_every = j.value("eval_every", out.eval_every);
    out.eval_episodes = j.value("eval_episodes", out.eval_episodes);
    out.online_buffer_capacity = j.value("online_buffer_capacity", out.online_buffer_capacity);
    out.single_buffer = j.value("single_buffer", out.single_buffer);
    out.validate();
    c = out;
}

void to_json(nlohmann::json& j, const RunLog& log) {
    nlohmann::json losses = nlohmann::json::array();
    for (const auto& w : log.losses)
        losses.push_back({{"step", w.env_step},
                          {"updates", w.updates},
                          {"critic_loss", w.critic_loss},
                          {"actor_loss", w.actor_loss},
                          {"mean_target", w.mean_target}});
    const auto& c = log.counters;
    j = {{"seed", log.seed},
         {"config", log.config},
         {"hyper", log.hyper},
         {"curve", log.curve},
         {"losses", losses},
         {"counters",
          {{"env_steps", c.env_steps},
           {"total_updates", c.total_updates},
           {"first_update_step", c.first_update_step},
           {"online_size_at_first_update", c.online_size_at_first_update},
           {"offline_samples_drawn", c.offline_samples_drawn},
           {"updates_before_start", c.updates_before_start}}},
         {"wall_seconds", log.wall_seconds},
         {"aborted", log.aborted},
         {"abort_reason", log.abort_reason}};
}

void from_json(const nlohmann::json& j, RunLog& log) {
    RunLog out;
    out.seed = j.at("seed").get<std::uint64_t>();
    out.config = j.at("config").get<FinetuneConfig>();
    out.hyper = j.at("hyper").get<Td3Hyper>();
    out.curve = j.at("curve").get<EvalCurve>();
    for (const auto& w : j.at("losses")) {
        LossWindow lw;
        lw.env_step = w.at("step").get<std::uint64_t>();
        lw.updates = w.at("updates").get<std::uint64_t>();
        lw.critic_loss = w.at("critic_loss").get<double>();
        lw.actor_loss = w.at("actor_loss").get<double>();
        lw.mean_target = w.at("mean_target").get<double>();
        out.losses.push_back(lw);
    }
    const auto& c = j.at("counters");
    out.counters.env_steps = c.at("env_steps").get<std::uint64_t>();
    out.counters.total_updates = c.at("total_updates").get<std::uint64_t>();
    out.counters.first_update_step = c.at("first_update_step").get<std::uint64_t>();
    out.counters.online_size_at_first_update = c.at("online_size_at_first_update").get<std::uint64_t>();
    out.counters.offline_samples_drawn = c.at("offline_samples_drawn").get<std::uint64_t>();
    out.counters.updates_before_start = c.at("updates_before_start").get<std::uint64_t>();
    out.wall_seconds = j.at("wall_seconds").get<double>();
    out.aborted = j.at("aborted").get<bool>();
    out.abort_reason = j.at("abort_reason").get<std::string>();
    log = std::move(out);
}

std::string curve_csv(const EvalCurve& curve) {
    std::ostringstream os;
    os.precision(17);
    os << "step,mean";
    std::size_t width = 0;
    for (const auto& p : curve.points) width = std::max(width, p.per_episode.size());
    for (std::size_t i = 0; i < width; ++i) os << ",ep" << i;
    os << '\n';
    for (const auto& p : curve.points) {
        os << p.env_step << ',' << p.mean;
        for (double v : p.per_episode) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

std::uint64_t eval_seed(std::uint64_t run_seed) { return derive_seed(run_seed, "eval"); }

namespace {

struct WindowAccumulator {
    std::uint64_t updates = 0, actor_updates = 0;
    double critic = 0.0, actor = 0.0, target = 0.0;

    void add(const LossReport& r) {
        ++updates;
        critic += 0.5 * (r.critic1_loss + r.critic2_loss);
        target += r.mean_target;
        if (r.actor_updated) {
            ++actor_updates;
            actor += r.actor_loss;
        }
    }

    LossWindow flush(std::uint64_t step) {
        LossWindow w;
        w.env_step = step;
        w.updates = updates;
        if (updates > 0) {
            w.critic_loss = critic / static_cast<double>(updates);
            w.mean_target = target / static_cast<double>(updates);
        }
        if (actor_updates > 0) w.actor_loss = actor / static_cast<double>(actor_updates);
        *this = {};
        return w;
    }
};

}  // namespace

FinetuneResult run_finetune(const EnvSpec& spec, const OfflineDataset& dataset, const Td3Agent& pi0,
                            const FinetuneConfig& config, std::uint64_t seed) {
    config.validate();
    pi0.hyper.validate();
    if (pi0.obs_dim != spec.obs_dim || pi0.action_dim != spec.action_dim)
        throw ShapeError("agent dimensions do not match the environment");
    if (dataset.env != spec.kind) throw ConfigError("dataset was generated on a different environment");
    const bool uses_d = reads_dataset(config.method) || config.single_buffer;
    if (uses_d && dataset.trajectories.empty())
        throw ConfigError("method '" + to_string(config.method) + "' needs an offline dataset");

    const auto t_start = std::chrono::steady_clock::now();
    const auto& reference = dataset.reference;
    const int batch = pi0.hyper.batch;

    FinetuneResult result{RunLog{}, pi0};
    RunLog& log = result.log;
    Td3Agent& agent = result.agent;
    log.seed = seed;
    log.config = config;
    log.hyper = pi0.hyper;

    if (config.method == FinetuneMethod::replay_reset)
        agent = reset_parameters(agent, derive_seed(seed, "reset"));

    RegularizerConfig reg;
    if (config.method == FinetuneMethod::o2o_reg || config.method == FinetuneMethod::mixed) {
        reg.bc_coefficient = config.beta;
        reg.q_normalization = config.beta > 0.0;
    }

    std::optional<ReplayBuffer> offline;
    ReplayBuffer online(config.buffer_capacity() + (config.single_buffer ? dataset.num_transitions() : 0));
    if (config.single_buffer) {
        for (const auto& t : dataset.flatten()) online.push(t);
    } else if (reads_dataset(config.method)) {
        offline.emplace(dataset.num_transitions());
        for (const auto& t : dataset.flatten()) offline->push(t);
    }
    std::optional<MixedSampler> sampler;
    if (offline) sampler.emplace(*offline, online, config.alpha);

    const std::uint64_t ev_seed = eval_seed(seed);
    auto evaluate = [&](std::uint64_t step) {
        auto ev = evaluate_policy(actor_policy(agent.actor), spec, reference, config.eval_episodes, ev_seed);
        log.curve.append(step, std::move(ev.normalized));
    };
    evaluate(0);

    Rng explore_rng(derive_seed(seed, "explore"));
    Rng sample_rng(derive_seed(seed, "sample"));
    Rng update_rng(derive_seed(seed, "update"));
    Env env(spec);
    std::uint64_t episode = 0;
    Vector obs = env.reset(derive_seed(seed, "collect", episode));

    const int start_delay = config.start_delay(batch);
    WindowAccumulator window;

    for (int t = 1; t <= config.total_env_steps; ++t) {
        if (t > start_delay) {
            if (log.counters.first_update_step == 0) {
                log.counters.first_update_step = static_cast<std::uint64_t>(t);
                log.counters.online_size_at_first_update = online.size();
            }
            try {
                for (int u = 0; u < config.utd; ++u) {
                    const auto transitions = sampler ? sampler->sample(static_cast<std::size_t>(batch), sample_rng).transitions
                                                     : online.sample(static_cast<std::size_t>(batch), sample_rng);
                    window.add(td3_update(agent, make_batch(transitions), reg, update_rng));
                    ++log.counters.total_updates;
                }
            } catch (const NumericError& e) {
                log.aborted = true;
                log.abort_reason = "step " + std::to_string(t) + ": " + e.what();
                break;
            }
        }

        const Vector action = act(agent, obs, true, explore_rng);
        const StepResult step = env.step(action);
        online.push(Transition{obs, action, step.next_obs, step.reward,
                               step.terminated, step.truncated});
        log.counters.env_steps = static_cast<std::uint64_t>(t);
        if (step.done()) {
            ++episode;
            obs = env.reset(derive_seed(seed, "collect", episode));
        } else {
            obs = step.next_obs;
        }

        if (t % config.eval_every == 0) {
            log.losses.push_back(window.flush(static_cast<std::uint64_t>(t)));
            evaluate(static_cast<std::uint64_t>(t));
        }
    }

    if (offline) log.counters.offline_samples_drawn = offline->samples_drawn();
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

double last_k_eval_stat(const RunLog& log, int k) {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    const auto& pts = log.curve.points;
    if (pts.size() < static_cast<std::size_t>(k))
        throw InvalidArgument("curve has " + std::to_string(pts.size()) + " points, fewer than k = " +
                              std::to_string(k));
    double s = 0.0;
    for (std::size_t i = pts.size() - static_cast<std::size_t>(k); i < pts.size(); ++i) s += pts[i].mean;
    return s / static_cast<double>(k);
}

}  // namespace o2o
