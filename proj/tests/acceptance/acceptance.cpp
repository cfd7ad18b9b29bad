// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fail.
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "../oracles.hpp"
#include "o2o/errors.hpp"
#include "o2o/runner.hpp"

using namespace o2o;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(4);
    s << x;
    return s.str();
}

fs::path g_workdir;
fs::path g_configs;
int g_jobs = 1;

Outcome gradient_correctness() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> depth(1, 3), width(1, 16), batch(1, 8);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        std::vector<int> sizes{width(rng)};
        const int d = depth(rng);
        for (int l = 0; l < d; ++l) sizes.push_back(width(rng));
        const auto hidden = k % 2 ? Activation::relu : Activation::tanh;
        const auto out = k % 3 ? Activation::linear : Activation::tanh;
        const auto net = init_net(sizes, hidden, out, 1000 + static_cast<std::uint64_t>(k));
        const int b = batch(rng);
        Matrix x(b, sizes.front()), g(b, sizes.back());
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
        worst = std::max(worst, oracle::max_relative_error(backward(net, x, g), oracle::fd_gradients(net, x, g)));
    }
    return {worst < 1e-4, "max relative error " + fmt(worst) + " over 50 nets"};
}

Outcome decomposition_identity() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    std::uniform_int_distribution<int> len(1, 100);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        EvalCurve c;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) c.append(static_cast<std::uint64_t>(i) * 1000, {u(rng)});
        const auto d = decompose(c, c.points.front().mean, u(rng));
        worst = std::max(worst, std::abs(d.final - (d.prior + d.stability + d.plasticity)));
    }
    return {worst < 1e-12, "max residual " + fmt(worst)};
}

Outcome metric_spot_values() {
    const double s = stability({0.5, 0.3, 0.7}, 0.5);
    const double p = plasticity({0.5, 0.3, 0.7});
    const bool ok = std::abs(s - -0.2) < 1e-15 && std::abs(p - 0.4) < 1e-15;
    return {ok, "stability " + fmt(s) + ", plasticity " + fmt(p)};
}

Outcome statistics_oracle() {
    std::mt19937_64 rng(2025);
    std::uniform_real_distribution<double> mean(0.0, 1.0), sd(0.005, 0.3);
    std::uniform_int_distribution<int> n(2, 250);
    double worst_p = 0.0;
    int label_mismatch = 0;
    for (int k = 0; k < 50; ++k) {
        const auto a = SampleStats::summary(mean(rng), sd(rng), static_cast<std::size_t>(n(rng)));
        // Keep some pairs close so every regime shows up.
        const double mb = k % 2 ? a.mean + 0.02 * (mean(rng) - 0.5) : mean(rng);
        const auto b = SampleStats::summary(mb, sd(rng), static_cast<std::size_t>(n(rng)));
        const auto ref = oracle::welch_reference(a.mean, a.std, static_cast<double>(a.n), b.mean, b.std,
                                                 static_cast<double>(b.n), 0.05);
        const auto got = welch_two_sided(a, b);
        const auto label = tost_classify(a, b);
        worst_p = std::max({worst_p, std::abs(got.p - ref.p), std::abs(label.p_lower - ref.p_lower),
                            std::abs(label.p_upper - ref.p_upper),
                            std::abs(student_t_cdf(got.t, got.dof) - oracle::t_cdf(got.t, got.dof))});
        const bool lo = ref.p_lower < 0.05, hi = ref.p_upper < 0.05;
        const Regime expect = lo && hi ? Regime::Comparable
                              : lo || hi ? (a.mean > b.mean ? Regime::Superior : Regime::Inferior)
                                         : Regime::Inconclusive;
        if (label.tag != expect) ++label_mismatch;
    }
    const double table = student_t_cdf(2.042, 30.0);
    const bool ok = worst_p < 1e-3 && label_mismatch == 0 && std::abs(table - 0.975) < 1e-3;
    return {ok, "max p deviation " + fmt(worst_p) + ", label mismatches " + std::to_string(label_mismatch) +
                    ", T30(2.042) = " + fmt(table)};
}

Outcome sign_checks() {
    const auto a = tost_classify(SampleStats::summary(0.451, 0.002, 10), SampleStats::summary(0.271, 0.135, 202));
    const auto b = tost_classify(SampleStats::summary(0.657, 0.059, 10), SampleStats::summary(1.0, 0.0, 846));
    return {a.tag == Regime::Superior && b.tag == Regime::Inferior,
            "first " + to_string(a.tag) + ", second " + to_string(b.tag)};
}

Outcome sampler_exactness() {
    ReplayBuffer offline(1000), online(1000);
    for (int i = 0; i < 1000; ++i) {
        Transition t{Vector::Zero(1), Vector::Zero(1), Vector::Zero(1), 1.0, false, false};
        offline.push(t);
        t.reward = 0.0;
        online.push(t);
    }
    MixedSampler sampler(offline, online, 0.5);
    Rng rng(3);
    std::size_t bad = 0;
    for (int k = 0; k < 10000; ++k) {
        const auto b = sampler.sample(256, rng);
        std::size_t from_offline = 0;
        for (const auto& t : b.transitions) from_offline += t.reward == 1.0;
        if (from_offline != 128 || b.transitions.size() != 256) ++bad;
    }
    return {bad == 0, std::to_string(bad) + " of 10000 batches off 128/256"};
}

struct Pi0Fixture {
    EnvSpec spec = EnvSpec::make(EnvKind::pendulum);
    OfflineDataset data;
    Td3Agent pi0;
};

const Pi0Fixture& pendulum_pi0() {
    static const Pi0Fixture f = [] {
        Pi0Fixture out;
        out.data = generate_dataset(out.spec, BehaviorSpec::expert(), 20, 41);
        Td3Hyper h;
        h.hidden = {32, 32};
        h.batch = 128;
        h.actor_lr = h.critic_lr = 1e-3;
        out.pi0 = offline_rl_pretrain(out.data, 2000, 0.4, 17, h);
        return out;
    }();
    return f;
}

Outcome warmup_contract() {
    const auto& f = pendulum_pi0();
    FinetuneConfig c;
    c.method = FinetuneMethod::warmup;
    c.total_env_steps = 1000;
    c.warmup_steps = 500;
    c.eval_every = 1000;
    c.eval_episodes = 1;
    const auto r = run_finetune(f.spec, f.data, f.pi0, c, 5);
    FinetuneConfig paper = c;
    paper.total_env_steps = 50000;
    paper.warmup_steps = 5000;
    const auto echo = nlohmann::json(paper).get<FinetuneConfig>();
    const bool ok = r.log.counters.first_update_step == 501 && r.log.counters.updates_before_start == 0 &&
                    r.log.counters.online_size_at_first_update == 500 &&
                    r.log.counters.total_updates == 500 && echo.warmup_steps == 5000 &&
                    echo.start_delay(f.pi0.hyper.batch) == 5000;
    return {ok, "first update at step " + std::to_string(r.log.counters.first_update_step) + ", " +
                    std::to_string(r.log.counters.total_updates) + " updates, K=5000 echo start delay " +
                    std::to_string(echo.start_delay(f.pi0.hyper.batch))};
}

Outcome reset_contract() {
    const auto& f = pendulum_pi0();
    const auto reset = reset_parameters(f.pi0, 99);
    const bool equal = reset.same_state(make_agent(f.spec.obs_dim, f.spec.action_dim, f.pi0.hyper, 99));
    FinetuneConfig c;
    c.total_env_steps = 200;
    c.eval_every = 100;
    c.warmup_steps = 100;
    c.eval_episodes = 10;
    c.method = FinetuneMethod::replay_reset;
    const auto rr = run_finetune(f.spec, f.data, f.pi0, c, 8);
    c.method = FinetuneMethod::baseline;
    const auto base = run_finetune(f.spec, f.data, f.pi0, c, 8);
    const double j0 = evaluate_policy(actor_policy(f.pi0.actor), f.spec, f.data.reference, 10, eval_seed(8)).mean;
    const double reset0 = rr.log.curve.points.front().mean;
    const double base0 = base.log.curve.points.front().mean;
    const bool ok = equal && reset0 <= 0.2 && std::abs(base0 - j0) < 1e-12;
    return {ok, std::string("reset equals fresh init: ") + (equal ? "yes" : "no") + ", reset step-0 " + fmt(reset0) +
                    ", baseline step-0 " + fmt(base0) + " vs J(pi0) " + fmt(j0)};
}

Outcome matrix_arithmetic() {
    const auto m = ConfusionMatrix::from_counts({{{24, 2, 1}, {6, 2, 3}, {2, 4, 19}}});
    const bool ok = m.correct() == 45 && m.opposite() == 3 && m.total() == 63 &&
                    std::abs(m.accuracy() - 45.0 / 63.0) < 1e-15 && std::abs(m.opposite_rate() - 3.0 / 63.0) < 1e-15;
    return {ok, m.summary()};
}

ExperimentConfig workdir_config(const std::string& file) {
    auto c = load_config(g_configs / file);
    c.output_dir = g_workdir.string();
    return c;
}

RunOptions run_options() {
    RunOptions o;
    o.force = true;
    o.jobs = g_jobs;
    return o;
}

Outcome end_to_end(const std::string& file, Regime want, const std::vector<Winner>& allowed, bool need_data_iqm) {
    const auto config = workdir_config(file);
    const auto a = cmd_run(config, run_options());
    const auto regime = regime_from_string(a.at("regime").at("label").get<std::string>());
    if (a.at("comparison").is_null()) return {false, "no class comparison produced"};
    const auto& cmp = a.at("comparison");
    const auto winner = winner_from_string(cmp.at("winner").get<std::string>());
    const double iqm_p = cmp.at("iqm_pi0_centric").get<double>(), iqm_d = cmp.at("iqm_data_centric").get<double>();
    bool ok = regime == want && std::find(allowed.begin(), allowed.end(), winner) != allowed.end();
    if (need_data_iqm) ok = ok && iqm_d >= iqm_p;
    std::ostringstream s;
    s << "regime " << to_string(regime) << " (J(pi0) " << fmt(a.at("j_pi0").at("mean").get<double>()) << ", J_D "
      << fmt(a.at("j_d").at("mean").get<double>()) << "), winner " << symbol(winner) << " ("
      << cmp.at("best_pi0_centric").get<std::string>() << " IQM " << fmt(iqm_p) << " vs "
      << cmp.at("best_data_centric").get<std::string>() << " IQM " << fmt(iqm_d) << ", p "
      << fmt(cmp.at("p").get<double>()) << ")";
    return {ok, s.str()};
}

Outcome superior_regime() {
    return end_to_end("pendulum_superior.json", Regime::Superior, {Winner::Pi0Better, Winner::Tie}, false);
}

Outcome inferior_regime() {
    return end_to_end("point_inferior.json", Regime::Inferior, {Winner::DataBetter, Winner::Tie}, true);
}

Outcome determinism() {
    auto c = load_config(g_configs / "smoke.json");
    std::string dumps[2];
    for (int i = 0; i < 2; ++i) {
        c.output_dir = (g_workdir / ("determinism_" + std::to_string(i))).string();
        fs::remove_all(c.output_dir);
        cmd_run(c, run_options());
        std::ifstream in(setting_dir(c) / "report" / "analysis.json");
        std::ostringstream s;
        s << in.rdbuf();
        dumps[i] = s.str();
    }
    return {!dumps[0].empty() && dumps[0] == dumps[1], "analysis.json " + std::to_string(dumps[0].size()) + " bytes, " +
                                                           (dumps[0] == dumps[1] ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string workdir = "acceptance_runs";
    std::string configs = O2O_CONFIG_DIR;
    std::vector<int> only;
    g_jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
    app.add_option("--configs", configs, "Directory holding the experiment configs");
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--jobs", g_jobs, "Concurrent fine-tune runs");
    CLI11_PARSE(app, argc, argv);
    g_workdir = fs::absolute(workdir);
    g_configs = configs;
    fs::create_directories(g_workdir);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"decomposition identity", decomposition_identity},
        {"metric spot values", metric_spot_values},
        {"statistics oracle", statistics_oracle},
        {"published regime signs", sign_checks},
        {"mixed sampler exactness", sampler_exactness},
        {"warm-up contract", warmup_contract},
        {"reset contract", reset_contract},
        {"confusion matrix arithmetic", matrix_arithmetic},
        {"end-to-end superior regime", superior_regime},
        {"end-to-end inferior regime", inferior_regime},
        {"pipeline determinism", determinism},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!r.pass) ++failed;
        std::cout << (r.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << r.detail
                  << " (" << fmt(secs) << " s)" << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
