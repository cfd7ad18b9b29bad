#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "o2o/data.hpp"
#include "o2o/errors.hpp"

using namespace o2o;
namespace fs = std::filesystem;

namespace {

Transition tagged(double tag, int obs_dim = 3, int act_dim = 1) {
    Transition t;
    t.obs = Vector::Constant(obs_dim, tag);
    t.action = Vector::Constant(act_dim, 0.0);
    t.next_obs = Vector::Constant(obs_dim, tag + 0.5);
    t.reward = tag;
    return t;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("o2o_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double dataset_mean(EnvKind kind, const BehaviorSpec& b, int n) {
    return dataset_return(generate_dataset(EnvSpec::make(kind), b, n, 31)).mean;
}

}  // namespace

TEST(Dataset, SameSeedSameDataset) {
    const auto spec = EnvSpec::make(EnvKind::pendulum);
    const auto a = generate_dataset(spec, BehaviorSpec::noisy_expert(0.2), 10, 5);
    const auto b = generate_dataset(spec, BehaviorSpec::noisy_expert(0.2), 10, 5);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.trajectories.size(), 10u);
    EXPECT_FALSE(a == generate_dataset(spec, BehaviorSpec::noisy_expert(0.2), 10, 6));
}

TEST(Dataset, SparseExpertTrajectoriesEndAtGoal) {
    const auto d = generate_dataset(EnvSpec::make(EnvKind::point_goal_sparse), BehaviorSpec::expert(), 20, 3);
    for (const auto& traj : d.trajectories) {
        ASSERT_FALSE(traj.empty());
        EXPECT_TRUE(traj.back().terminated);
        EXPECT_EQ(traj.back().reward, 1.0);
        for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
            EXPECT_EQ(traj[i].reward, 0.0);
            EXPECT_FALSE(traj[i].terminated || traj[i].truncated);
            EXPECT_EQ(traj[i].next_obs, traj[i + 1].obs);
        }
    }
}

TEST(Dataset, PendulumTrajectoriesAreTruncatedOnly) {
    const auto d = generate_dataset(EnvSpec::make(EnvKind::pendulum), BehaviorSpec::uniform_random(), 3, 3);
    for (const auto& traj : d.trajectories) {
        EXPECT_EQ(traj.size(), 200u);
        EXPECT_TRUE(traj.back().truncated);
        EXPECT_FALSE(traj.back().terminated);
    }
}

TEST(Dataset, EpsilonMixtureSitsBetweenRandomAndExpert) {
    const double rnd = dataset_mean(EnvKind::pendulum, BehaviorSpec::uniform_random(), 30);
    const double mix = dataset_mean(EnvKind::pendulum, BehaviorSpec::epsilon_mixture(0.5), 30);
    const double exp = dataset_mean(EnvKind::pendulum, BehaviorSpec::expert(), 30);
    EXPECT_LT(rnd, mix);
    EXPECT_LT(mix, exp);
}

TEST(Dataset, ReturnFormula) {
    OfflineDataset d;
    d.env = EnvKind::pendulum;
    d.reference.random_return = 0.0;
    d.reference.expert_return = 10.0;
    d.trajectories.push_back({tagged(1.0), tagged(2.0), tagged(3.0)});
    const auto r = dataset_return(d);
    ASSERT_EQ(r.per_trajectory.size(), 1u);
    EXPECT_DOUBLE_EQ(r.per_trajectory[0], 0.6);
    EXPECT_DOUBLE_EQ(r.mean, 0.6);
    d.trajectories.clear();
    EXPECT_THROW(dataset_return(d), InvalidArgument);
}

TEST(Dataset, ExpertAndHalfHalfMeans) {
    EXPECT_NEAR(dataset_mean(EnvKind::pendulum, BehaviorSpec::expert(), 40), 1.0, 0.1);
    const auto spec = EnvSpec::make(EnvKind::pendulum);
    const auto d = generate_dataset(spec, {{BehaviorSpec::expert(), 50}, {BehaviorSpec::uniform_random(), 50}}, 8);
    EXPECT_NEAR(dataset_return(d).mean, 0.5, 0.1);
    EXPECT_EQ(d.behavior.size(), 2u);
}

TEST(ReplayBuffer, RingSemantics) {
    ReplayBuffer b(2);
    b.push(tagged(1));
    EXPECT_EQ(b.size(), 1u);
    b.push(tagged(2));
    b.push(tagged(3));
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b.at(0).reward, 2.0);
    EXPECT_EQ(b.at(1).reward, 3.0);
    EXPECT_THROW(b.at(2), InvalidArgument);
    EXPECT_THROW(b.push(tagged(4, 5)), ShapeError);
}

TEST(ReplayBuffer, OrderStableUnderOverwrites) {
    ReplayBuffer b(5);
    for (int i = 0; i < 23; ++i) {
        b.push(tagged(i));
        const std::size_t expect = std::min(i + 1, 5);
        ASSERT_EQ(b.size(), expect);
        for (std::size_t k = 0; k < b.size(); ++k)
            EXPECT_EQ(b.at(k).reward, static_cast<double>(i + 1 - static_cast<int>(b.size()) + static_cast<int>(k)));
    }
}

TEST(ReplayBuffer, SamplingContract) {
    ReplayBuffer b(10);
    Rng rng(1);
    EXPECT_THROW(b.sample(4, rng), EmptyBufferError);
    b.push(tagged(7));
    const auto batch = b.sample(5, rng);
    ASSERT_EQ(batch.size(), 5u);
    for (const auto& t : batch) EXPECT_EQ(t, b.at(0));
    EXPECT_EQ(b.samples_drawn(), 5u);
    for (int i = 0; i < 9; ++i) b.push(tagged(i));
    Rng r1(9), r2(9);
    EXPECT_EQ(b.sample(16, r1), b.sample(16, r2));
}

TEST(ReplayBuffer, UniformSamplingChiSquare) {
    const std::size_t n = 20;
    ReplayBuffer b(n);
    for (std::size_t i = 0; i < n; ++i) b.push(tagged(static_cast<double>(i)));
    Rng rng(123);
    std::vector<double> counts(n, 0.0);
    const std::size_t draws = 100000;
    for (const auto& t : b.sample(draws, rng)) counts[static_cast<std::size_t>(t.reward)] += 1;
    const double expected = static_cast<double>(draws) / n;
    const double se = std::sqrt(expected * (1.0 - 1.0 / n));
    double chi2 = 0.0;
    for (double c : counts) {
        EXPECT_LT(std::abs(c - expected), 3.0 * se + 1.0);
        chi2 += (c - expected) * (c - expected) / expected;
    }
    // 19 dof, 0.999 quantile ~ 43.8
    EXPECT_LT(chi2, 43.8);
}

TEST(MixedSampler, ExactOfflineCount) {
    ReplayBuffer off(100), on(100);
    for (int i = 0; i < 50; ++i) {
        auto t = tagged(1.0);
        off.push(t);
        on.push(tagged(-1.0));
    }
    Rng rng(5);
    for (double alpha : {0.0, 0.25, 0.5, 1.0}) {
        MixedSampler s(off, on, alpha);
        for (int rep = 0; rep < 50; ++rep) {
            const auto batch = s.sample(256, rng);
            ASSERT_EQ(batch.transitions.size(), 256u);
            std::size_t offline = 0;
            for (const auto& t : batch.transitions) offline += t.reward > 0;
            EXPECT_EQ(offline, static_cast<std::size_t>(std::llround(alpha * 256)));
            EXPECT_EQ(batch.offline_count, offline);
        }
    }
    EXPECT_THROW(MixedSampler(off, on, 1.5), ConfigError);
    ReplayBuffer empty(4);
    EXPECT_THROW(MixedSampler(off, empty, 0.5).sample(8, rng), EmptyBufferError);
}

TEST(Batch, StacksTransitions) {
    auto a = tagged(1.0);
    a.terminated = true;
    auto b = tagged(2.0);
    b.truncated = true;
    const auto batch = make_batch({a, b});
    EXPECT_EQ(batch.size(), 2u);
    EXPECT_EQ(batch.obs.row(1).transpose(), b.obs);
    EXPECT_EQ(batch.terminated[0], 1.0);
    EXPECT_EQ(batch.terminated[1], 0.0);
    EXPECT_EQ(batch.rewards[1], 2.0);
}

TEST(DatasetFile, RoundTrip) {
    const auto dir = temp_dir("roundtrip");
    const auto d = generate_dataset(EnvSpec::make(EnvKind::point_goal_sparse), BehaviorSpec::noisy_expert(0.3), 6, 2);
    save_dataset(d, dir / "d.jsonl", {{"config_hash", "abc"}});
    nlohmann::json header;
    const auto back = load_dataset(dir / "d.jsonl", &header);
    EXPECT_EQ(back, d);
    EXPECT_EQ(header.at("config_hash"), "abc");
    EXPECT_EQ(header.at("n_transitions"), d.num_transitions());
}

TEST(DatasetFile, SaveIsByteDeterministic) {
    const auto dir = temp_dir("bytes");
    const auto spec = EnvSpec::make(EnvKind::pendulum);
    save_dataset(generate_dataset(spec, BehaviorSpec::uniform_random(), 3, 2), dir / "a.jsonl");
    save_dataset(generate_dataset(spec, BehaviorSpec::uniform_random(), 3, 2), dir / "b.jsonl");
    std::ifstream a(dir / "a.jsonl"), b(dir / "b.jsonl");
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(sa, sb);
}

TEST(DatasetFile, TruncatedFileIsParseError) {
    const auto dir = temp_dir("trunc");
    const auto d = generate_dataset(EnvSpec::make(EnvKind::pendulum), BehaviorSpec::expert(), 2, 2);
    save_dataset(d, dir / "d.jsonl");
    std::ifstream in(dir / "d.jsonl");
    std::string all((std::istreambuf_iterator<char>(in)), {});
    {
        std::ofstream out(dir / "cut.jsonl");
        out << all.substr(0, all.size() / 2);
    }
    EXPECT_THROW(load_dataset(dir / "cut.jsonl"), ParseError);
    {
        std::ofstream out(dir / "short.jsonl");
        out << all.substr(0, all.find('\n', all.size() / 2) + 1);
    }
    EXPECT_THROW(load_dataset(dir / "short.jsonl"), ParseError);
}

TEST(DatasetFile, HeaderDimensionMismatchIsSchemaError) {
    const auto dir = temp_dir("schema");
    const auto d = generate_dataset(EnvSpec::make(EnvKind::pendulum), BehaviorSpec::expert(), 1, 2);
    save_dataset(d, dir / "d.jsonl");
    std::ifstream in(dir / "d.jsonl");
    std::string first;
    std::getline(in, first);
    std::string rest((std::istreambuf_iterator<char>(in)), {});
    auto header = nlohmann::json::parse(first);
    header["obs_dim"] = 5;
    {
        std::ofstream out(dir / "bad.jsonl");
        out << header.dump() << '\n' << rest;
    }
    EXPECT_THROW(load_dataset(dir / "bad.jsonl"), SchemaError);
    EXPECT_THROW(load_dataset(dir / "missing.jsonl"), FileError);
}

TEST(DatasetFile, AtomicWriteCreatesParents) {
    const auto dir = temp_dir("atomic");
    write_file_atomic(dir / "x" / "y" / "z.txt", "hello");
    std::ifstream in(dir / "x" / "y" / "z.txt");
    std::string s;
    in >> s;
    EXPECT_EQ(s, "hello");
    EXPECT_FALSE(fs::exists(dir / "x" / "y" / "z.txt.tmp"));
}
