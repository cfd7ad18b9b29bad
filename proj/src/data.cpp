#include "o2o/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "o2o/errors.hpp"

namespace o2o {

bool Transition::operator==(const Transition& other) const {
    return obs == other.obs && action == other.action && next_obs == other.next_obs &&
           reward == other.reward && terminated == other.terminated &&
           truncated == other.truncated;
}

std::size_t OfflineDataset::num_transitions() const {
    std::size_t n = 0;
    for (const auto& traj : trajectories) n += traj.size();
    return n;
}

std::vector<Transition> OfflineDataset::flatten() const {
    std::vector<Transition> out;
    out.reserve(num_transitions());
    for (const auto& traj : trajectories) out.insert(out.end(), traj.begin(), traj.end());
    return out;
}

bool OfflineDataset::operator==(const OfflineDataset& other) const {
    if (env != other.env || !(reference == other.reference) ||
        behavior.size() != other.behavior.size() || trajectories != other.trajectories)
        return false;
    for (std::size_t i = 0; i < behavior.size(); ++i) {
        if (!(behavior[i].behavior == other.behavior[i].behavior) ||
            behavior[i].n_traj != other.behavior[i].n_traj)
            return false;
    }
    return true;
}

OfflineDataset generate_dataset(const EnvSpec& spec, const BehaviorSpec& behavior, int n_traj,
                                std::uint64_t seed) {
    return generate_dataset(spec, std::vector<BehaviorComponent>{{behavior, n_traj}}, seed);
}

OfflineDataset generate_dataset(const EnvSpec& spec, const std::vector<BehaviorComponent>& components,
                                std::uint64_t seed) {
    if (components.empty()) throw InvalidArgument("dataset needs at least one behavior component");
    for (const auto& c : components) {
        if (c.n_traj < 1) throw InvalidArgument("n_traj must be >= 1");
        c.behavior.validate();
    }

    OfflineDataset d;
    d.env = spec.kind;
    d.behavior = components;
    d.reference = compute_reference_scores(spec, derive_seed(seed, "reference"));

    std::uint64_t traj_index = 0;
    for (std::size_t c = 0; c < components.size(); ++c) {
        const Policy policy = behavior_policy(components[c].behavior, spec);
        Rng rng(derive_seed(seed, "behavior", c));
        for (int i = 0; i < components[c].n_traj; ++i, ++traj_index) {
            const Episode ep = rollout(spec, policy, derive_seed(seed, "traj", traj_index), rng);
            std::vector<Transition> traj;
            traj.reserve(ep.length());
            for (std::size_t t = 0; t < ep.length(); ++t) {
                const bool last = t + 1 == ep.length();
                traj.push_back({ep.observations[t], ep.actions[t], ep.observations[t + 1],
                                ep.rewards[t], last && ep.terminated, last && ep.truncated});
            }
            d.trajectories.push_back(std::move(traj));
        }
    }
    return d;
}

DatasetReturn dataset_return(const OfflineDataset& dataset) {
    if (dataset.trajectories.empty()) throw InvalidArgument("dataset_return on empty dataset");
    DatasetReturn out;
    double total = 0.0;
    for (const auto& traj : dataset.trajectories) {
        double raw = 0.0;
        for (const auto& t : traj) raw += t.reward;
        const double norm = dataset.reference.normalize(raw);
        if (!std::isfinite(norm)) throw NumericError("non-finite trajectory return");
        out.per_trajectory.push_back(norm);
        total += norm;
    }
    out.mean = total / static_cast<double>(out.per_trajectory.size());
    return out;
}

// ---- replay ----------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidArgument("replay buffer capacity must be >= 1");
    storage_.reserve(std::min<std::size_t>(capacity, 1u << 20));
}

void ReplayBuffer::push(Transition t) {
    if (!storage_.empty()) {
        const auto& ref = storage_.front();
        if (t.obs.size() != ref.obs.size() || t.action.size() != ref.action.size() ||
            t.next_obs.size() != ref.next_obs.size())
            throw ShapeError("transition width does not match buffer contents");
    }
    if (storage_.size() < capacity_) {
        storage_.push_back(std::move(t));
        ++size_;
        return;
    }
    storage_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
    if (i >= size_) throw InvalidArgument("replay buffer index out of range");
    return storage_[(head_ + i) % size_];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
    if (size_ == 0) throw EmptyBufferError("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(storage_[pick(rng)]);
    samples_drawn_ += batch;
    return out;
}

MixedSampler::MixedSampler(const ReplayBuffer& offline, const ReplayBuffer& online, double alpha)
    : offline_(&offline), online_(&online), alpha_(alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("offline ratio alpha must be in [0,1]");
}

std::size_t MixedSampler::offline_count(std::size_t batch) const {
    return static_cast<std::size_t>(std::llround(alpha_ * static_cast<double>(batch)));
}

MixedBatch MixedSampler::sample(std::size_t batch, Rng& rng) const {
    if (offline_->empty() || online_->empty())
        throw EmptyBufferError("mixed sampling needs both buffers non-empty");
    MixedBatch out;
    out.offline_count = offline_count(batch);
    out.transitions = offline_->sample(out.offline_count, rng);
    auto online = online_->sample(batch - out.offline_count, rng);
    out.transitions.insert(out.transitions.end(), std::make_move_iterator(online.begin()),
                           std::make_move_iterator(online.end()));
    std::shuffle(out.transitions.begin(), out.transitions.end(), rng);
    return out;
}

Batch make_batch(const std::vector<Transition>& transitions) {
    if (transitions.empty()) throw InvalidArgument("empty batch");
    const auto n = static_cast<Eigen::Index>(transitions.size());
    const auto od = transitions.front().obs.size();
    const auto ad = transitions.front().action.size();
    Batch b;
    b.obs.resize(n, od);
    b.actions.resize(n, ad);
    b.next_obs.resize(n, od);
    b.rewards.resize(n);
    b.terminated.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = transitions[static_cast<std::size_t>(i)];
        b.obs.row(i) = t.obs.transpose();
        b.actions.row(i) = t.action.transpose();
        b.next_obs.row(i) = t.next_obs.transpose();
        b.rewards[i] = t.reward;
        b.terminated[i] = t.terminated ? 1.0 : 0.0;
    }
    return b;
}

// ---- file I/O --------------------------------------------------------------

namespace {

constexpr const char* kFormat = "o2o-dataset-v1";

nlohmann::json vec_json(const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vector json_vec(const nlohmann::json& j, int expected, std::size_t line, const char* field) {
    if (!j.is_array()) throw ParseError(line, std::string(field) + " must be an array");
    if (static_cast<int>(j.size()) != expected)
        throw SchemaError("line " + std::to_string(line) + ": " + field + " has width " +
                          std::to_string(j.size()) + ", header says " + std::to_string(expected));
    Vector v(expected);
    for (int i = 0; i < expected; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FileError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw FileError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_dataset(const OfflineDataset& dataset, const std::filesystem::path& path,
                  const nlohmann::json& extra_header) {
    nlohmann::json header = extra_header.is_object() ? extra_header : nlohmann::json::object();
    header["format"] = kFormat;
    header["env"] = to_string(dataset.env);
    header["obs_dim"] = dataset.obs_dim();
    header["action_dim"] = dataset.action_dim();
    header["n_traj"] = dataset.trajectories.size();
    header["n_transitions"] = dataset.num_transitions();
    auto behavior = nlohmann::json::array();
    for (const auto& c : dataset.behavior)
        behavior.push_back({{"behavior", c.behavior}, {"n_traj", c.n_traj}});
    header["behavior"] = std::move(behavior);
    header["reference"] = dataset.reference;

    std::ostringstream out;
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
        for (const auto& t : dataset.trajectories[i]) {
            nlohmann::json row = {{"traj", i},
                                  {"obs", vec_json(t.obs)},
                                  {"action", vec_json(t.action)},
                                  {"reward", t.reward},
                                  {"next_obs", vec_json(t.next_obs)},
                                  {"terminated", t.terminated},
                                  {"truncated", t.truncated}};
            out << row.dump() << '\n';
        }
    }
    write_file_atomic(path, out.str());
}

OfflineDataset load_dataset(const std::filesystem::path& path, nlohmann::json* header_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open dataset " + path.string());

    std::string line;
    std::size_t line_no = 0;
    auto parse_line = [&](const std::string& text) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(line_no, std::string("malformed json: ") + e.what());
        }
    };

    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    ++line_no;
    const nlohmann::json header = parse_line(line);

    OfflineDataset d;
    std::size_t n_traj = 0;
    std::size_t n_transitions = 0;
    int obs_dim = 0;
    int action_dim = 0;
    try {
        if (header.value("format", "") != kFormat) throw ParseError(1, "unknown dataset format");
        d.env = env_kind_from_string(header.at("env").get<std::string>());
        obs_dim = header.at("obs_dim").get<int>();
        action_dim = header.at("action_dim").get<int>();
        n_traj = header.at("n_traj").get<std::size_t>();
        n_transitions = header.at("n_transitions").get<std::size_t>();
        for (const auto& c : header.at("behavior"))
            d.behavior.push_back({c.at("behavior").get<BehaviorSpec>(), c.at("n_traj").get<int>()});
        d.reference = header.at("reference").get<ReferenceScores>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(1, std::string("bad header: ") + e.what());
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("line 1: ") + e.what());
    }
    const EnvSpec spec = EnvSpec::make(d.env);
    if (obs_dim != spec.obs_dim || action_dim != spec.action_dim)
        throw SchemaError("line 1: header dims (" + std::to_string(obs_dim) + "," +
                          std::to_string(action_dim) + ") do not match env " + to_string(d.env));
    if (d.reference.env != d.env) throw SchemaError("line 1: reference scores belong to another env");

    d.trajectories.resize(n_traj);
    std::size_t seen = 0;
    std::size_t current = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const nlohmann::json row = parse_line(line);
        try {
            const auto traj = row.at("traj").get<std::size_t>();
            if (traj >= n_traj) throw ParseError(line_no, "trajectory index out of range");
            if (traj < current) throw ParseError(line_no, "trajectory indices must be non-decreasing");
            current = traj;
            Transition t;
            t.obs = json_vec(row.at("obs"), obs_dim, line_no, "obs");
            t.action = json_vec(row.at("action"), action_dim, line_no, "action");
            t.next_obs = json_vec(row.at("next_obs"), obs_dim, line_no, "next_obs");
            t.reward = row.at("reward").get<double>();
            t.terminated = row.at("terminated").get<bool>();
            t.truncated = row.at("truncated").get<bool>();
            d.trajectories[traj].push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("bad transition: ") + e.what());
        }
        ++seen;
    }
    if (seen != n_transitions)
        throw ParseError(line_no + 1, "unexpected end of file: expected " +
                                          std::to_string(n_transitions) + " transitions, found " +
                                          std::to_string(seen));
    for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
        if (d.trajectories[i].empty())
            throw SchemaError("trajectory " + std::to_string(i) + " is empty");
    }
    if (header_out) *header_out = header;
    return d;
}

}  // namespace o2o
