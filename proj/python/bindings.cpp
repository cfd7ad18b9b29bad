#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "o2o/errors.hpp"
#include "o2o/runner.hpp"

namespace py = pybind11;
using namespace o2o;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

SampleStats stats_arg(const py::object& o) {
    if (py::isinstance<py::tuple>(o)) {
        auto t = o.cast<std::tuple<double, double, std::size_t>>();
        return SampleStats::summary(std::get<0>(t), std::get<1>(t), std::get<2>(t));
    }
    return SampleStats::from_values(o.cast<std::vector<double>>());
}

ExperimentConfig config_arg(const py::object& o) {
    if (py::isinstance<py::dict>(o)) return from_py(o).get<ExperimentConfig>();
    return load_config(o.cast<std::filesystem::path>());
}

RunOptions options(bool force, int jobs) {
    RunOptions opts;
    opts.force = force;
    opts.jobs = jobs;
    return opts;
}

OfflineDataset dataset_arg(const std::string& env, const py::list& components, std::uint64_t seed) {
    std::vector<BehaviorComponent> parts;
    for (const auto& c : components) {
        const auto j = from_py(py::reinterpret_borrow<py::object>(c));
        parts.push_back({j.at("behavior").get<BehaviorSpec>(), j.at("n_traj").get<int>()});
    }
    return generate_dataset(EnvSpec::make(env_kind_from_string(env)), parts, seed);
}

}  // namespace

PYBIND11_MODULE(_o2o, m) {
    m.doc() = "Offline-to-online RL lab core";
    m.attr("__version__") = kToolVersion;

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ConsistencyError>(m, "ConsistencyError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FileError>(m, "FileError", PyExc_FileNotFoundError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("stability", &stability, py::arg("values"), py::arg("level"));
    m.def("plasticity", &plasticity, py::arg("values"));
    m.def("offline_baseline", &offline_baseline, py::arg("j0"), py::arg("jd"));
    m.def(
        "decompose",
        [](const std::vector<double>& means, double jd) {
            EvalCurve c;
            for (std::size_t i = 0; i < means.size(); ++i) c.append(i, {means[i]});
            if (means.empty()) throw InvalidArgument("decompose needs a non-empty curve");
            const auto d = decompose(c, means.front(), jd);
            return py::dict(py::arg("prior") = d.prior, py::arg("stability") = d.stability,
                            py::arg("plasticity") = d.plasticity, py::arg("final") = d.final);
        },
        py::arg("means"), py::arg("jd"), "Curve means start at J(pi_0).");

    m.def("student_t_cdf", &student_t_cdf, py::arg("t"), py::arg("dof"));
    m.def("incomplete_beta", &incomplete_beta, py::arg("a"), py::arg("b"), py::arg("x"));
    m.def(
        "welch_two_sided",
        [](const py::object& a, const py::object& b) {
            const auto r = welch_two_sided(stats_arg(a), stats_arg(b));
            return py::dict(py::arg("t") = r.t, py::arg("dof") = r.dof, py::arg("p") = r.p);
        },
        py::arg("a"), py::arg("b"), "Samples are value lists or (mean, std, n) tuples.");
    m.def(
        "tost_classify",
        [](const py::object& pi0, const py::object& data, double delta, double alpha) {
            return to_py(tost_classify(stats_arg(pi0), stats_arg(data), delta, alpha));
        },
        py::arg("pi0"), py::arg("data"), py::arg("delta") = 0.05, py::arg("alpha") = 0.05);
    m.def("iqm", &iqm, py::arg("values"));
    m.def(
        "compare_classes",
        [](const std::map<std::string, std::vector<std::vector<double>>>& pi0,
           const std::map<std::string, std::vector<std::vector<double>>>& data, double alpha) {
            auto variants = [](const auto& in) {
                std::vector<VariantRuns> out;
                for (const auto& [name, seeds] : in) out.push_back({name, seeds});
                return out;
            };
            return to_py(compare_classes(variants(pi0), variants(data), alpha));
        },
        py::arg("pi0_variants"), py::arg("data_variants"), py::arg("alpha") = 0.05,
        "Each variant maps a name to per-seed lists of last-k evaluation means.");
    m.def(
        "confusion_matrix",
        [](const std::array<std::array<std::uint64_t, 3>, 3>& counts) {
            return to_py(ConfusionMatrix::from_counts(counts));
        },
        py::arg("counts"));

    py::class_<DenseNet>(m, "DenseNet")
        .def(py::init([](const std::vector<int>& sizes, const std::string& hidden, const std::string& output,
                         std::uint64_t seed) {
                 return init_net(sizes, activation_from_string(hidden), activation_from_string(output), seed);
             }),
             py::arg("layer_sizes"), py::arg("hidden") = "relu", py::arg("output") = "linear", py::arg("seed") = 0)
        .def_readwrite("weights", &DenseNet::weights)
        .def_readwrite("biases", &DenseNet::biases)
        .def_readonly("layer_sizes", &DenseNet::layer_sizes)
        .def_property_readonly("num_parameters", &DenseNet::num_parameters)
        .def("forward", [](const DenseNet& n, const Matrix& x) { return forward(n, x); }, py::arg("inputs"))
        .def(
            "backward",
            [](const DenseNet& n, const Matrix& x, const Matrix& g) {
                const auto res = backward(n, forward_trace(n, x), g);
                return py::make_tuple(res.grads.weights, res.grads.biases, res.input_grad);
            },
            py::arg("inputs"), py::arg("output_grad"), "Returns (weight grads, bias grads, input grad).");

    m.def(
        "rollout_returns",
        [](const std::string& env, const py::object& behavior, int episodes, std::uint64_t seed) {
            const auto spec = EnvSpec::make(env_kind_from_string(env));
            const auto ref = compute_reference_scores(spec, seed);
            const auto b = from_py(behavior).get<BehaviorSpec>();
            const auto ev = evaluate_policy(behavior_policy(b, spec), spec, ref, episodes, seed);
            return py::make_tuple(ev.raw_returns, ev.normalized);
        },
        py::arg("env"), py::arg("behavior"), py::arg("episodes"), py::arg("seed"),
        "Raw and normalized returns of a scripted behavior.");
    m.def(
        "dataset_returns",
        [](const std::string& env, const py::list& components, std::uint64_t seed) {
            const auto d = dataset_arg(env, components, seed);
            return py::make_tuple(dataset_return(d).per_trajectory, d.num_transitions());
        },
        py::arg("env"), py::arg("components"), py::arg("seed"),
        "Per-trajectory normalized returns and transition count of a generated dataset.");
    m.def(
        "finetune",
        [](const std::string& env, const py::list& components, std::uint64_t data_seed, const py::dict& hyper,
           int pretrain_steps, double beta, const py::dict& config, std::uint64_t seed) {
            const auto d = dataset_arg(env, components, data_seed);
            const auto h = from_py(hyper).get<Td3Hyper>();
            const auto c = from_py(config).get<FinetuneConfig>();
            nlohmann::json log;
            {
                py::gil_scoped_release release;
                const auto pi0 = offline_rl_pretrain(d, pretrain_steps, beta, seed, h);
                log = run_finetune(EnvSpec::make(d.env), d, pi0, c, seed).log;
            }
            return to_py(log);
        },
        py::arg("env"), py::arg("components"), py::arg("data_seed"), py::arg("hyper"), py::arg("pretrain_steps"),
        py::arg("beta"), py::arg("config"), py::arg("seed"));

    m.def("config_hash", [](const py::object& c) { return config_arg(c).hash(); }, py::arg("config"));
    m.def(
        "gen_data", [](const py::object& c, bool force) { return cmd_gen_data(config_arg(c), options(force, 1)); },
        py::arg("config"), py::arg("force") = false);
    m.def(
        "pretrain",
        [](const py::object& c, bool force, int jobs) { return to_py(cmd_pretrain(config_arg(c), options(force, jobs))); },
        py::arg("config"), py::arg("force") = false, py::arg("jobs") = 1);
    m.def(
        "classify", [](const py::object& c) { return to_py(cmd_classify(config_arg(c))); }, py::arg("config"));
    m.def(
        "finetune_all",
        [](const py::object& c, int jobs) {
            const auto s = cmd_finetune(config_arg(c), options(false, jobs));
            return py::dict(py::arg("completed") = s.completed, py::arg("resumed") = s.resumed,
                            py::arg("quarantined") = s.quarantined, py::arg("aborted") = s.aborted);
        },
        py::arg("config"), py::arg("jobs") = 1);
    m.def(
        "report", [](const py::object& c) { return to_py(cmd_report(config_arg(c))); }, py::arg("config"));
    m.def(
        "run",
        [](const py::object& c, bool force, int jobs) {
            const auto cfg = config_arg(c);
            nlohmann::json out;
            {
                py::gil_scoped_release release;
                out = cmd_run(cfg, options(force, jobs));
            }
            return to_py(out);
        },
        py::arg("config"), py::arg("force") = false, py::arg("jobs") = 1, "All stages; returns the analysis.");
    m.def(
        "matrix",
        [](const std::vector<py::object>& cs) {
            std::vector<ExperimentConfig> configs;
            for (const auto& c : cs) configs.push_back(config_arg(c));
            return to_py(cmd_matrix(configs));
        },
        py::arg("configs"));
}
