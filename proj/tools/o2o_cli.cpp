// o2o: offline-to-online experiment pipeline.
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "o2o/errors.hpp"
#include "o2o/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitMissing = 2;
constexpr int kExitNumeric = 3;

o2o::ConfusionMatrix parse_counts(const std::string& text) {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 9) throw o2o::UsageError("--counts needs exactly 9 comma-separated values");
        counts[i / 3][i % 3] = std::stoull(item);
        ++i;
    }
    if (i != 9) throw o2o::UsageError("--counts needs exactly 9 comma-separated values");
    return o2o::ConfusionMatrix::from_counts(counts);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Offline-to-online RL lab: gen-data, pretrain, classify, finetune, report, matrix"};
    app.require_subcommand(1);
    app.set_version_flag("--version", o2o::kToolVersion);

    std::vector<std::string> config_paths;
    bool force = false;
    bool allow_mixed = false;
    int jobs = 1;
    std::string map_inconclusive;
    std::string counts;
    bool quiet = false;

    auto add_common = [&](CLI::App* sub, bool multi_config) {
        if (multi_config)
            sub->add_option("--config", config_paths, "Experiment config JSON (repeatable)");
        else
            sub->add_option("--config", config_paths, "Experiment config JSON")->required()->expected(1);
        sub->add_flag("--force", force, "Overwrite existing outputs");
        sub->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
        sub->add_flag("--allow-mixed", allow_mixed, "Accept artifacts with a different config hash");
        sub->add_option("--map-inconclusive", map_inconclusive, "Inconclusive regimes: comparable or drop")
            ->check(CLI::IsMember({"comparable", "drop"}));
        sub->add_flag("-q,--quiet", quiet, "No progress output");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate the offline dataset");
    auto* pre = app.add_subcommand("pretrain", "Pretrain pi_0 for every seed and record J(pi_0)");
    auto* cls = app.add_subcommand("classify", "Assign the TOST regime");
    auto* fin = app.add_subcommand("finetune", "Fine-tune every method x seed (resumable)");
    auto* rep = app.add_subcommand("report", "Analyse one setting");
    auto* mat = app.add_subcommand("matrix", "Confusion matrix over several settings");
    auto* run = app.add_subcommand("run", "All stages in order, skipping completed ones");
    for (auto* s : {gen, pre, cls, fin, rep, run}) add_common(s, false);
    add_common(mat, true);
    mat->add_option("--counts", counts, "Nine counts, row-major (rows >,~,<; columns Superior, Comparable, Inferior)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    o2o::RunOptions opts;
    opts.force = force;
    opts.jobs = jobs;
    opts.allow_mixed = allow_mixed;
    if (!map_inconclusive.empty()) opts.map_inconclusive = o2o::inconclusive_mapping_from_string(map_inconclusive);
    opts.log = quiet ? nullptr : &std::cerr;

    try {
        if (mat->parsed() && !counts.empty()) {
            const auto cm = parse_counts(counts);
            nlohmann::json out = {{"confusion", cm}};
            std::cout << out.dump(2) << '\n' << cm.summary() << '\n';
            return kExitOk;
        }
        if (config_paths.empty()) throw o2o::UsageError("--config is required");
        std::vector<o2o::ExperimentConfig> configs;
        for (const auto& p : config_paths) configs.push_back(o2o::load_config(p));
        const auto& config = configs.front();

        if (gen->parsed()) {
            std::cout << o2o::cmd_gen_data(config, opts).string() << '\n';
        } else if (pre->parsed()) {
            const auto r = o2o::cmd_pretrain(config, opts);
            std::cout << nlohmann::json(r).dump(2) << '\n';
        } else if (cls->parsed()) {
            std::cout << nlohmann::json(o2o::cmd_classify(config, opts)).dump(2) << '\n';
        } else if (fin->parsed()) {
            const auto s = o2o::cmd_finetune(config, opts);
            std::cout << "completed " << s.completed << ", resumed " << s.resumed << ", quarantined "
                      << s.quarantined << ", aborted " << s.aborted << '\n';
            if (s.aborted > 0) return kExitNumeric;
        } else if (rep->parsed()) {
            std::cout << o2o::cmd_report(config, opts).dump(2) << '\n';
        } else if (mat->parsed()) {
            const auto m = o2o::cmd_matrix(configs, opts);
            std::cout << m.dump(2) << '\n';
            const auto cm = m.at("confusion");
            if (cm.contains("summary")) std::cout << cm.at("summary").get<std::string>() << '\n';
        } else if (run->parsed()) {
            std::cout << o2o::cmd_run(config, opts).dump(2) << '\n';
        }
    } catch (const o2o::FileError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissing;
    } catch (const o2o::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const o2o::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitOk;
}
