// Command-line front end for the experiment harness.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "uat/harness.hpp"
#include "uat/parallel.hpp"

using namespace uat;

int main(int argc, char** argv) {
    CLI::App app{"uat_lab: unlabeled adversarial training experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON object of key/value settings")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed");
    app.add_option("--out", out, "output directory");
    app.add_option("--threads", threads, "worker threads (results do not depend on it)")->check(CLI::NonNegativeNumber);

    std::optional<std::string> method;
    harness::RunInputs inputs;
    std::string chosen;

    auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& experiment,
                    const std::string& help) {
        auto* sub = parent->add_subcommand(name, help);
        sub->callback([&chosen, experiment] { chosen = experiment; });
        return sub;
    };
    auto with_subject = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", inputs.checkpoint, "model JSON; trains cfg.method when omitted")
            ->check(CLI::ExistingFile);
        sub->add_option("--data", inputs.data, ".toyset file; generated from the config when omitted")
            ->check(CLI::ExistingFile);
        sub->add_option("--method", method, "training method when no checkpoint is given");
    };

    auto* data = app.add_subcommand("data", "dataset tools");
    data->require_subcommand(1);
    leaf(data, "gen", "data_gen", "generate a toy dataset");

    auto* gauss = app.add_subcommand("gaussian", "two-class Gaussian model studies");
    gauss->require_subcommand(1);
    leaf(gauss, "sweep", "gaussian_sweep", "success rate of the ε²√d unlabeled-sample rule and scaling fit");
    leaf(gauss, "check-lemmas", "check_lemmas", "Monte-Carlo tails against the concentration bounds");

    auto* train = leaf(&app, "train", "train", "train one model and evaluate it");
    train->add_option("--method", method, "standard|sup_at|uat_ot|uat_ft|uat_pp|vat|oracle");
    train->add_option("--data", inputs.data, ".toyset file")->check(CLI::ExistingFile);

    with_subject(leaf(&app, "evaluate", "evaluate", "attack suite and smoothness decomposition"));

    auto* sweep = app.add_subcommand("sweep", "training sweeps");
    sweep->require_subcommand(1);
    leaf(sweep, "unlabeled", "unlabeled_sweep", "methods × unlabeled pool size");
    leaf(sweep, "noise", "noise_sweep", "pseudo-label noise, random and correlated");

    auto* shift = app.add_subcommand("shift", "distribution shift");
    shift->require_subcommand(1);
    leaf(shift, "compare", "shift_compare", "in-distribution vs shifted unlabeled pools");

    with_subject(leaf(&app, "landscape", "landscape", "loss surface around a PGD direction"));
    with_subject(leaf(&app, "traces", "convergence", "PGD objective per restart"));
    with_subject(leaf(&app, "spsa-scatter", "spsa_scatter", "final margins of PGD vs SPSA"));

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = config_path.empty() ? harness::ExperimentConfig{} : harness::load_config(config_path);
        cfg.experiment = chosen;
        if (seed) {
            cfg.seed = *seed;
        }
        if (out) {
            cfg.out = *out;
        }
        if (threads) {
            cfg.threads = *threads;
        }
        if (method) {
            cfg.method = train::parse_method(*method);
        }
        if (cfg.threads > 0) {
            set_thread_count(cfg.threads);
        }
        const auto files = harness::run_experiment(cfg, inputs);
        harness::write_outputs(cfg.out, files);
        for (const auto& [name, text] : files) {
            std::cout << cfg.out << "/" << name << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
