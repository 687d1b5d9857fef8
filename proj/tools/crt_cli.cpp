// Command-line front end for the confidentially redacted training pipeline.
//
// Stages write versioned artifacts into the output directory:
//   generate       corpus.jsonl, test_corpus.jsonl, canaries.json
//   preprocess     public.jsonl, private.jsonl, preprocess_report.json
//   train          model.json, train_log.csv, train_meta.json
//   account        accountant_report.json
//   attack-canary  canary_attack.csv
//   attack-mi      mi_attack.csv
//   sweep          sweep.csv (the full mode x gamma matrix)

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "crt/experiment.hpp"

namespace {

crt::ExperimentConfig resolve_config(const std::string& config_path,
                                     std::optional<uint64_t> seed_override) {
    crt::ExperimentConfig config = config_path.empty()
                                       ? crt::default_experiment_config()
                                       : crt::load_experiment_config(config_path);
    if (seed_override) {
        config.seed = *seed_override;
    }
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"confidentially redacted training toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::optional<uint64_t> seed_override;
    app.add_option("--config", config_path, "experiment config file (JSON)");
    app.add_option("--out", out_dir, "output directory for artifacts");
    app.add_option("--seed", seed_override, "override the master seed");

    double gamma = 0.0;
    bool gamma_given = false;
    std::string mode_text = "crt";

    CLI::App* generate = app.add_subcommand("generate", "synthesize the corpora and canaries");
    CLI::App* preprocess = app.add_subcommand("preprocess", "dedup, redact and partition the corpus");
    preprocess->add_option("--gamma", gamma, "policy false-negative rate")->each([&](const std::string&) {
        gamma_given = true;
    });
    CLI::App* train = app.add_subcommand("train", "train a model in the chosen mode");
    train->add_option("--gamma", gamma, "policy false-negative rate")->each([&](const std::string&) {
        gamma_given = true;
    });
    train->add_option("--mode", mode_text, "non-private | non-private+redaction | dp-sgd | crt");
    CLI::App* account = app.add_subcommand("account", "compute the confidentiality report");
    account->add_option("--gamma", gamma, "policy false-negative rate")->each([&](const std::string&) {
        gamma_given = true;
    });
    CLI::App* attack_canary = app.add_subcommand("attack-canary", "canary exposure of the trained model");
    CLI::App* attack_mi = app.add_subcommand("attack-mi", "membership inference on the trained model");
    CLI::App* sweep = app.add_subcommand("sweep", "run the full mode x gamma matrix");

    CLI11_PARSE(app, argc, argv);

    try {
        const crt::ExperimentConfig config = resolve_config(config_path, seed_override);
        const std::filesystem::path out(out_dir);
        std::filesystem::create_directories(out);
        const double stage_gamma = gamma_given ? gamma : (config.gammas.empty() ? 0.0 : config.gammas.front());

        if (generate->parsed()) {
            crt::run_generate(config, out);
        } else if (preprocess->parsed()) {
            crt::run_preprocess(config, out, stage_gamma);
        } else if (train->parsed()) {
            crt::run_train(config, out, crt::train_mode_from_string(mode_text), stage_gamma);
        } else if (account->parsed()) {
            crt::run_account(config, out, stage_gamma);
        } else if (attack_canary->parsed()) {
            crt::run_attack_canary(config, out);
        } else if (attack_mi->parsed()) {
            crt::run_attack_mi(config, out);
        } else if (sweep->parsed()) {
            crt::run_sweep(config, out);
        }
    } catch (const crt::ConfigError& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return 2;
    } catch (const crt::MissingArtifactError& e) {
        std::cerr << "error: missing-artifact: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
