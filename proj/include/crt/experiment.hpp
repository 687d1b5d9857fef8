#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crt/accountant.hpp"
#include "crt/attacks.hpp"
#include "crt/corpus.hpp"
#include "crt/policy.hpp"
#include "crt/preprocess.hpp"
#include "crt/trainer.hpp"

namespace crt {

// Config validation failures (exit code 2 in the CLI).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A stage input that an earlier stage should have produced (exit code 3).
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TrainMode { non_private, non_private_redaction, dpsgd, crt };

std::string_view to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view text);

struct ModelSettings {
    int embed_dim = 32;
    int hidden_dim = 64;
    int max_seq_len = 64;
};

struct MiSettings {
    SecretCategory category = SecretCategory::address;
    size_t per_class = 400;
    size_t groups_per_class = 150;
    size_t group_size = 20;
};

// Full experiment description. Loaded from a JSON config file; any omitted
// key falls back to the desk-scale default. Exactly one of target_budget /
// explicit_sigma drives the DP noise scale.
struct ExperimentConfig {
    uint64_t seed = 20260801;

    SyntheticSpec corpus_spec;             // training pools (holdout removed)
    SyntheticSpec fresh_spec;              // nonmember source (holdout pools)
    int test_dialogues = 1000;

    // rule files override the built-in pool-derived policies when set
    std::optional<std::filesystem::path> standard_rules_path;
    std::optional<std::filesystem::path> conservative_rules_path;

    std::vector<double> gammas = {0.0, 0.1, 0.3, 0.5};

    ModelSettings model;
    SgdConfig sgd;
    DpSgdConfig dpsgd;                     // noise_multiplier resolved separately
    std::optional<PrivacyBudget> target_budget;
    std::optional<double> explicit_sigma;

    CanarySpec canary;
    MiSettings mi;

    std::string config_hash;               // stable hash of the source config
};

ExperimentConfig default_experiment_config();
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Planned Gaussian-mechanism invocations for the configured schedule.
long planned_privacy_steps(const ExperimentConfig& config);

// Calibrates sigma against the target budget (or returns the explicit one).
double resolve_sigma(const ExperimentConfig& config);

// Deterministic derived inputs shared by every sweep cell.
struct ExperimentData {
    AnnotatedCorpus train_corpus;  // canaries inserted
    std::vector<std::string> canary_values;
    AnnotatedCorpus test_corpus;
    AnnotatedCorpus fresh_corpus;
    Vocab model_vocab;             // training tokens plus holdout pool tokens
    std::shared_ptr<PolicyRuleSet> pi_standard;
    std::shared_ptr<PolicyRuleSet> pi_conservative;
};

ExperimentData prepare_data(const ExperimentConfig& config);

std::shared_ptr<const Policy> make_degraded_pi(const ExperimentConfig& config,
                                               const ExperimentData& data, double gamma);

struct SweepCell {
    TrainMode mode = TrainMode::non_private;
    double gamma = 0.0;
    double sigma = 0.0;
    size_t public_count = 0;
    size_t private_count = 0;
    size_t privacy_steps = 0;
    double ppl = 0.0;
    double max_exposure = 0.0;
    double mi_accuracy = 0.0;
    double group_mi_accuracy = 0.0;
    double recall_pi = 0.0;
    double recall_pi_c = 0.0;
    double eps_base = 0.0;
    double eps_bayes = 0.0;
    double eps_recal = 0.0;
    double delta = 0.0;
};

struct CellResult {
    SweepCell cell;
    TinyLM model;
    TrainLog log;
};

// Trains one (mode, gamma) configuration and measures utility, attacks and
// accounted budgets. The shared `data` keeps corpora and canary values fixed
// across cells.
CellResult run_cell(const ExperimentConfig& config, const ExperimentData& data,
                    TrainMode mode, double gamma);

void write_sweep_csv(const std::vector<SweepCell>& cells, const ExperimentConfig& config,
                     const std::filesystem::path& path);

// Stage entry points used by the command-line tool. Each writes its
// artifacts into out_dir and fails loudly when an upstream artifact is
// missing.
void run_generate(const ExperimentConfig& config, const std::filesystem::path& out_dir);
void run_preprocess(const ExperimentConfig& config, const std::filesystem::path& out_dir, double gamma);
void run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir,
               TrainMode mode, double gamma);
void run_account(const ExperimentConfig& config, const std::filesystem::path& out_dir, double gamma);
void run_attack_canary(const ExperimentConfig& config, const std::filesystem::path& out_dir);
void run_attack_mi(const ExperimentConfig& config, const std::filesystem::path& out_dir);
void run_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir);

}  // namespace crt
