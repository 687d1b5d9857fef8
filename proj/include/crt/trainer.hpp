#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "crt/model.hpp"
#include "crt/rng.hpp"

namespace crt {

struct SgdConfig {
    size_t batch_size = 32;
    double learning_rate = 0.1;
    uint64_t rng_seed = 1;
};

struct DpSgdConfig {
    double clip_norm = 1.0;         // C
    double noise_multiplier = 0.0;  // sigma; noise stddev applied is sigma * C
    double sample_rate = 0.01;      // q, Poisson inclusion probability
    double learning_rate = 0.1;
    int epochs = 1;                 // T, alternating epochs in crt_train
    uint64_t rng_seed = 2;
};

enum class StepPhase { public_sgd, private_dpsgd };

struct StepRecord {
    int epoch = 0;
    StepPhase phase = StepPhase::public_sgd;
    size_t examples_from_public = 0;
    size_t examples_from_private = 0;
};

struct EpochStats {
    int epoch = 0;
    double public_loss = 0.0;   // mean per-token nll on the public set, end of epoch
    double private_loss = 0.0;  // same on the private set
    size_t steps_public = 0;
    size_t steps_private = 0;
    size_t cumulative_privacy_steps = 0;  // Gaussian-mechanism invocations so far
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    std::vector<StepRecord> steps;

    size_t total_privacy_steps() const;
    void write_csv(std::ostream& out) const;
    void write_csv(const std::filesystem::path& path) const;
};

// One pass of plain SGD: seeded shuffle, fixed-size minibatches (final
// partial batch included), theta <- theta - lr * mean gradient.
void sgd_epoch(TinyLM& model, const std::vector<std::vector<int>>& public_ids,
               const SgdConfig& cfg, Rng& rng, TrainLog* log = nullptr, int epoch = 0);

// One DP-SGD step: Poisson-sample the batch with probability q each, clip
// per-example gradients to C, add N(0, sigma^2 C^2 I), normalize by the
// expected batch size q*|D_pri|. An empty batch still adds noise and counts
// as a mechanism invocation.
void dpsgd_step(TinyLM& model, const std::vector<std::vector<int>>& private_ids,
                const DpSgdConfig& cfg, Rng& rng, TrainLog* log = nullptr, int epoch = 0);

// The alternating schedule: per epoch, one SGD pass over the public set then
// ceil(1/q) DP-SGD steps (expected coverage of the private set). Either set
// may be empty, degenerating to pure SGD or vanilla DP-SGD.
TrainLog crt_train(TinyLM& model,
                   const std::vector<std::vector<int>>& public_ids,
                   const std::vector<std::vector<int>>& private_ids,
                   const SgdConfig& sgd_cfg, const DpSgdConfig& dp_cfg);

// Sentences below two tokens carry no predicted position and are skipped by
// the training loops; this filter is applied up front so sampling rates and
// normalization refer to the trainable count.
std::vector<std::vector<int>> trainable_only(const std::vector<std::vector<int>>& ids);

size_t dpsgd_steps_per_epoch(double sample_rate);

}  // namespace crt
