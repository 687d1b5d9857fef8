#include "crt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace crt {

size_t TrainLog::total_privacy_steps() const {
    return epochs.empty() ? 0 : epochs.back().cumulative_privacy_steps;
}

void TrainLog::write_csv(std::ostream& out) const {
    out << "epoch,public_loss,private_loss,steps_public,steps_private,cumulative_privacy_steps\n";
    for (const EpochStats& e : epochs) {
        out << e.epoch << ',' << e.public_loss << ',' << e.private_loss << ',' << e.steps_public
            << ',' << e.steps_private << ',' << e.cumulative_privacy_steps << '\n';
    }
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open train log for writing: " + path.string());
    write_csv(out);
}

std::vector<std::vector<int>> trainable_only(const std::vector<std::vector<int>>& ids) {
    std::vector<std::vector<int>> out;
    out.reserve(ids.size());
    for (const auto& s : ids) {
        if (s.size() >= 2) out.push_back(s);
    }
    return out;
}

size_t dpsgd_steps_per_epoch(double sample_rate) {
    if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
        throw std::invalid_argument("sample_rate must be in (0,1]");
    }
    return static_cast<size_t>(std::ceil(1.0 / sample_rate));
}

void sgd_epoch(TinyLM& model, const std::vector<std::vector<int>>& public_ids,
               const SgdConfig& cfg, Rng& rng, TrainLog* log, int epoch) {
    if (public_ids.empty()) return;
    if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");

    std::vector<size_t> order(public_ids.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const size_t end = std::min(begin + cfg.batch_size, order.size());
        GradientBundle batch = model.zero_gradient();
        for (size_t k = begin; k < end; ++k) {
            auto [nll, grad] = model.nll_and_gradient(public_ids[order[k]]);
            batch.accumulate(grad);
        }
        batch.scale(1.0 / static_cast<double>(end - begin));
        model.apply_update(batch, cfg.learning_rate);
        if (log) log->steps.push_back({epoch, StepPhase::public_sgd, end - begin, 0});
    }
}

void dpsgd_step(TinyLM& model, const std::vector<std::vector<int>>& private_ids,
                const DpSgdConfig& cfg, Rng& rng, TrainLog* log, int epoch) {
    if (private_ids.empty()) throw std::invalid_argument("dpsgd_step on empty private set");
    if (!(cfg.sample_rate > 0.0 && cfg.sample_rate <= 1.0)) {
        throw std::invalid_argument("sample_rate must be in (0,1]");
    }
    if (cfg.clip_norm <= 0.0) throw std::invalid_argument("clip_norm must be positive");

    // Poisson sampling: one inclusion coin per example, in order
    std::vector<size_t> batch;
    for (size_t i = 0; i < private_ids.size(); ++i) {
        if (rng.uniform01() < cfg.sample_rate) batch.push_back(i);
    }

    GradientBundle sum = model.zero_gradient();
    for (size_t i : batch) {
        auto [nll, grad] = model.nll_and_gradient(private_ids[i]);
        const double norm = grad.l2_norm();
        if (norm > cfg.clip_norm) grad.scale(cfg.clip_norm / norm);
        sum.accumulate(grad);
    }
    // the mechanism fires whether or not the batch is empty
    sum.add_gaussian_noise(rng, cfg.noise_multiplier * cfg.clip_norm);
    sum.scale(1.0 / (cfg.sample_rate * static_cast<double>(private_ids.size())));
    model.apply_update(sum, cfg.learning_rate);
    if (log) log->steps.push_back({epoch, StepPhase::private_dpsgd, 0, batch.size()});
}

TrainLog crt_train(TinyLM& model,
                   const std::vector<std::vector<int>>& public_ids,
                   const std::vector<std::vector<int>>& private_ids,
                   const SgdConfig& sgd_cfg, const DpSgdConfig& dp_cfg) {
    const std::vector<std::vector<int>> pub = trainable_only(public_ids);
    const std::vector<std::vector<int>> pri = trainable_only(private_ids);
    if (pub.empty() && pri.empty()) throw std::invalid_argument("both training sets are empty");
    if (dp_cfg.epochs <= 0) throw std::invalid_argument("epochs must be positive");

    auto mean_score = [&model](const std::vector<std::vector<int>>& ids) {
        if (ids.empty()) return 0.0;
        double total = 0.0;
        size_t count = 0;
        for (const auto& s : ids) {
            const size_t n = std::min(s.size(), static_cast<size_t>(model.config().max_seq_len));
            total += model.forward_nll(s);
            count += n - 1;
        }
        return total / static_cast<double>(count);
    };

    TrainLog log;
    Rng public_rng(sgd_cfg.rng_seed);
    Rng private_rng(dp_cfg.rng_seed);
    size_t cumulative_privacy = 0;

    for (int epoch = 1; epoch <= dp_cfg.epochs; ++epoch) {
        const size_t steps_before = log.steps.size();
        sgd_epoch(model, pub, sgd_cfg, public_rng, &log, epoch);
        const size_t public_steps = log.steps.size() - steps_before;

        size_t private_steps = 0;
        if (!pri.empty()) {
            private_steps = dpsgd_steps_per_epoch(dp_cfg.sample_rate);
            for (size_t s = 0; s < private_steps; ++s) {
                dpsgd_step(model, pri, dp_cfg, private_rng, &log, epoch);
            }
        }
        cumulative_privacy += private_steps;

        EpochStats stats;
        stats.epoch = epoch;
        stats.public_loss = mean_score(pub);
        stats.private_loss = mean_score(pri);
        stats.steps_public = public_steps;
        stats.steps_private = private_steps;
        stats.cumulative_privacy_steps = cumulative_privacy;
        log.epochs.push_back(stats);
    }
    return log;
}

}  // namespace crt
