#include "crt/trainer.hpp"

#include <cmath>
#include <sstream>

#include "gtest/gtest.h"
#include "test_oracles.hpp"

namespace crt {
namespace {

TinyLM tiny_model(int vocab = 14, uint64_t seed = 5) {
    TinyLMConfig cfg;
    cfg.vocab_size = vocab;
    cfg.embed_dim = 6;
    cfg.hidden_dim = 8;
    cfg.init_seed = seed;
    return TinyLM(cfg);
}

std::vector<std::vector<int>> tiny_dataset(int vocab, size_t count, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> data;
    for (size_t i = 0; i < count; ++i) {
        std::vector<int> ids(3 + rng.below(6));
        for (int& id : ids) id = static_cast<int>(rng.below(static_cast<uint64_t>(vocab)));
        data.push_back(std::move(ids));
    }
    return data;
}

TEST(SgdEpoch, ZeroLearningRateLeavesModelUnchanged) {
    TinyLM model = tiny_model();
    const auto before = model.output().data;
    SgdConfig cfg;
    cfg.learning_rate = 0.0;
    Rng rng(cfg.rng_seed);
    sgd_epoch(model, tiny_dataset(14, 16, 2), cfg, rng);
    EXPECT_EQ(model.output().data, before);
}

TEST(SgdEpoch, SingleSentenceStepEqualsGradientUpdate) {
    TinyLM trained = tiny_model();
    TinyLM reference = tiny_model();
    const std::vector<std::vector<int>> data = {{1, 2, 3, 4}};

    SgdConfig cfg;
    cfg.batch_size = 1;
    cfg.learning_rate = 0.25;
    Rng rng(cfg.rng_seed);
    sgd_epoch(trained, data, cfg, rng);

    auto [nll, grad] = reference.nll_and_gradient(data[0]);
    reference.apply_update(grad, 0.25);
    EXPECT_EQ(trained.output().data, reference.output().data);
    EXPECT_EQ(trained.embedding().data, reference.embedding().data);
}

TEST(SgdEpoch, LossDecreasesOnFixedSet) {
    TinyLM model = tiny_model();
    const auto data = tiny_dataset(14, 12, 3);
    auto loss = [&]() {
        double total = 0.0;
        for (const auto& ids : data) total += model.forward_nll(ids);
        return total;
    };
    const double initial = loss();
    SgdConfig cfg;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.1;
    Rng rng(9);
    for (int epoch = 0; epoch < 10; ++epoch) sgd_epoch(model, data, cfg, rng);
    EXPECT_LT(loss(), initial);
}

TEST(DpsgdStep, ClippingBoundsEveryExampleGradient) {
    TinyLM model = tiny_model();
    const auto data = tiny_dataset(14, 20, 4);
    const double clip = 0.37;
    for (const auto& ids : data) {
        auto [nll, grad] = model.nll_and_gradient(ids);
        const double norm = grad.l2_norm();
        if (norm > clip) grad.scale(clip / norm);
        EXPECT_LE(grad.l2_norm(), clip + 1e-9);
    }
}

TEST(DpsgdStep, LargeGradientClippedToExactlyClipNorm) {
    TinyLM model = tiny_model();
    auto [nll, grad] = model.nll_and_gradient(std::vector<int>{1, 2, 3, 4, 5});
    grad.scale(10.0 / grad.l2_norm());  // force norm 10
    const double clip = 1.0;
    grad.scale(clip / grad.l2_norm());
    EXPECT_NEAR(grad.l2_norm(), 1.0, 1e-12);
}

TEST(DpsgdStep, NoiselessFullSampleEqualsClippedMeanStep) {
    TinyLM trained = tiny_model();
    TinyLM reference = tiny_model();
    const auto data = tiny_dataset(14, 6, 8);

    DpSgdConfig cfg;
    cfg.clip_norm = 0.5;
    cfg.noise_multiplier = 0.0;
    cfg.sample_rate = 1.0;
    cfg.learning_rate = 0.2;
    Rng rng(cfg.rng_seed);
    dpsgd_step(trained, data, cfg, rng);

    GradientBundle sum = reference.zero_gradient();
    for (const auto& ids : data) {
        auto [nll, grad] = reference.nll_and_gradient(ids);
        const double norm = grad.l2_norm();
        if (norm > cfg.clip_norm) grad.scale(cfg.clip_norm / norm);
        sum.accumulate(grad);
    }
    sum.scale(1.0 / static_cast<double>(data.size()));
    reference.apply_update(sum, cfg.learning_rate);
    EXPECT_EQ(trained.output().data, reference.output().data);
}

TEST(DpsgdStep, EmptyPoissonBatchStillAStep) {
    TinyLM model = tiny_model();
    const auto before = model.output().data;
    const auto data = tiny_dataset(14, 5, 12);
    DpSgdConfig cfg;
    cfg.sample_rate = 1e-9;  // batch will be empty
    cfg.noise_multiplier = 1.0;
    cfg.learning_rate = 0.1;
    TrainLog log;
    Rng rng(3);
    dpsgd_step(model, data, cfg, rng, &log, 1);
    ASSERT_EQ(log.steps.size(), 1u);
    EXPECT_EQ(log.steps[0].examples_from_private, 0u);
    EXPECT_NE(model.output().data, before);  // noise still applied
}

TEST(CrtTrain, EpochScheduleAndAccounting) {
    TinyLM model = tiny_model();
    SgdConfig sgd;
    sgd.batch_size = 8;
    sgd.learning_rate = 0.05;
    DpSgdConfig dp;
    dp.sample_rate = 0.01;
    dp.epochs = 3;
    dp.noise_multiplier = 1.0;
    dp.learning_rate = 0.05;
    const TrainLog log =
        crt_train(model, tiny_dataset(14, 30, 1), tiny_dataset(14, 25, 2), sgd, dp);
    ASSERT_EQ(log.epochs.size(), 3u);
    // q = 0.01 gives exactly 100 privacy steps per epoch
    for (const EpochStats& e : log.epochs) EXPECT_EQ(e.steps_private, 100u);
    EXPECT_EQ(log.total_privacy_steps(), 300u);
    EXPECT_EQ(log.epochs[1].cumulative_privacy_steps, 200u);
}

TEST(CrtTrain, EmptyPrivateSetMeansPureSgd) {
    TinyLM model = tiny_model();
    SgdConfig sgd;
    DpSgdConfig dp;
    dp.epochs = 2;
    const TrainLog log = crt_train(model, tiny_dataset(14, 10, 6), {}, sgd, dp);
    EXPECT_EQ(log.total_privacy_steps(), 0u);
    for (const StepRecord& s : log.steps) EXPECT_EQ(s.phase, StepPhase::public_sgd);
}

TEST(CrtTrain, EmptyPublicSetMeansVanillaDpsgd) {
    TinyLM model = tiny_model();
    SgdConfig sgd;
    DpSgdConfig dp;
    dp.epochs = 2;
    dp.sample_rate = 0.25;
    dp.noise_multiplier = 0.7;
    const TrainLog log = crt_train(model, {}, tiny_dataset(14, 10, 6), sgd, dp);
    EXPECT_EQ(log.total_privacy_steps(), 8u);  // 2 epochs x ceil(1/0.25)
    for (const StepRecord& s : log.steps) EXPECT_EQ(s.phase, StepPhase::private_dpsgd);
    EXPECT_THROW(crt_train(model, {}, {}, sgd, dp), std::invalid_argument);
}

TEST(CrtTrain, MinibatchPurityFromLog) {
    TinyLM model = tiny_model();
    SgdConfig sgd;
    sgd.batch_size = 4;
    DpSgdConfig dp;
    dp.epochs = 2;
    dp.sample_rate = 0.2;
    dp.noise_multiplier = 0.5;
    const TrainLog log =
        crt_train(model, tiny_dataset(14, 9, 3), tiny_dataset(14, 7, 4), sgd, dp);
    for (const StepRecord& s : log.steps) {
        EXPECT_FALSE(s.examples_from_public > 0 && s.examples_from_private > 0);
        if (s.phase == StepPhase::public_sgd) EXPECT_EQ(s.examples_from_private, 0u);
        if (s.phase == StepPhase::private_dpsgd) EXPECT_EQ(s.examples_from_public, 0u);
    }
}

TEST(CrtTrain, SeededDeterminism) {
    SgdConfig sgd;
    sgd.learning_rate = 0.1;
    DpSgdConfig dp;
    dp.epochs = 2;
    dp.sample_rate = 0.3;
    dp.noise_multiplier = 0.9;
    const auto pub = tiny_dataset(14, 12, 10);
    const auto pri = tiny_dataset(14, 9, 11);

    TinyLM a = tiny_model(14, 99);
    TinyLM b = tiny_model(14, 99);
    crt_train(a, pub, pri, sgd, dp);
    crt_train(b, pub, pri, sgd, dp);
    EXPECT_EQ(a.output().data, b.output().data);
    EXPECT_EQ(a.embedding().data, b.embedding().data);
}

TEST(CrtTrain, ShortSentencesFilteredOut) {
    TinyLM model = tiny_model();
    std::vector<std::vector<int>> pub = {{1}, {2, 3, 4}};
    const auto filtered = trainable_only(pub);
    ASSERT_EQ(filtered.size(), 1u);
    SgdConfig sgd;
    DpSgdConfig dp;
    dp.epochs = 1;
    EXPECT_NO_THROW(crt_train(model, pub, {}, sgd, dp));
}

TEST(TrainLog, CsvShape) {
    TinyLM model = tiny_model();
    SgdConfig sgd;
    DpSgdConfig dp;
    dp.epochs = 2;
    dp.sample_rate = 0.5;
    const TrainLog log = crt_train(model, tiny_dataset(14, 6, 3), tiny_dataset(14, 4, 9), sgd, dp);
    std::stringstream out;
    log.write_csv(out);
    std::string line;
    std::getline(out, line);
    EXPECT_EQ(line, "epoch,public_loss,private_loss,steps_public,steps_private,cumulative_privacy_steps");
    size_t rows = 0;
    while (std::getline(out, line)) ++rows;
    EXPECT_EQ(rows, 2u);
}

}  // namespace
}  // namespace crt
