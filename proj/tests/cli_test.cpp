// End-to-end checks of the command-line stages on a miniature experiment.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CliTest : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / "crt_cli_test";
        fs::remove_all(root_);
        fs::create_directories(root_);

        json cfg;
        cfg["seed"] = 424242;
        cfg["corpus"] = {{"num_dialogues", 250}, {"duplicate_rate", 0.08}, {"test_dialogues", 60}};
        cfg["model"] = {{"embed_dim", 8}, {"hidden_dim", 10}};
        cfg["sgd"] = {{"batch_size", 16}, {"learning_rate", 0.1}};
        cfg["dpsgd"] = {{"sample_rate", 0.05}, {"learning_rate", 0.05}, {"epochs", 1}};
        cfg["budget"] = {{"epsilon", 1.0}, {"delta", 8e-5}};
        cfg["canary"] = {{"template", "My ID is {2 digits}"},
                         {"num_canaries", 3},
                         {"insertions_each", 2},
                         {"randomness_space", 100}};
        cfg["mi"] = {{"per_class", 8}, {"groups_per_class", 5}, {"group_size", 4}};
        cfg["gammas"] = {0.0, 0.5};
        config_path_ = root_ / "config.json";
        std::ofstream out(config_path_);
        out << cfg.dump(2);
    }

    static int run(const std::string& args) {
        const std::string command = std::string(CRT_CLI_PATH) + " " + args + " 2>" +
                                    (root_ / "stderr.txt").string();
        const int status = std::system(command.c_str());
        return WEXITSTATUS(status);
    }

    static std::string run_args(const std::string& subcommand, const fs::path& out_dir,
                                const std::string& extra = "") {
        std::ostringstream args;
        args << "--config " << config_path_ << " --out " << out_dir << " " << subcommand << " " << extra;
        return args.str();
    }

    static size_t count_lines(const fs::path& path) {
        std::ifstream in(path);
        std::string line;
        size_t n = 0;
        while (std::getline(in, line)) ++n;
        return n;
    }

    static fs::path root_;
    static fs::path config_path_;
};

fs::path CliTest::root_;
fs::path CliTest::config_path_;

TEST_F(CliTest, A_GenerateWritesCorpusArtifacts) {
    const fs::path out = root_ / "run";
    ASSERT_EQ(run(run_args("generate", out)), 0);
    EXPECT_TRUE(fs::exists(out / "corpus.jsonl"));
    EXPECT_TRUE(fs::exists(out / "test_corpus.jsonl"));
    const json canaries = json::parse(std::ifstream(out / "canaries.json"));
    EXPECT_EQ(canaries.at("values").size(), 3u);
    EXPECT_TRUE(canaries.contains("config_hash"));
    EXPECT_TRUE(canaries.contains("master_seed"));
}

TEST_F(CliTest, B_RerunsAreByteIdentical) {
    const fs::path a = root_ / "rerun_a";
    const fs::path b = root_ / "rerun_b";
    ASSERT_EQ(run(run_args("generate", a)), 0);
    ASSERT_EQ(run(run_args("generate", b)), 0);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    EXPECT_EQ(slurp(a / "corpus.jsonl"), slurp(b / "corpus.jsonl"));
    EXPECT_EQ(slurp(a / "canaries.json"), slurp(b / "canaries.json"));
}

TEST_F(CliTest, C_PreprocessPerfectPolicyKeepsPublicClean) {
    const fs::path out = root_ / "run";
    ASSERT_EQ(run(run_args("preprocess", out, "--gamma 0")), 0);
    const json report = json::parse(std::ifstream(out / "preprocess_report.json"));
    EXPECT_EQ(report.at("ground_truth_secret_tokens_in_public").get<int>(), 0);
    EXPECT_DOUBLE_EQ(report.at("recall_pi").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(report.at("recall_pi_c").get<double>(), 1.0);
    EXPECT_GT(report.at("public_sentences").get<int>(), 0);
    EXPECT_GT(report.at("private_sentences").get<int>(), 0);
    EXPECT_TRUE(fs::exists(out / "public.jsonl"));
    EXPECT_TRUE(fs::exists(out / "private.jsonl"));
}

TEST_F(CliTest, D_TrainProducesCheckpointAndLog) {
    const fs::path out = root_ / "run";
    ASSERT_EQ(run(run_args("train", out, "--mode crt --gamma 0")), 0);
    EXPECT_TRUE(fs::exists(out / "model.json"));
    EXPECT_TRUE(fs::exists(out / "train_log.csv"));
    const json meta = json::parse(std::ifstream(out / "train_meta.json"));
    EXPECT_EQ(meta.at("mode").get<std::string>(), "crt");
    EXPECT_GT(meta.at("sigma").get<double>(), 0.0);
    EXPECT_EQ(meta.at("privacy_steps").get<int>(), 20);  // 1 epoch, q=0.05
}

TEST_F(CliTest, E_AccountReportContainsAmplifiedEpsilon) {
    const fs::path out = root_ / "run";
    ASSERT_EQ(run(run_args("account", out, "--gamma 0.1")), 0);
    const json report = json::parse(std::ifstream(out / "accountant_report.json"));
    // base budget was calibrated to epsilon = 1.0, so the closed-form
    // amplified value sits at log(1 + 0.1 (e - 1))
    EXPECT_NEAR(report.at("closed_form").at("epsilon_base").get<double>(), 1.0, 2e-4);
    EXPECT_NEAR(report.at("closed_form").at("epsilon_amplified").get<double>(), 0.1585650787, 1e-4);
    EXPECT_TRUE(report.contains("per_secret"));
    EXPECT_TRUE(report.contains("group"));
    EXPECT_TRUE(report.contains("bayesian"));
}

TEST_F(CliTest, F_AttackStagesEmitCsv) {
    const fs::path out = root_ / "run";
    ASSERT_EQ(run(run_args("attack-canary", out)), 0);
    EXPECT_EQ(count_lines(out / "canary_attack.csv"), 2u + 3u);  // comment + header + 3 canaries
    ASSERT_EQ(run(run_args("attack-mi", out)), 0);
    EXPECT_EQ(count_lines(out / "mi_attack.csv"), 2u + 2u);  // comment + header + 2 attacks
}

TEST_F(CliTest, G_SweepEmitsFullMatrix) {
    const fs::path out = root_ / "sweep";
    ASSERT_EQ(run(run_args("sweep", out)), 0);
    std::ifstream in(out / "sweep.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("# config_hash=", 0), 0u);
    std::getline(in, line);
    EXPECT_EQ(line,
              "mode,gamma,sigma,public_count,private_count,privacy_steps,ppl,max_exposure,"
              "mi_accuracy,group_mi_accuracy,recall_pi,recall_pi_c,eps_base,eps_bayes,eps_recal,delta");
    size_t rows = 0;
    size_t fields_ok = 0;
    while (std::getline(in, line)) {
        ++rows;
        fields_ok += static_cast<size_t>(std::count(line.begin(), line.end(), ',') == 15);
    }
    EXPECT_EQ(rows, 8u);  // 4 modes x 2 gammas
    EXPECT_EQ(fields_ok, rows);
}

TEST_F(CliTest, H_ErrorCategories) {
    EXPECT_EQ(run("--config " + (root_ / "nope.json").string() + " generate"), 2);
    const fs::path empty = root_ / "empty";
    fs::create_directories(empty);
    EXPECT_EQ(run(run_args("train", empty, "--mode crt --gamma 0")), 3);
    EXPECT_EQ(run(run_args("attack-canary", empty)), 3);

    // invalid config: both budget and sigma
    json bad;
    bad["budget"] = {{"epsilon", 1.0}, {"delta", 8e-5}};
    bad["sigma"] = 2.0;
    const fs::path bad_path = root_ / "bad_config.json";
    std::ofstream(bad_path) << bad.dump();
    EXPECT_EQ(run("--config " + bad_path.string() + " --out " + (root_ / "x").string() + " generate"), 2);
}

}  // namespace
