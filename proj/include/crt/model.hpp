#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crt/corpus.hpp"

namespace crt {

// Dense row-major matrix of doubles. Deliberately minimal: the model's
// forward/backward passes are plain loops so they stay auditable against
// finite differences.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(size_t r, size_t c) { return data[r * cols + c]; }
    double operator()(size_t r, size_t c) const { return data[r * cols + c]; }
    double* row(size_t r) { return data.data() + r * cols; }
    const double* row(size_t r) const { return data.data() + r * cols; }
};

struct TinyLMConfig {
    int vocab_size = 0;
    int embed_dim = 64;
    int hidden_dim = 128;
    int max_seq_len = 64;  // BPTT truncation bound
    uint64_t init_seed = 0x7c0ffee;
};

class Rng;

struct GradientBundle {
    Matrix embedding;       // vocab x embed
    Matrix input_hidden;    // hidden x embed
    Matrix hidden_hidden;   // hidden x hidden
    std::vector<double> hidden_bias;
    Matrix output;          // vocab x hidden
    std::vector<double> output_bias;

    double l2_norm() const;
    void scale(double factor);
    void accumulate(const GradientBundle& other);
    // iid N(0, stddev^2) on every coordinate, tensors in declaration order
    void add_gaussian_noise(Rng& rng, double stddev);
};

// Single-layer tanh recurrent next-token model:
//   h_t = tanh(W_xh e(w_{t-1}) + W_hh h_{t-1} + b_h),  h_0 = 0
//   p_t = softmax(W_hy h_t + b_y)
// Loss is the negative log-likelihood of tokens 1..n-1; the first token is
// context only. All arithmetic is double precision.
class TinyLM {
  public:
    explicit TinyLM(const TinyLMConfig& config);  // uniform(-0.1, 0.1) init, seeded

    const TinyLMConfig& config() const { return config_; }
    int vocab_size() const { return config_.vocab_size; }

    // -sum_i log p(w_i | w_<i). Requires ids.size() >= 2 and ids < vocab_size.
    double forward_nll(std::span<const int> ids) const;

    // forward_nll divided by the number of predicted tokens
    double score(std::span<const int> ids) const;

    // Exact gradient of forward_nll via backpropagation through time.
    std::pair<double, GradientBundle> nll_and_gradient(std::span<const int> ids) const;

    GradientBundle zero_gradient() const;

    // theta <- theta - lr * grad
    void apply_update(const GradientBundle& grad, double learning_rate);

    // Incremental interface used by the canary enumeration: one recurrence
    // step consuming token_id, producing the next state and the full
    // log-probability vector for the following position.
    std::vector<double> initial_state() const;
    void step(int token_id, const std::vector<double>& h_in,
              std::vector<double>& h_out, std::vector<double>& log_probs) const;

    void save(const std::filesystem::path& path, const Vocab& vocab) const;
    static std::pair<TinyLM, Vocab> load(const std::filesystem::path& path);

    // parameter access (trainer + tests)
    Matrix& embedding() { return embedding_; }
    Matrix& input_hidden() { return input_hidden_; }
    Matrix& hidden_hidden() { return hidden_hidden_; }
    std::vector<double>& hidden_bias() { return hidden_bias_; }
    Matrix& output() { return output_; }
    std::vector<double>& output_bias() { return output_bias_; }
    const Matrix& embedding() const { return embedding_; }
    const Matrix& input_hidden() const { return input_hidden_; }
    const Matrix& hidden_hidden() const { return hidden_hidden_; }
    const std::vector<double>& hidden_bias() const { return hidden_bias_; }
    const Matrix& output() const { return output_; }
    const std::vector<double>& output_bias() const { return output_bias_; }

  private:
    void check_ids(std::span<const int> ids) const;
    size_t effective_len(std::span<const int> ids) const;

    TinyLMConfig config_;
    Matrix embedding_;      // vocab x embed
    Matrix input_hidden_;   // hidden x embed
    Matrix hidden_hidden_;  // hidden x hidden
    std::vector<double> hidden_bias_;
    Matrix output_;         // vocab x hidden
    std::vector<double> output_bias_;
};

// exp(total nll / total predicted tokens) over sentences with >= 2 tokens.
double perplexity(const TinyLM& model, const std::vector<std::vector<int>>& corpus_ids);

std::vector<int> encode_sentence(const Sentence& sentence, const Vocab& vocab);
std::vector<std::vector<int>> encode_sentences(const std::vector<Sentence>& sentences, const Vocab& vocab);

}  // namespace crt
