#include "crt/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "crt/rng.hpp"
#include "json.hpp"

namespace crt {

namespace {

double dot(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void fill_uniform(std::vector<double>& v, Rng& rng) {
    for (double& x : v) x = rng.uniform01() * 0.2 - 0.1;
}

}  // namespace

double GradientBundle::l2_norm() const {
    double acc = 0.0;
    for (const auto* tensor : {&embedding.data, &input_hidden.data, &hidden_hidden.data,
                               &hidden_bias, &output.data, &output_bias}) {
        for (double x : *tensor) acc += x * x;
    }
    return std::sqrt(acc);
}

void GradientBundle::scale(double factor) {
    for (auto* tensor : {&embedding.data, &input_hidden.data, &hidden_hidden.data,
                         &hidden_bias, &output.data, &output_bias}) {
        for (double& x : *tensor) x *= factor;
    }
}

void GradientBundle::accumulate(const GradientBundle& other) {
    auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    add(embedding.data, other.embedding.data);
    add(input_hidden.data, other.input_hidden.data);
    add(hidden_hidden.data, other.hidden_hidden.data);
    add(hidden_bias, other.hidden_bias);
    add(output.data, other.output.data);
    add(output_bias, other.output_bias);
}

void GradientBundle::add_gaussian_noise(Rng& rng, double stddev) {
    for (auto* tensor : {&embedding.data, &input_hidden.data, &hidden_hidden.data,
                         &hidden_bias, &output.data, &output_bias}) {
        for (double& x : *tensor) x += stddev * rng.gaussian();
    }
}

TinyLM::TinyLM(const TinyLMConfig& config) : config_(config) {
    if (config_.vocab_size <= 0 || config_.embed_dim <= 0 || config_.hidden_dim <= 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (config_.max_seq_len < 2) throw std::invalid_argument("max_seq_len must be >= 2");
    const size_t v = static_cast<size_t>(config_.vocab_size);
    const size_t e = static_cast<size_t>(config_.embed_dim);
    const size_t h = static_cast<size_t>(config_.hidden_dim);
    embedding_ = Matrix(v, e);
    input_hidden_ = Matrix(h, e);
    hidden_hidden_ = Matrix(h, h);
    hidden_bias_.assign(h, 0.0);
    output_ = Matrix(v, h);
    output_bias_.assign(v, 0.0);

    Rng rng(config_.init_seed);
    fill_uniform(embedding_.data, rng);
    fill_uniform(input_hidden_.data, rng);
    fill_uniform(hidden_hidden_.data, rng);
    fill_uniform(hidden_bias_, rng);
    fill_uniform(output_.data, rng);
    fill_uniform(output_bias_, rng);
}

void TinyLM::check_ids(std::span<const int> ids) const {
    if (ids.size() < 2) throw std::invalid_argument("sentence too short to score (need >= 2 tokens)");
    for (int id : ids) {
        if (id < 0 || id >= config_.vocab_size) {
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocab");
        }
    }
}

size_t TinyLM::effective_len(std::span<const int> ids) const {
    return std::min(ids.size(), static_cast<size_t>(config_.max_seq_len));
}

std::vector<double> TinyLM::initial_state() const {
    return std::vector<double>(static_cast<size_t>(config_.hidden_dim), 0.0);
}

void TinyLM::step(int token_id, const std::vector<double>& h_in,
                  std::vector<double>& h_out, std::vector<double>& log_probs) const {
    const size_t e = static_cast<size_t>(config_.embed_dim);
    const size_t h = static_cast<size_t>(config_.hidden_dim);
    const size_t v = static_cast<size_t>(config_.vocab_size);
    h_out.resize(h);
    log_probs.resize(v);

    const double* x = embedding_.row(static_cast<size_t>(token_id));
    for (size_t j = 0; j < h; ++j) {
        double a = hidden_bias_[j];
        a += dot(input_hidden_.row(j), x, e);
        a += dot(hidden_hidden_.row(j), h_in.data(), h);
        h_out[j] = std::tanh(a);
    }

    double max_logit = -std::numeric_limits<double>::infinity();
    for (size_t w = 0; w < v; ++w) {
        log_probs[w] = output_bias_[w] + dot(output_.row(w), h_out.data(), h);
        max_logit = std::max(max_logit, log_probs[w]);
    }
    double sum = 0.0;
    for (size_t w = 0; w < v; ++w) sum += std::exp(log_probs[w] - max_logit);
    const double lse = max_logit + std::log(sum);
    for (size_t w = 0; w < v; ++w) log_probs[w] -= lse;
}

double TinyLM::forward_nll(std::span<const int> ids) const {
    check_ids(ids);
    const size_t n = effective_len(ids);
    std::vector<double> h = initial_state();
    std::vector<double> h_next;
    std::vector<double> log_probs;
    double nll = 0.0;
    for (size_t t = 0; t + 1 < n; ++t) {
        step(ids[t], h, h_next, log_probs);
        nll -= log_probs[static_cast<size_t>(ids[t + 1])];
        std::swap(h, h_next);
    }
    return nll;
}

double TinyLM::score(std::span<const int> ids) const {
    const size_t n = effective_len(ids);
    return forward_nll(ids) / static_cast<double>(n - 1);
}

GradientBundle TinyLM::zero_gradient() const {
    GradientBundle g;
    g.embedding = Matrix(embedding_.rows, embedding_.cols);
    g.input_hidden = Matrix(input_hidden_.rows, input_hidden_.cols);
    g.hidden_hidden = Matrix(hidden_hidden_.rows, hidden_hidden_.cols);
    g.hidden_bias.assign(hidden_bias_.size(), 0.0);
    g.output = Matrix(output_.rows, output_.cols);
    g.output_bias.assign(output_bias_.size(), 0.0);
    return g;
}

std::pair<double, GradientBundle> TinyLM::nll_and_gradient(std::span<const int> ids) const {
    check_ids(ids);
    const size_t n = effective_len(ids);
    const size_t steps = n - 1;
    const size_t e = static_cast<size_t>(config_.embed_dim);
    const size_t h = static_cast<size_t>(config_.hidden_dim);
    const size_t v = static_cast<size_t>(config_.vocab_size);

    // forward, keeping states and per-position distributions for the backward pass
    std::vector<std::vector<double>> states(steps);  // states[t]: after consuming ids[t]
    std::vector<std::vector<double>> probs(steps);
    std::vector<double> h_prev = initial_state();
    double nll = 0.0;
    for (size_t t = 0; t < steps; ++t) {
        states[t].resize(h);
        const double* x = embedding_.row(static_cast<size_t>(ids[t]));
        for (size_t j = 0; j < h; ++j) {
            double a = hidden_bias_[j];
            a += dot(input_hidden_.row(j), x, e);
            a += dot(hidden_hidden_.row(j), h_prev.data(), h);
            states[t][j] = std::tanh(a);
        }
        probs[t].resize(v);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (size_t w = 0; w < v; ++w) {
            probs[t][w] = output_bias_[w] + dot(output_.row(w), states[t].data(), h);
            max_logit = std::max(max_logit, probs[t][w]);
        }
        double sum = 0.0;
        for (size_t w = 0; w < v; ++w) {
            probs[t][w] = std::exp(probs[t][w] - max_logit);
            sum += probs[t][w];
        }
        const double inv = 1.0 / sum;
        for (size_t w = 0; w < v; ++w) probs[t][w] *= inv;
        nll -= std::log(probs[t][static_cast<size_t>(ids[t + 1])]);
        h_prev = states[t];
    }

    // backward through time
    GradientBundle g = zero_gradient();
    std::vector<double> dh_next(h, 0.0);
    std::vector<double> da(h, 0.0);
    const std::vector<double> zeros(h, 0.0);
    for (size_t t = steps; t-- > 0;) {
        const std::vector<double>& state = states[t];
        const std::vector<double>& prev = t == 0 ? zeros : states[t - 1];

        // dL/dlogits = p - onehot(target)
        std::vector<double> dlogits = probs[t];
        dlogits[static_cast<size_t>(ids[t + 1])] -= 1.0;

        std::vector<double> dh = dh_next;
        for (size_t w = 0; w < v; ++w) {
            const double dw = dlogits[w];
            g.output_bias[w] += dw;
            double* grow = g.output.row(w);
            const double* orow = output_.row(w);
            for (size_t j = 0; j < h; ++j) {
                grow[j] += dw * state[j];
                dh[j] += orow[j] * dw;
            }
        }

        for (size_t j = 0; j < h; ++j) {
            da[j] = dh[j] * (1.0 - state[j] * state[j]);
            g.hidden_bias[j] += da[j];
        }

        const double* x = embedding_.row(static_cast<size_t>(ids[t]));
        double* dx = g.embedding.row(static_cast<size_t>(ids[t]));
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        for (size_t j = 0; j < h; ++j) {
            const double dj = da[j];
            double* gih = g.input_hidden.row(j);
            const double* ih = input_hidden_.row(j);
            for (size_t i = 0; i < e; ++i) {
                gih[i] += dj * x[i];
                dx[i] += ih[i] * dj;
            }
            double* ghh = g.hidden_hidden.row(j);
            const double* hh = hidden_hidden_.row(j);
            for (size_t k = 0; k < h; ++k) {
                ghh[k] += dj * prev[k];
                dh_next[k] += hh[k] * dj;
            }
        }
    }
    return {nll, std::move(g)};
}

void TinyLM::apply_update(const GradientBundle& grad, double learning_rate) {
    auto sub = [learning_rate](std::vector<double>& dst, const std::vector<double>& src) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] -= learning_rate * src[i];
    };
    sub(embedding_.data, grad.embedding.data);
    sub(input_hidden_.data, grad.input_hidden.data);
    sub(hidden_hidden_.data, grad.hidden_hidden.data);
    sub(hidden_bias_, grad.hidden_bias);
    sub(output_.data, grad.output.data);
    sub(output_bias_, grad.output_bias);
}

void TinyLM::save(const std::filesystem::path& path, const Vocab& vocab) const {
    nlohmann::json doc;
    doc["format"] = "tinylm-v1";
    doc["config"] = {{"vocab_size", config_.vocab_size},
                     {"embed_dim", config_.embed_dim},
                     {"hidden_dim", config_.hidden_dim},
                     {"max_seq_len", config_.max_seq_len},
                     {"init_seed", config_.init_seed}};
    doc["vocab"] = vocab.id_to_text;
    doc["tensors"] = {{"embedding", embedding_.data},
                      {"input_hidden", input_hidden_.data},
                      {"hidden_hidden", hidden_hidden_.data},
                      {"hidden_bias", hidden_bias_},
                      {"output", output_.data},
                      {"output_bias", output_bias_}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    out << doc.dump() << '\n';
}

std::pair<TinyLM, Vocab> TinyLM::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in);
    if (doc.value("format", "") != "tinylm-v1") {
        throw std::runtime_error("unsupported checkpoint format in " + path.string());
    }
    TinyLMConfig config;
    config.vocab_size = doc.at("config").at("vocab_size").get<int>();
    config.embed_dim = doc.at("config").at("embed_dim").get<int>();
    config.hidden_dim = doc.at("config").at("hidden_dim").get<int>();
    config.max_seq_len = doc.at("config").at("max_seq_len").get<int>();
    config.init_seed = doc.at("config").at("init_seed").get<uint64_t>();

    TinyLM model(config);
    auto load_tensor = [&doc](const char* name, std::vector<double>& dst) {
        const auto& values = doc.at("tensors").at(name);
        if (values.size() != dst.size()) throw std::runtime_error("tensor size mismatch: " + std::string(name));
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = values[i].get<double>();
    };
    load_tensor("embedding", model.embedding_.data);
    load_tensor("input_hidden", model.input_hidden_.data);
    load_tensor("hidden_hidden", model.hidden_hidden_.data);
    load_tensor("hidden_bias", model.hidden_bias_);
    load_tensor("output", model.output_.data);
    load_tensor("output_bias", model.output_bias_);

    Vocab vocab;
    for (const auto& text : doc.at("vocab")) vocab.id_to_text.push_back(text.get<std::string>());
    for (int i = 0; i < static_cast<int>(vocab.id_to_text.size()); ++i) {
        vocab.text_to_id[vocab.id_to_text[i]] = i;
    }
    if (vocab.size() != config.vocab_size) throw std::runtime_error("vocab size mismatch in checkpoint");
    return {std::move(model), std::move(vocab)};
}

double perplexity(const TinyLM& model, const std::vector<std::vector<int>>& corpus_ids) {
    double total_nll = 0.0;
    size_t predicted = 0;
    for (const auto& ids : corpus_ids) {
        if (ids.size() < 2) continue;
        total_nll += model.forward_nll(ids);
        predicted += std::min(ids.size(), static_cast<size_t>(model.config().max_seq_len)) - 1;
    }
    if (predicted == 0) throw std::invalid_argument("no scorable sentences in corpus");
    return std::exp(total_nll / static_cast<double>(predicted));
}

std::vector<int> encode_sentence(const Sentence& sentence, const Vocab& vocab) {
    std::vector<int> ids;
    ids.reserve(sentence.tokens.size());
    for (const Token& t : sentence.tokens) ids.push_back(vocab.id_of(t.text));
    return ids;
}

std::vector<std::vector<int>> encode_sentences(const std::vector<Sentence>& sentences, const Vocab& vocab) {
    std::vector<std::vector<int>> out;
    out.reserve(sentences.size());
    for (const Sentence& s : sentences) out.push_back(encode_sentence(s, vocab));
    return out;
}

}  // namespace crt
