// Test-only oracles, kept independent of the implementation paths they check.
#pragma once

#include <cmath>
#include <vector>

#include "crt/corpus.hpp"
#include "crt/model.hpp"

namespace crt::testing {

// Plain-loop re-implementation of the recurrent forward pass, written against
// the model definition rather than the TinyLM internals.
inline double naive_forward_nll(const TinyLM& model, const std::vector<int>& ids) {
    const auto& cfg = model.config();
    const size_t n = std::min(ids.size(), static_cast<size_t>(cfg.max_seq_len));
    const size_t e = static_cast<size_t>(cfg.embed_dim);
    const size_t h = static_cast<size_t>(cfg.hidden_dim);
    const size_t v = static_cast<size_t>(cfg.vocab_size);

    const Matrix& emb = model.embedding();
    const Matrix& why = model.output();
    const Matrix& wxh = model.input_hidden();
    const Matrix& whh = model.hidden_hidden();
    const std::vector<double>& bh = model.hidden_bias();
    const std::vector<double>& by = model.output_bias();

    std::vector<double> state(h, 0.0);
    double nll = 0.0;
    for (size_t t = 0; t + 1 < n; ++t) {
        std::vector<double> next(h, 0.0);
        for (size_t j = 0; j < h; ++j) {
            double a = bh[j];
            for (size_t i = 0; i < e; ++i) a += wxh(j, i) * emb(static_cast<size_t>(ids[t]), i);
            for (size_t k = 0; k < h; ++k) a += whh(j, k) * state[k];
            next[j] = std::tanh(a);
        }
        state = next;
        std::vector<double> logits(v, 0.0);
        for (size_t w = 0; w < v; ++w) {
            logits[w] = by[w];
            for (size_t j = 0; j < h; ++j) logits[w] += why(w, j) * state[j];
        }
        double max_logit = logits[0];
        for (double l : logits) max_logit = std::max(max_logit, l);
        double z = 0.0;
        for (double l : logits) z += std::exp(l - max_logit);
        nll -= logits[static_cast<size_t>(ids[t + 1])] - max_logit - std::log(z);
    }
    return nll;
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Exact privacy profile of the Gaussian mechanism with sensitivity 1:
//   delta(eps) = Phi(1/(2 sigma) - eps sigma) - e^eps Phi(-1/(2 sigma) - eps sigma)
inline double gaussian_delta(double sigma, double eps) {
    return std_normal_cdf(0.5 / sigma - eps * sigma) -
           std::exp(eps) * std_normal_cdf(-0.5 / sigma - eps * sigma);
}

// Inverts the profile by bisection: the smallest eps with delta(eps) <= delta.
inline double analytic_gaussian_epsilon(double sigma, double delta) {
    double lo = 0.0;
    double hi = 1.0;
    while (gaussian_delta(sigma, hi) > delta) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (gaussian_delta(sigma, mid) > delta) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return hi;
}

// Renyi divergence of the subsampled Gaussian at integer order, by direct
// quadrature of E_{x~N(0,sigma^2)} [ (mu(x)/nu(x))^alpha ] where
// mu = (1-q) N(0,sigma^2) + q N(1,sigma^2) and nu = N(0,sigma^2).
inline double quadrature_subsampled_rdp(double q, double sigma, long alpha) {
    const double lo = -40.0 * sigma;
    const double hi = 40.0 * sigma + 1.0;
    const long steps = 400000;
    const double dx = (hi - lo) / static_cast<double>(steps);
    double integral = 0.0;
    for (long i = 0; i <= steps; ++i) {
        const double x = lo + dx * static_cast<double>(i);
        const double nu = std::exp(-x * x / (2.0 * sigma * sigma)) / (sigma * std::sqrt(2.0 * M_PI));
        const double ratio = (1.0 - q) + q * std::exp((2.0 * x - 1.0) / (2.0 * sigma * sigma));
        const double weight = (i == 0 || i == steps) ? 0.5 : 1.0;
        integral += weight * nu * std::pow(ratio, static_cast<double>(alpha)) * dx;
    }
    return std::log(integral) / (static_cast<double>(alpha) - 1.0);
}

inline AnnotatedCorpus corpus_from_lines(const std::vector<std::string>& lines,
                                         const std::string& doc_id = "doc") {
    AnnotatedCorpus corpus;
    int turn = 0;
    for (const std::string& line : lines) {
        Sentence s;
        s.tokens = tokenize(line);
        s.doc_id = doc_id;
        s.turn_index = turn++;
        corpus.sentences.push_back(std::move(s));
    }
    corpus.vocab = build_vocab(corpus.sentences);
    return corpus;
}

}  // namespace crt::testing
