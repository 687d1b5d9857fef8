#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crt/corpus.hpp"
#include "crt/model.hpp"

namespace crt {

// Canary sentences follow a template with one numeric slot, e.g.
// "My ID is {6 digits}". The slot instantiates as width separate digit
// tokens so the candidate space stays enumerable over a fixed vocabulary.
struct CanarySpec {
    std::string template_text = "My ID is {6 digits}";
    int num_canaries = 10;
    int insertions_each = 20;
    long randomness_space = 1000000;  // |R|, must equal 10^width
    uint64_t rng_seed = 7;

    int slot_width() const;  // throws if |R| is not 10^width
};

struct CanaryTemplate {
    std::vector<Token> prefix;
    std::vector<Token> suffix;
    int width = 0;
};

CanaryTemplate parse_canary_template(const CanarySpec& spec);

struct CanaryInsertion {
    AnnotatedCorpus corpus;
    std::vector<std::string> values;  // zero-padded digit strings
};

// Samples distinct canary values uniformly, instantiates the template, and
// inserts each sentence insertions_each times at seeded random positions.
// Every insertion is recorded as a ground-truth span of category canary.
CanaryInsertion insert_canaries(const AnnotatedCorpus& corpus, const CanarySpec& spec);

struct ExposureEntry {
    std::string value;
    long rank = 0;        // 1 = lowest NLL among all |R| candidates
    double exposure = 0.0;
};

struct ExposureResult {
    std::vector<ExposureEntry> per_canary;
    double max_exposure = 0.0;
};

double exposure_from_rank(long rank, long space_size);  // log2|R| - log2 rank

// Exhaustively scores all |R| candidate instantiations. Candidates share the
// template prefix, so recurrence states are evaluated once per distinct
// digit prefix rather than once per candidate. Ties are broken
// pessimistically: the true canary takes the worst rank among equal scores.
ExposureResult canary_exposure(const TinyLM& model, const Vocab& vocab,
                               const std::vector<std::string>& values, const CanarySpec& spec);

struct MiDataset {
    std::vector<std::vector<int>> members;
    std::vector<std::vector<int>> nonmembers;
    size_t group_size = 0;  // 0 = individual attack
};

// Balanced accuracy of the best rule "member iff score <= threshold" over
// all thresholds (including the blind one). Never below 0.5.
double threshold_attack_accuracy(const std::vector<double>& member_scores,
                                 const std::vector<double>& nonmember_scores);

// Threshold attack on per-token NLL: the classifier marks sequences at or
// below a threshold as members, with the threshold chosen to maximize
// balanced accuracy over the dataset.
double mi_attack(const TinyLM& model, const MiDataset& dataset);

// Same classifier over groups, scored by the sum of per-token NLLs inside
// each group. Requires both sides to split evenly into groups.
double group_mi_attack(const TinyLM& model, const MiDataset& dataset);

// Members are secret-bearing sentences of the given category drawn from the
// training corpus; nonmembers come from a same-format fresh corpus and are
// filtered against every training sentence. Both sides are distinct and
// balanced.
MiDataset build_mi_dataset(const AnnotatedCorpus& training, const AnnotatedCorpus& fresh,
                           const Vocab& model_vocab, SecretCategory category,
                           size_t per_class, uint64_t seed);

// Groups sample sequences from the same pools with replacement.
MiDataset build_group_mi_dataset(const AnnotatedCorpus& training, const AnnotatedCorpus& fresh,
                                 const Vocab& model_vocab, SecretCategory category,
                                 size_t groups_per_class, size_t group_size, uint64_t seed);

}  // namespace crt
