#include "crt/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "crt/rng.hpp"

namespace crt {

namespace {

long pow10_checked(int width) {
    long value = 1;
    for (int i = 0; i < width; ++i) value *= 10;
    return value;
}

std::string zero_padded(long value, int width) {
    std::string digits = std::to_string(value);
    if (static_cast<int>(digits.size()) > width) throw std::invalid_argument("canary value too wide");
    return std::string(width - digits.size(), '0') + digits;
}

}  // namespace

int CanarySpec::slot_width() const {
    if (randomness_space < 10) throw std::invalid_argument("randomness space too small");
    long space = randomness_space;
    int width = 0;
    while (space > 1) {
        if (space % 10 != 0) throw std::invalid_argument("randomness space must be a power of ten");
        space /= 10;
        ++width;
    }
    if (width > 12) throw std::invalid_argument("slot width too large");
    return width;
}

CanaryTemplate parse_canary_template(const CanarySpec& spec) {
    const int width = spec.slot_width();
    const std::string marker = "{" + std::to_string(width) + " digits}";
    const size_t pos = spec.template_text.find(marker);
    if (pos == std::string::npos) {
        throw std::invalid_argument("template lacks the slot " + marker + ": " + spec.template_text);
    }
    CanaryTemplate out;
    out.width = width;
    out.prefix = tokenize(spec.template_text.substr(0, pos));
    out.suffix = tokenize(spec.template_text.substr(pos + marker.size()));
    if (out.prefix.empty()) throw std::invalid_argument("canary template needs a non-empty prefix");
    return out;
}

CanaryInsertion insert_canaries(const AnnotatedCorpus& corpus, const CanarySpec& spec) {
    const CanaryTemplate tmpl = parse_canary_template(spec);
    if (spec.num_canaries <= 0 || spec.insertions_each <= 0) {
        throw std::invalid_argument("canary counts must be positive");
    }
    if (static_cast<long>(spec.num_canaries) > spec.randomness_space) {
        throw std::invalid_argument("more canaries than distinct values available");
    }

    Rng rng(spec.rng_seed);
    std::set<long> chosen;
    std::vector<long> values;
    while (static_cast<int>(values.size()) < spec.num_canaries) {
        const long v = static_cast<long>(rng.below(static_cast<uint64_t>(spec.randomness_space)));
        if (chosen.insert(v).second) values.push_back(v);
    }

    CanaryInsertion out;
    out.corpus.sentences = corpus.sentences;
    out.corpus.secrets = corpus.secrets;

    for (size_t c = 0; c < values.size(); ++c) {
        const std::string digits = zero_padded(values[c], tmpl.width);
        out.values.push_back(digits);

        Sentence canary;
        canary.tokens = tmpl.prefix;
        const size_t slot_start = canary.tokens.size();
        std::string secret_id;
        for (char d : digits) {
            if (!secret_id.empty()) secret_id += ' ';
            secret_id += d;
            canary.tokens.push_back(Token::word(std::string(1, d)));
        }
        const size_t slot_end = canary.tokens.size();
        for (const Token& t : tmpl.suffix) canary.tokens.push_back(t);

        for (int copy = 0; copy < spec.insertions_each; ++copy) {
            Sentence instance = canary;
            instance.doc_id = "canary-" + digits;
            instance.turn_index = copy;
            const size_t position = static_cast<size_t>(rng.below(out.corpus.sentences.size() + 1));
            out.corpus.sentences.insert(out.corpus.sentences.begin() + position, std::move(instance));

            SecretSpan span;
            span.doc_id = "canary-" + digits;
            span.turn_index = copy;
            span.start = slot_start;
            span.end = slot_end;
            span.secret_id = secret_id;
            span.category = SecretCategory::canary;
            out.corpus.secrets.push_back(std::move(span));
        }
    }

    // the enumeration space needs every digit, not just the sampled ones
    std::vector<std::string> digits;
    for (char d = '0'; d <= '9'; ++d) digits.emplace_back(1, d);
    out.corpus.vocab = build_vocab(out.corpus.sentences, digits);
    return out;
}

double exposure_from_rank(long rank, long space_size) {
    if (rank < 1 || rank > space_size) throw std::invalid_argument("rank out of range");
    return std::log2(static_cast<double>(space_size)) - std::log2(static_cast<double>(rank));
}

namespace {

// Exhaustive candidate scoring over the digit tree. States are shared across
// candidates with a common digit prefix, so the recurrence runs
// 1 + 10 + ... + 10^(width-1) times instead of width * 10^width.
class CandidateScorer {
  public:
    CandidateScorer(const TinyLM& model, const Vocab& vocab, const CanaryTemplate& tmpl)
        : model_(model), tmpl_(tmpl) {
        for (char d = '0'; d <= '9'; ++d) digit_ids_.push_back(vocab.id_of(std::string(1, d)));
        for (const Token& t : tmpl.prefix) prefix_ids_.push_back(vocab.id_of(t.text));
        for (const Token& t : tmpl.suffix) suffix_ids_.push_back(vocab.id_of(t.text));
        states_.resize(static_cast<size_t>(tmpl.width) + 1);
        log_probs_.resize(static_cast<size_t>(tmpl.width) + 1);
    }

    std::vector<double> score_all() {
        scores_.assign(static_cast<size_t>(pow10_checked(tmpl_.width)), 0.0);

        // consume the prefix, accumulating its internal nll (shared offset)
        std::vector<double> h = model_.initial_state();
        std::vector<double> h_next;
        std::vector<double> lp;
        double prefix_nll = 0.0;
        for (size_t i = 0; i < prefix_ids_.size(); ++i) {
            model_.step(prefix_ids_[i], h, h_next, lp);
            if (i + 1 < prefix_ids_.size()) prefix_nll -= lp[static_cast<size_t>(prefix_ids_[i + 1])];
            std::swap(h, h_next);
        }
        states_[0] = h;
        log_probs_[0] = lp;  // predicts the first digit
        walk(0, 0, prefix_nll);
        return std::move(scores_);
    }

  private:
    void walk(int depth, long index, double nll) {
        const std::vector<double>& lp = log_probs_[static_cast<size_t>(depth)];
        const bool last_digit = depth + 1 == tmpl_.width;
        for (int d = 0; d < 10; ++d) {
            const double nll_d = nll - lp[static_cast<size_t>(digit_ids_[static_cast<size_t>(d)])];
            const long index_d = index * 10 + d;
            if (last_digit) {
                scores_[static_cast<size_t>(index_d)] = suffix_ids_.empty()
                                                            ? nll_d
                                                            : finish_suffix(depth, d, nll_d);
            } else {
                model_.step(digit_ids_[static_cast<size_t>(d)], states_[static_cast<size_t>(depth)],
                            states_[static_cast<size_t>(depth) + 1], log_probs_[static_cast<size_t>(depth) + 1]);
                walk(depth + 1, index_d, nll_d);
            }
        }
    }

    double finish_suffix(int depth, int digit, double nll) {
        std::vector<double> h;
        std::vector<double> h_next;
        std::vector<double> lp;
        model_.step(digit_ids_[static_cast<size_t>(digit)], states_[static_cast<size_t>(depth)], h, lp);
        for (size_t i = 0; i < suffix_ids_.size(); ++i) {
            nll -= lp[static_cast<size_t>(suffix_ids_[i])];
            if (i + 1 < suffix_ids_.size()) {
                model_.step(suffix_ids_[i], h, h_next, lp);
                std::swap(h, h_next);
            }
        }
        return nll;
    }

    const TinyLM& model_;
    const CanaryTemplate& tmpl_;
    std::vector<int> digit_ids_;
    std::vector<int> prefix_ids_;
    std::vector<int> suffix_ids_;
    std::vector<std::vector<double>> states_;
    std::vector<std::vector<double>> log_probs_;
    std::vector<double> scores_;
};

}  // namespace

ExposureResult canary_exposure(const TinyLM& model, const Vocab& vocab,
                               const std::vector<std::string>& values, const CanarySpec& spec) {
    const CanaryTemplate tmpl = parse_canary_template(spec);
    CandidateScorer scorer(model, vocab, tmpl);
    const std::vector<double> scores = scorer.score_all();

    ExposureResult result;
    for (const std::string& value : values) {
        if (static_cast<int>(value.size()) != tmpl.width) {
            throw std::invalid_argument("canary value width mismatch: " + value);
        }
        const long index = std::stol(value);
        const double target = scores[static_cast<size_t>(index)];
        long rank = 0;
        for (double s : scores) {
            if (s < target || s == target) ++rank;  // pessimistic: count all ties
        }
        ExposureEntry entry;
        entry.value = value;
        entry.rank = rank;
        entry.exposure = exposure_from_rank(rank, spec.randomness_space);
        result.per_canary.push_back(std::move(entry));
    }
    result.max_exposure = 0.0;
    for (const ExposureEntry& e : result.per_canary) {
        result.max_exposure = std::max(result.max_exposure, e.exposure);
    }
    return result;
}

double threshold_attack_accuracy(const std::vector<double>& member_scores,
                                 const std::vector<double>& nonmember_scores) {
    if (member_scores.empty() || nonmember_scores.empty()) {
        throw std::invalid_argument("both classes must be non-empty");
    }
    std::vector<std::pair<double, bool>> all;  // (score, is_member)
    all.reserve(member_scores.size() + nonmember_scores.size());
    for (double s : member_scores) all.push_back({s, true});
    for (double s : nonmember_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end());

    const double n_m = static_cast<double>(member_scores.size());
    const double n_n = static_cast<double>(nonmember_scores.size());
    double best = 0.5;  // threshold below every score: nothing classified member
    size_t members_below = 0;
    size_t nonmembers_below = 0;
    size_t i = 0;
    while (i < all.size()) {
        // advance over one distinct score value
        const double value = all[i].first;
        while (i < all.size() && all[i].first == value) {
            if (all[i].second) {
                ++members_below;
            } else {
                ++nonmembers_below;
            }
            ++i;
        }
        const double tpr = static_cast<double>(members_below) / n_m;
        const double tnr = 1.0 - static_cast<double>(nonmembers_below) / n_n;
        best = std::max(best, 0.5 * (tpr + tnr));
    }
    return best;
}

namespace {

std::vector<double> score_all(const TinyLM& model, const std::vector<std::vector<int>>& sequences) {
    std::vector<double> scores;
    scores.reserve(sequences.size());
    for (const auto& ids : sequences) scores.push_back(model.score(ids));
    return scores;
}

std::vector<double> group_sums(const std::vector<double>& scores, size_t group_size) {
    if (group_size == 0 || scores.size() % group_size != 0) {
        throw std::invalid_argument("scores do not split into uniform groups");
    }
    std::vector<double> sums;
    sums.reserve(scores.size() / group_size);
    for (size_t i = 0; i < scores.size(); i += group_size) {
        double total = 0.0;
        for (size_t k = 0; k < group_size; ++k) total += scores[i + k];
        sums.push_back(total);
    }
    return sums;
}

}  // namespace

double mi_attack(const TinyLM& model, const MiDataset& dataset) {
    return threshold_attack_accuracy(score_all(model, dataset.members),
                                     score_all(model, dataset.nonmembers));
}

double group_mi_attack(const TinyLM& model, const MiDataset& dataset) {
    if (dataset.group_size == 0) throw std::invalid_argument("dataset has no group structure");
    return threshold_attack_accuracy(group_sums(score_all(model, dataset.members), dataset.group_size),
                                     group_sums(score_all(model, dataset.nonmembers), dataset.group_size));
}

namespace {

// Distinct secret-bearing sentences of one category, encoded with the model
// vocabulary.
std::vector<std::vector<int>> secret_bearing_pool(const AnnotatedCorpus& corpus,
                                                  const Vocab& vocab, SecretCategory category) {
    std::set<std::pair<std::string, int>> wanted;
    for (const SecretSpan& span : corpus.secrets) {
        if (span.category == category) wanted.insert({span.doc_id, span.turn_index});
    }
    std::vector<std::vector<int>> pool;
    std::set<std::vector<int>> seen;
    for (const Sentence& s : corpus.sentences) {
        if (!wanted.contains({s.doc_id, s.turn_index})) continue;
        if (s.tokens.size() < 2) continue;
        std::vector<int> ids = encode_sentence(s, vocab);
        if (seen.insert(ids).second) pool.push_back(std::move(ids));
    }
    return pool;
}

std::set<std::vector<int>> all_training_sequences(const AnnotatedCorpus& training, const Vocab& vocab) {
    std::set<std::vector<int>> seen;
    for (const Sentence& s : training.sentences) seen.insert(encode_sentence(s, vocab));
    return seen;
}

}  // namespace

MiDataset build_mi_dataset(const AnnotatedCorpus& training, const AnnotatedCorpus& fresh,
                           const Vocab& model_vocab, SecretCategory category,
                           size_t per_class, uint64_t seed) {
    std::vector<std::vector<int>> members = secret_bearing_pool(training, model_vocab, category);
    std::vector<std::vector<int>> candidates = secret_bearing_pool(fresh, model_vocab, category);
    const std::set<std::vector<int>> trained = all_training_sequences(training, model_vocab);
    std::vector<std::vector<int>> nonmembers;
    for (auto& ids : candidates) {
        if (!trained.contains(ids)) nonmembers.push_back(std::move(ids));
    }
    if (members.size() < per_class || nonmembers.size() < per_class) {
        throw std::runtime_error("not enough candidate sequences for the requested dataset size");
    }

    Rng rng(seed);
    rng.shuffle(members);
    rng.shuffle(nonmembers);
    members.resize(per_class);
    nonmembers.resize(per_class);

    MiDataset out;
    out.members = std::move(members);
    out.nonmembers = std::move(nonmembers);
    out.group_size = 0;
    return out;
}

MiDataset build_group_mi_dataset(const AnnotatedCorpus& training, const AnnotatedCorpus& fresh,
                                 const Vocab& model_vocab, SecretCategory category,
                                 size_t groups_per_class, size_t group_size, uint64_t seed) {
    if (group_size == 0) throw std::invalid_argument("group size must be positive");
    std::vector<std::vector<int>> member_pool = secret_bearing_pool(training, model_vocab, category);
    std::vector<std::vector<int>> candidates = secret_bearing_pool(fresh, model_vocab, category);
    const std::set<std::vector<int>> trained = all_training_sequences(training, model_vocab);
    std::vector<std::vector<int>> nonmember_pool;
    for (auto& ids : candidates) {
        if (!trained.contains(ids)) nonmember_pool.push_back(std::move(ids));
    }
    if (member_pool.empty() || nonmember_pool.empty()) {
        throw std::runtime_error("empty candidate pool for group dataset");
    }

    Rng rng(seed);
    MiDataset out;
    out.group_size = group_size;
    for (size_t g = 0; g < groups_per_class * group_size; ++g) {
        out.members.push_back(member_pool[rng.below(member_pool.size())]);
    }
    for (size_t g = 0; g < groups_per_class * group_size; ++g) {
        out.nonmembers.push_back(nonmember_pool[rng.below(nonmember_pool.size())]);
    }
    return out;
}

}  // namespace crt
