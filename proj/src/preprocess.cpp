#include "crt/preprocess.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace crt {

std::string sha1_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
        throw std::runtime_error("SHA-1 computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

namespace {

bool is_mask_only(const Sentence& s) {
    return s.tokens.size() == 1 && s.tokens[0].is_mask;
}

// shift experienced by original position p after earlier spans collapse to one
// token each; spans must be sorted, disjoint, and not contain p
size_t shift_before(const std::vector<LabeledSpan>& spans, size_t p) {
    size_t shift = 0;
    for (const LabeledSpan& l : spans) {
        if (l.end <= p) shift += (l.end - l.start) - 1;
    }
    return shift;
}

// Core replacement: each labeled span becomes one <MASK>; ground-truth spans
// of the sentence are dropped when they intersect a replaced region and
// re-indexed otherwise.
Sentence mask_spans(const Sentence& s,
                    const std::vector<LabeledSpan>& spans,
                    std::vector<SecretSpan>& sentence_truth) {
    if (spans.empty()) return s;
    Sentence out;
    out.doc_id = s.doc_id;
    out.turn_index = s.turn_index;
    size_t pos = 0;
    for (const LabeledSpan& l : spans) {
        for (; pos < l.start; ++pos) out.tokens.push_back(s.tokens[pos]);
        out.tokens.push_back(Token::mask());
        pos = l.end;
    }
    for (; pos < s.tokens.size(); ++pos) out.tokens.push_back(s.tokens[pos]);

    std::vector<SecretSpan> kept;
    for (SecretSpan& span : sentence_truth) {
        const bool intersects = std::any_of(spans.begin(), spans.end(), [&](const LabeledSpan& l) {
            return l.start < span.end && span.start < l.end;
        });
        if (intersects) continue;
        const size_t shift = shift_before(spans, span.start);
        span.start -= shift;
        span.end -= shift;
        kept.push_back(std::move(span));
    }
    sentence_truth = std::move(kept);
    return out;
}

std::vector<LabeledSpan> truth_spans_merged(const std::vector<const SecretSpan*>& truth) {
    std::vector<LabeledSpan> spans;
    spans.reserve(truth.size());
    for (const SecretSpan* t : truth) spans.push_back({t->start, t->end, t->category});
    std::sort(spans.begin(), spans.end(),
              [](const LabeledSpan& a, const LabeledSpan& b) { return a.start < b.start; });
    std::vector<LabeledSpan> merged;
    for (const LabeledSpan& l : spans) {
        if (!merged.empty() && l.start <= merged.back().end) {
            merged.back().end = std::max(merged.back().end, l.end);
        } else {
            merged.push_back(l);
        }
    }
    return merged;
}

using TruthBySentence = std::map<std::pair<std::string, int>, std::vector<SecretSpan>>;

TruthBySentence group_truth(const std::vector<SecretSpan>& secrets) {
    TruthBySentence grouped;
    for (const SecretSpan& span : secrets) grouped[{span.doc_id, span.turn_index}].push_back(span);
    return grouped;
}

RedactedCorpus redact_with(const DedupedCorpus& deduped,
                           const std::function<std::vector<LabeledSpan>(const Sentence&, const std::vector<SecretSpan>&)>& labeler) {
    RedactedCorpus out;
    out.dedup_log = deduped.log;
    out.duplicates_replaced = deduped.replaced_count;
    out.corpus.vocab = deduped.corpus.vocab;

    TruthBySentence truth = group_truth(deduped.corpus.secrets);
    out.corpus.sentences.reserve(deduped.corpus.sentences.size());
    for (size_t i = 0; i < deduped.corpus.sentences.size(); ++i) {
        const Sentence& s = deduped.corpus.sentences[i];
        auto truth_it = truth.find({s.doc_id, s.turn_index});
        static const std::vector<SecretSpan> kNoTruth;
        const std::vector<SecretSpan>& sentence_truth = truth_it == truth.end() ? kNoTruth : truth_it->second;

        std::vector<LabeledSpan> spans = labeler(s, sentence_truth);
        for (const LabeledSpan& l : spans) {
            out.redaction_log.push_back({i, l.start, l.end, l.category});
        }
        std::vector<SecretSpan> remaining = sentence_truth;
        out.corpus.sentences.push_back(mask_spans(s, spans, remaining));
        for (SecretSpan& span : remaining) out.corpus.secrets.push_back(std::move(span));
    }
    return out;
}

}  // namespace

DedupedCorpus dedup(const AnnotatedCorpus& corpus) {
    DedupedCorpus out;
    out.corpus.vocab = corpus.vocab;

    std::unordered_map<std::string, size_t> first_by_hash;  // hash -> log index
    std::vector<bool> replaced(corpus.sentences.size(), false);
    out.corpus.sentences.reserve(corpus.sentences.size());

    for (size_t i = 0; i < corpus.sentences.size(); ++i) {
        const Sentence& s = corpus.sentences[i];
        if (is_mask_only(s)) {
            out.corpus.sentences.push_back(s);  // exempt, keeps dedup idempotent
            continue;
        }
        const std::string hash = sha1_hex(join_tokens(s.tokens));
        auto it = first_by_hash.find(hash);
        if (it == first_by_hash.end()) {
            first_by_hash.emplace(hash, out.log.size());
            out.log.push_back({hash, i, {}});
            out.corpus.sentences.push_back(s);
        } else {
            out.log[it->second].replaced_indices.push_back(i);
            Sentence masked;
            masked.doc_id = s.doc_id;
            masked.turn_index = s.turn_index;
            masked.tokens.push_back(Token::mask());
            out.corpus.sentences.push_back(std::move(masked));
            replaced[i] = true;
            ++out.replaced_count;
        }
    }

    std::map<std::pair<std::string, int>, size_t> index_by_ref;
    for (size_t i = 0; i < corpus.sentences.size(); ++i) {
        index_by_ref[{corpus.sentences[i].doc_id, corpus.sentences[i].turn_index}] = i;
    }
    for (const SecretSpan& span : corpus.secrets) {
        const size_t idx = index_by_ref.at({span.doc_id, span.turn_index});
        if (!replaced[idx]) out.corpus.secrets.push_back(span);
    }
    return out;
}

RedactedCorpus redact(const DedupedCorpus& deduped, const Policy& pi) {
    return redact_with(deduped, [&pi](const Sentence& s, const std::vector<SecretSpan>&) {
        return pi.label(s);
    });
}

RedactedCorpus ideal_redact(const DedupedCorpus& deduped) {
    return redact_with(deduped, [](const Sentence& s, const std::vector<SecretSpan>& truth) {
        std::vector<const SecretSpan*> refs;
        refs.reserve(truth.size());
        for (const SecretSpan& t : truth) refs.push_back(&t);
        (void)s;
        return truth_spans_merged(refs);
    });
}

PartitionedCorpus partition(const RedactedCorpus& redacted, const Policy& pi_c) {
    PartitionedCorpus out;
    out.vocab = redacted.corpus.vocab;
    out.secrets = redacted.corpus.secrets;
    out.dedup_log = redacted.dedup_log;
    out.redaction_log = redacted.redaction_log;
    out.duplicates_replaced = redacted.duplicates_replaced;
    out.spans_redacted = redacted.redaction_log.size();

    for (const Sentence& s : redacted.corpus.sentences) {
        const bool has_mask = std::any_of(s.tokens.begin(), s.tokens.end(),
                                          [](const Token& t) { return t.is_mask; });
        const bool flagged = has_mask || !pi_c.label(s).empty();
        PartitionedCorpus::Provenance prov;
        prov.is_private = flagged;
        prov.doc_id = s.doc_id;
        prov.turn_index = s.turn_index;
        if (flagged) {
            prov.index_in_set = out.private_set.size();
            out.private_set.push_back(s);
        } else {
            prov.index_in_set = out.public_set.size();
            out.public_set.push_back(s);
        }
        out.provenance.push_back(std::move(prov));
    }
    return out;
}

PartitionedCorpus preprocess(const AnnotatedCorpus& corpus, const Policy& pi, const Policy& pi_c) {
    return partition(redact(dedup(corpus), pi), pi_c);
}

std::vector<Sentence> reassemble(const PartitionedCorpus& partitioned) {
    std::vector<Sentence> out;
    out.reserve(partitioned.provenance.size());
    for (const auto& prov : partitioned.provenance) {
        const auto& source = prov.is_private ? partitioned.private_set : partitioned.public_set;
        out.push_back(source[prov.index_in_set]);
    }
    return out;
}

AnnotatedCorpus mask_secret_everywhere(const AnnotatedCorpus& corpus, std::string_view secret_id) {
    AnnotatedCorpus out;
    out.vocab = corpus.vocab;
    TruthBySentence truth = group_truth(corpus.secrets);

    for (const Sentence& s : corpus.sentences) {
        auto it = truth.find({s.doc_id, s.turn_index});
        if (it == truth.end()) {
            out.sentences.push_back(s);
            continue;
        }
        std::vector<const SecretSpan*> target;
        for (const SecretSpan& span : it->second) {
            if (span.secret_id == secret_id) target.push_back(&span);
        }
        if (target.empty()) {
            out.sentences.push_back(s);
            for (const SecretSpan& span : it->second) out.secrets.push_back(span);
            continue;
        }
        std::vector<LabeledSpan> spans = truth_spans_merged(target);
        std::vector<SecretSpan> remaining;
        for (const SecretSpan& span : it->second) {
            if (span.secret_id != secret_id) remaining.push_back(span);
        }
        out.sentences.push_back(mask_spans(s, spans, remaining));
        for (SecretSpan& span : remaining) out.secrets.push_back(std::move(span));
    }
    return out;
}

std::vector<SecretOutcome> analyze_secrets(const DedupedCorpus& deduped, const Policy& pi, const Policy& pi_c) {
    std::map<std::string, SecretOutcome> by_id;
    const AnnotatedCorpus& corpus = deduped.corpus;

    std::map<std::pair<std::string, int>, size_t> index_by_ref;
    for (size_t i = 0; i < corpus.sentences.size(); ++i) {
        index_by_ref[{corpus.sentences[i].doc_id, corpus.sentences[i].turn_index}] = i;
    }

    for (const SecretSpan& span : corpus.secrets) {
        const Sentence& s = corpus.sentences[index_by_ref.at({span.doc_id, span.turn_index})];

        auto covered_by = [&](const Policy& policy) {
            std::vector<bool> marked(s.tokens.size(), false);
            for (const LabeledSpan& l : policy.label(s)) {
                for (size_t i = l.start; i < l.end; ++i) marked[i] = true;
            }
            for (size_t i = span.start; i < span.end; ++i) {
                if (!marked[i]) return false;
            }
            return true;
        };

        auto [it, inserted] = by_id.try_emplace(span.secret_id);
        SecretOutcome& outcome = it->second;
        if (inserted) {
            outcome.secret_id = span.secret_id;
            outcome.category = span.category;
            outcome.detected_by_pi = true;
            outcome.covered_by_pi_c = true;
        }
        ++outcome.occurrences;
        outcome.detected_by_pi = outcome.detected_by_pi && covered_by(pi);
        outcome.covered_by_pi_c = outcome.covered_by_pi_c && covered_by(pi_c);
    }

    std::vector<SecretOutcome> out;
    out.reserve(by_id.size());
    for (auto& [id, outcome] : by_id) out.push_back(std::move(outcome));
    return out;
}

}  // namespace crt
