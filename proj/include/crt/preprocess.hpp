#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "crt/corpus.hpp"
#include "crt/policy.hpp"

namespace crt {

std::string sha1_hex(std::string_view data);

struct DedupRecord {
    std::string sha1;
    size_t first_index = 0;
    std::vector<size_t> replaced_indices;
};

struct RedactionRecord {
    size_t sentence_index = 0;
    size_t start = 0;
    size_t end = 0;  // original token coordinates, exclusive
    SecretCategory category = SecretCategory::other;
};

// Stage outputs are distinct types so the pipeline cannot be run in the wrong
// order: redact() only accepts a deduplicated corpus, partition() only a
// redacted one.
struct DedupedCorpus {
    AnnotatedCorpus corpus;
    std::vector<DedupRecord> log;
    size_t replaced_count = 0;
};

struct RedactedCorpus {
    AnnotatedCorpus corpus;
    std::vector<DedupRecord> dedup_log;
    std::vector<RedactionRecord> redaction_log;
    size_t duplicates_replaced = 0;
};

// Post-preprocessing split. public/private are disjoint and together cover
// every sentence; nothing in public carries <MASK> or a pi_c-flagged token.
struct PartitionedCorpus {
    std::vector<Sentence> public_set;
    std::vector<Sentence> private_set;
    std::vector<SecretSpan> secrets;  // surviving ground truth, evaluation-only
    Vocab vocab;

    struct Provenance {
        bool is_private = false;
        size_t index_in_set = 0;
        std::string doc_id;
        int turn_index = 0;
    };
    std::vector<Provenance> provenance;  // one entry per sentence, original order

    std::vector<DedupRecord> dedup_log;
    std::vector<RedactionRecord> redaction_log;
    size_t duplicates_replaced = 0;
    size_t spans_redacted = 0;
};

// Exact-sentence deduplication: SHA-1 over the space-joined token texts;
// every repeat after the first becomes the single-token [<MASK>] sentence.
// Sentences that are already exactly [<MASK>] pass through untouched, which
// makes the operation idempotent. Order and count are preserved.
DedupedCorpus dedup(const AnnotatedCorpus& corpus);

// Replaces each policy-labeled span with exactly one <MASK> token. Adjacent
// or overlapping labels collapse into a single mask so span count does not
// reveal secret length. Surviving ground-truth spans are re-indexed; spans
// that intersect a redacted region are dropped from the annotation.
RedactedCorpus redact(const DedupedCorpus& deduped, const Policy& pi);

// Ground-truth-driven redaction (the perfectly screened alternative world).
RedactedCorpus ideal_redact(const DedupedCorpus& deduped);

PartitionedCorpus partition(const RedactedCorpus& redacted, const Policy& pi_c);

// dedup -> redact(pi) -> partition(pi_c).
PartitionedCorpus preprocess(const AnnotatedCorpus& corpus, const Policy& pi, const Policy& pi_c);

// The partition's sentences back in original corpus order.
std::vector<Sentence> reassemble(const PartitionedCorpus& partitioned);

// Neighbor construction for confidentiality checks: every occurrence of one
// secret replaced by <MASK> (other annotations kept).
AnnotatedCorpus mask_secret_everywhere(const AnnotatedCorpus& corpus, std::string_view secret_id);

// Per-unique-secret detection outcomes feeding the confidentiality report.
// Occurrences are counted after dedup; detected/covered require full span
// coverage at every surviving occurrence.
struct SecretOutcome {
    std::string secret_id;
    SecretCategory category = SecretCategory::other;
    size_t occurrences = 0;
    bool detected_by_pi = false;
    bool covered_by_pi_c = false;
};

std::vector<SecretOutcome> analyze_secrets(const DedupedCorpus& deduped, const Policy& pi, const Policy& pi_c);

}  // namespace crt
