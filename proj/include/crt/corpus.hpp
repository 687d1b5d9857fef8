#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace crt {

// Reserved token shared by deduplication and redaction. Both must emit the
// identical token, and it always has vocabulary id 0.
inline constexpr std::string_view kMaskText = "<MASK>";
inline constexpr int kMaskId = 0;

enum class SecretCategory {
    name,
    address,
    phone,
    order_number,
    tracking_number,
    canary,
    other,
};

std::string_view to_string(SecretCategory category);
SecretCategory category_from_string(std::string_view text);

struct Token {
    std::string text;
    bool is_mask = false;

    static Token mask();
    // Throws std::invalid_argument on empty text, internal whitespace, or the
    // reserved mask text.
    static Token word(std::string text);

    bool operator==(const Token&) const = default;
};

// One dialogue turn; one whole natural sentence; one data point.
struct Sentence {
    std::vector<Token> tokens;
    std::string doc_id;
    int turn_index = 0;

    bool operator==(const Sentence&) const = default;
};

// Ground-truth annotation of a contiguous confidential span. Evaluation-only:
// policies are measured against these, the trainer never sees them.
struct SecretSpan {
    std::string doc_id;
    int turn_index = 0;
    size_t start = 0;
    size_t end = 0;  // exclusive
    std::string secret_id;
    SecretCategory category = SecretCategory::other;

    bool operator==(const SecretSpan&) const = default;
};

struct Vocab {
    std::vector<std::string> id_to_text;
    std::map<std::string, int, std::less<>> text_to_id;

    int size() const { return static_cast<int>(id_to_text.size()); }
    bool contains(std::string_view text) const { return text_to_id.find(text) != text_to_id.end(); }
    int id_of(std::string_view text) const;  // throws std::out_of_range

    bool operator==(const Vocab&) const = default;
};

struct AnnotatedCorpus {
    std::vector<Sentence> sentences;
    std::vector<SecretSpan> secrets;
    Vocab vocab;

    // Checks the structural invariants: span references resolve, indices are
    // in range, secret_id matches the span tokens, vocab covers every token
    // with contiguous ids and <MASK> at id 0.
    void validate() const;

    // Index of the sentence with the given reference, or npos.
    size_t find_sentence(std::string_view doc_id, int turn_index) const;

    bool operator==(const AnnotatedCorpus&) const = default;
};

// Whitespace split with terminal punctuation (.,!?;:) peeled into separate
// tokens. Internal hyphens and digits survive, so `345-678-9012` stays one
// token. No case folding. Rejects raw text containing the reserved <MASK>.
std::vector<Token> tokenize(std::string_view raw_text);

// One dialogue turn per line; blank lines dropped; turn_index numbered over
// the emitted sentences in order.
std::vector<Sentence> split_sentences(std::string_view raw_document, const std::string& doc_id);

// Canonical vocabulary: id 0 is <MASK>, remaining token texts sorted.
Vocab build_vocab(const std::vector<Sentence>& sentences);

// Extra token texts folded in (still canonical). Used when the scoring model
// must cover candidate tokens that never occur in the training sentences.
Vocab build_vocab(const std::vector<Sentence>& sentences, const std::vector<std::string>& extra_texts);

std::string join_tokens(const std::vector<Token>& tokens);

// Template-driven synthetic dialogue generator. Slots are written {category},
// e.g. "My phone number is {phone}", and filled by uniform draws from the
// matching pool.
struct SyntheticSpec {
    int num_dialogues = 0;
    std::vector<std::string> templates;
    std::map<SecretCategory, std::vector<std::string>> secret_pools;
    double duplicate_rate = 0.0;  // probability a turn repeats an earlier one verbatim
    uint64_t rng_seed = 0;
};

AnnotatedCorpus generate_synthetic(const SyntheticSpec& spec);

// Line-delimited UTF-8 records; round trips exactly (vocab is canonical and
// rebuilt on load). Parse failures report the 1-based line number.
void save_corpus(const AnnotatedCorpus& corpus, std::ostream& out);
void save_corpus(const AnnotatedCorpus& corpus, const std::filesystem::path& path);
AnnotatedCorpus load_corpus(std::istream& in);
AnnotatedCorpus load_corpus(const std::filesystem::path& path);

}  // namespace crt
