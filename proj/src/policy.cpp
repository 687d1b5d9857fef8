#include "crt/policy.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>

#include "crt/rng.hpp"
#include "json.hpp"

namespace crt {

namespace {

// Closed list of capitalized non-secret words; anything capitalized outside
// it is flagged by the conservative built-in rule.
const std::set<std::string>& function_word_list() {
    static const std::set<std::string> words = {
        "A",      "About",  "After",   "All",    "An",     "And",    "Any",    "Anything", "Are",
        "As",     "At",     "Be",      "Been",   "Before", "But",    "By",     "Call",     "Can",
        "Could",  "Day",    "Did",     "Do",     "Does",   "Don't",  "Else",   "Enjoy",    "For",
        "From",   "Get",    "Glad",    "Good",   "Goodbye", "Great", "Had",    "Has",      "Have",
        "Hello",  "Help",   "Here",    "Hi",     "Hold",   "How",    "I",      "If",       "In",
        "Is",     "It",     "Its",     "Just",   "Let",    "Looking", "Many",  "May",      "Me",
        "Much",   "My",     "Need",    "No",     "Not",    "Nothing", "Of",    "Ok",       "Okay",
        "On",     "One",    "Or",      "Our",    "Out",    "Perfect", "Please", "Shipping", "So",
        "Sorry",  "Sure",   "Thank",   "Thanks", "That",   "The",    "Then",   "There",    "They",
        "This",   "To",     "Today",   "Was",    "We",     "Welcome", "What",  "When",     "Where",
        "Which",  "Who",    "Why",     "Will",   "With",   "Would",  "Yes",    "You",      "Your",
    };
    return words;
}

bool has_digit(const std::string& text) {
    for (char c : text) {
        if (std::isdigit(static_cast<unsigned char>(c))) return true;
    }
    return false;
}

bool is_capitalized(const std::string& text) {
    return !text.empty() && std::isupper(static_cast<unsigned char>(text[0]));
}

}  // namespace

PolicyRuleSet::PolicyRuleSet(PolicyMode mode,
                             std::vector<PolicyPattern> patterns,
                             std::vector<std::pair<SecretCategory, std::string>> dictionary)
    : mode_(mode), patterns_(std::move(patterns)), function_words_(function_word_list()) {
    compiled_.reserve(patterns_.size());
    for (const PolicyPattern& p : patterns_) {
        compiled_.emplace_back(p.regex_text, std::regex::ECMAScript);  // throws std::regex_error
    }
    for (auto& [category, literal] : dictionary) {
        DictEntry entry;
        entry.category = category;
        for (const Token& t : tokenize(literal)) entry.tokens.push_back(t.text);
        if (entry.tokens.empty()) throw std::invalid_argument("dictionary entry tokenizes to nothing: " + literal);
        dictionary_.push_back(std::move(entry));
    }
}

std::vector<LabeledSpan> PolicyRuleSet::label(const Sentence& sentence) const {
    const size_t n = sentence.tokens.size();
    std::vector<std::optional<SecretCategory>> marks(n);

    auto mark = [&](size_t i, SecretCategory c) {
        if (sentence.tokens[i].is_mask) return;
        if (!marks[i]) marks[i] = c;
    };

    for (size_t i = 0; i < n; ++i) {
        const Token& t = sentence.tokens[i];
        if (t.is_mask) continue;
        for (size_t r = 0; r < compiled_.size(); ++r) {
            if (std::regex_match(t.text, compiled_[r])) {
                mark(i, patterns_[r].category);
                break;
            }
        }
        if (mode_ == PolicyMode::conservative && !marks[i]) {
            if (has_digit(t.text)) {
                mark(i, SecretCategory::other);
            } else if (is_capitalized(t.text) && !function_words_.contains(t.text)) {
                mark(i, SecretCategory::other);
            }
        }
    }

    for (const DictEntry& entry : dictionary_) {
        const size_t m = entry.tokens.size();
        if (m > n) continue;
        for (size_t start = 0; start + m <= n; ++start) {
            bool hit = true;
            for (size_t k = 0; k < m; ++k) {
                const Token& t = sentence.tokens[start + k];
                if (t.is_mask || t.text != entry.tokens[k]) {
                    hit = false;
                    break;
                }
            }
            if (hit) {
                for (size_t k = 0; k < m; ++k) mark(start + k, entry.category);
            }
        }
    }

    // merge marked tokens into maximal contiguous spans
    std::vector<LabeledSpan> spans;
    size_t i = 0;
    while (i < n) {
        if (!marks[i]) {
            ++i;
            continue;
        }
        LabeledSpan span;
        span.start = i;
        span.category = *marks[i];
        while (i < n && marks[i]) ++i;
        span.end = i;
        spans.push_back(span);
    }
    return spans;
}

DegradedPolicy::DegradedPolicy(std::shared_ptr<const Policy> base, double gamma, uint64_t rng_seed)
    : base_(std::move(base)), gamma_(gamma), seed_(rng_seed) {
    if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw std::invalid_argument("gamma must be in [0,1]");
    if (!base_) throw std::invalid_argument("null base policy");
}

bool DegradedPolicy::drops(std::string_view secret_id) const {
    return hash_unit(secret_id, seed_) < gamma_;
}

std::vector<LabeledSpan> DegradedPolicy::label(const Sentence& sentence) const {
    std::vector<LabeledSpan> spans = base_->label(sentence);
    std::vector<LabeledSpan> kept;
    kept.reserve(spans.size());
    for (const LabeledSpan& span : spans) {
        std::string secret_id;
        for (size_t i = span.start; i < span.end; ++i) {
            if (i > span.start) secret_id += ' ';
            secret_id += sentence.tokens[i].text;
        }
        if (!drops(secret_id)) kept.push_back(span);
    }
    return kept;
}

std::set<std::string> DegradedPolicy::dropped_secrets(const AnnotatedCorpus& corpus) const {
    // a secret counts as detectable when the base covers every occurrence
    std::map<std::string, bool> detectable;
    for (const SecretSpan& span : corpus.secrets) {
        const size_t idx = corpus.find_sentence(span.doc_id, span.turn_index);
        const Sentence& s = corpus.sentences[idx];
        std::vector<bool> marked(s.tokens.size(), false);
        for (const LabeledSpan& l : base_->label(s)) {
            for (size_t i = l.start; i < l.end; ++i) marked[i] = true;
        }
        bool covered = true;
        for (size_t i = span.start; i < span.end; ++i) covered = covered && marked[i];
        auto [it, inserted] = detectable.try_emplace(span.secret_id, covered);
        if (!inserted) it->second = it->second && covered;
    }
    std::set<std::string> dropped;
    for (const auto& [id, ok] : detectable) {
        if (ok && drops(id)) dropped.insert(id);
    }
    return dropped;
}

DegradedPolicy degrade(std::shared_ptr<const Policy> base, double gamma, uint64_t rng_seed) {
    return DegradedPolicy(std::move(base), gamma, rng_seed);
}

PolicyQuality evaluate_policy(const Policy& policy, const AnnotatedCorpus& corpus) {
    size_t labeled_tokens = 0;
    size_t labeled_in_truth = 0;
    std::map<std::string, bool> fully_covered;  // secret_id -> covered at every occurrence

    for (size_t si = 0; si < corpus.sentences.size(); ++si) {
        const Sentence& s = corpus.sentences[si];
        std::vector<bool> marked(s.tokens.size(), false);
        for (const LabeledSpan& l : policy.label(s)) {
            for (size_t i = l.start; i < l.end; ++i) marked[i] = true;
        }
        std::vector<bool> truth(s.tokens.size(), false);
        for (const SecretSpan& span : corpus.secrets) {
            if (span.doc_id != s.doc_id || span.turn_index != s.turn_index) continue;
            for (size_t i = span.start; i < span.end; ++i) truth[i] = true;
            bool covered = true;
            for (size_t i = span.start; i < span.end; ++i) covered = covered && marked[i];
            auto [it, inserted] = fully_covered.try_emplace(span.secret_id, covered);
            if (!inserted) it->second = it->second && covered;
        }
        for (size_t i = 0; i < s.tokens.size(); ++i) {
            if (marked[i]) {
                ++labeled_tokens;
                if (truth[i]) ++labeled_in_truth;
            }
        }
    }

    PolicyQuality q;
    if (fully_covered.empty()) {
        q.recall = 1.0;  // vacuous
    } else {
        size_t hit = 0;
        for (const auto& [id, ok] : fully_covered) {
            if (ok) ++hit;
        }
        q.recall = static_cast<double>(hit) / static_cast<double>(fully_covered.size());
    }
    q.precision = labeled_tokens == 0 ? 1.0 : static_cast<double>(labeled_in_truth) / static_cast<double>(labeled_tokens);
    q.false_negative_rate = 1.0 - q.recall;
    return q;
}

std::shared_ptr<PolicyRuleSet> load_policy_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open policy rules: " + path.string());
    nlohmann::json doc = nlohmann::json::parse(in);

    const std::string mode_text = doc.value("mode", "standard");
    PolicyMode mode;
    if (mode_text == "standard") {
        mode = PolicyMode::standard;
    } else if (mode_text == "conservative") {
        mode = PolicyMode::conservative;
    } else {
        throw std::invalid_argument("unknown policy mode: " + mode_text);
    }

    std::vector<PolicyPattern> patterns;
    if (doc.contains("patterns")) {
        for (const auto& p : doc.at("patterns")) {
            patterns.push_back({category_from_string(p.at("category").get<std::string>()),
                                p.at("regex").get<std::string>()});
        }
    }

    std::vector<std::pair<SecretCategory, std::string>> dictionary;
    if (doc.contains("dictionary")) {
        for (const auto& [cat, entries] : doc.at("dictionary").items()) {
            for (const auto& literal : entries) {
                dictionary.emplace_back(category_from_string(cat), literal.get<std::string>());
            }
        }
    }
    if (doc.contains("dictionary_files")) {
        for (const auto& [cat, file] : doc.at("dictionary_files").items()) {
            const std::filesystem::path dict_path =
                path.parent_path() / std::filesystem::path(file.get<std::string>());
            std::ifstream dict(dict_path);
            if (!dict) throw std::runtime_error("cannot open dictionary file: " + dict_path.string());
            std::string line;
            while (std::getline(dict, line)) {
                if (!line.empty()) dictionary.emplace_back(category_from_string(cat), line);
            }
        }
    }

    return std::make_shared<PolicyRuleSet>(mode, std::move(patterns), std::move(dictionary));
}

std::shared_ptr<PolicyRuleSet> make_default_policy(
    PolicyMode mode,
    const std::map<SecretCategory, std::vector<std::string>>& dictionary_pools) {
    std::vector<PolicyPattern> patterns = {
        {SecretCategory::phone, R"(\d{3}-\d{3}-\d{4})"},
        {SecretCategory::order_number, R"(\d{6})"},
        {SecretCategory::canary, R"(\d)"},
        {SecretCategory::other, R"([^@\s]+@[^@\s]+\.[^@\s]+)"},
    };
    std::vector<std::pair<SecretCategory, std::string>> dictionary;
    for (SecretCategory cat : {SecretCategory::name, SecretCategory::address}) {
        auto it = dictionary_pools.find(cat);
        if (it == dictionary_pools.end()) continue;
        for (const std::string& literal : it->second) dictionary.emplace_back(cat, literal);
    }
    return std::make_shared<PolicyRuleSet>(mode, std::move(patterns), std::move(dictionary));
}

}  // namespace crt
