#include "crt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "crt/rng.hpp"
#include "json.hpp"

namespace crt {

namespace {

using nlohmann::json;

bool is_terminal_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

}  // namespace

std::string_view to_string(SecretCategory category) {
    switch (category) {
        case SecretCategory::name: return "name";
        case SecretCategory::address: return "address";
        case SecretCategory::phone: return "phone";
        case SecretCategory::order_number: return "order_number";
        case SecretCategory::tracking_number: return "tracking_number";
        case SecretCategory::canary: return "canary";
        case SecretCategory::other: return "other";
    }
    throw std::logic_error("unknown SecretCategory");
}

SecretCategory category_from_string(std::string_view text) {
    if (text == "name") return SecretCategory::name;
    if (text == "address") return SecretCategory::address;
    if (text == "phone") return SecretCategory::phone;
    if (text == "order_number") return SecretCategory::order_number;
    if (text == "tracking_number") return SecretCategory::tracking_number;
    if (text == "canary") return SecretCategory::canary;
    if (text == "other") return SecretCategory::other;
    throw std::invalid_argument("unknown secret category: " + std::string(text));
}

Token Token::mask() {
    Token t;
    t.text = kMaskText;
    t.is_mask = true;
    return t;
}

Token Token::word(std::string text) {
    if (text.empty()) throw std::invalid_argument("empty token text");
    if (text == kMaskText) throw std::invalid_argument("reserved token <MASK> in raw input");
    for (char c : text) {
        if (is_space(c)) throw std::invalid_argument("whitespace inside token text: '" + text + "'");
    }
    Token t;
    t.text = std::move(text);
    t.is_mask = false;
    return t;
}

int Vocab::id_of(std::string_view text) const {
    auto it = text_to_id.find(text);
    if (it == text_to_id.end()) throw std::out_of_range("token not in vocab: " + std::string(text));
    return it->second;
}

size_t AnnotatedCorpus::find_sentence(std::string_view doc_id, int turn_index) const {
    for (size_t i = 0; i < sentences.size(); ++i) {
        if (sentences[i].turn_index == turn_index && sentences[i].doc_id == doc_id) return i;
    }
    return static_cast<size_t>(-1);
}

void AnnotatedCorpus::validate() const {
    std::map<std::pair<std::string, int>, size_t> by_ref;
    for (size_t i = 0; i < sentences.size(); ++i) {
        const Sentence& s = sentences[i];
        if (s.tokens.empty()) throw std::runtime_error("empty sentence " + s.doc_id);
        for (const Token& t : s.tokens) {
            if (t.is_mask && t.text != kMaskText) throw std::runtime_error("mask token with wrong text");
            if (!t.is_mask && t.text == kMaskText) throw std::runtime_error("<MASK> text on non-mask token");
            if (!vocab.contains(t.text)) throw std::runtime_error("token not covered by vocab: " + t.text);
        }
        auto [it, inserted] = by_ref.insert({{s.doc_id, s.turn_index}, i});
        if (!inserted) throw std::runtime_error("duplicate sentence reference " + s.doc_id);
    }
    for (const SecretSpan& span : secrets) {
        auto it = by_ref.find({span.doc_id, span.turn_index});
        if (it == by_ref.end()) throw std::runtime_error("secret span references missing sentence");
        const Sentence& s = sentences[it->second];
        if (!(span.start < span.end && span.end <= s.tokens.size())) {
            throw std::runtime_error("secret span out of range in " + span.doc_id);
        }
        std::string joined;
        for (size_t i = span.start; i < span.end; ++i) {
            if (i > span.start) joined += ' ';
            joined += s.tokens[i].text;
        }
        if (joined != span.secret_id) throw std::runtime_error("secret_id mismatch: " + span.secret_id + " vs " + joined);
    }
    if (vocab.size() < 1 || vocab.id_to_text[0] != kMaskText) throw std::runtime_error("vocab must reserve id 0 for <MASK>");
    for (int i = 0; i < vocab.size(); ++i) {
        if (vocab.id_of(vocab.id_to_text[i]) != i) throw std::runtime_error("vocab ids not contiguous");
    }
}

std::vector<Token> tokenize(std::string_view raw_text) {
    if (raw_text.find(kMaskText) != std::string_view::npos) {
        throw std::invalid_argument("raw input contains reserved token <MASK>");
    }
    std::vector<Token> out;
    size_t i = 0;
    const size_t n = raw_text.size();
    while (i < n) {
        while (i < n && is_space(raw_text[i])) ++i;
        if (i >= n) break;
        size_t j = i;
        while (j < n && !is_space(raw_text[j])) ++j;
        std::string_view chunk = raw_text.substr(i, j - i);
        // peel terminal punctuation off the end, preserving order
        size_t stem_end = chunk.size();
        while (stem_end > 0 && is_terminal_punct(chunk[stem_end - 1])) --stem_end;
        if (stem_end > 0) out.push_back(Token::word(std::string(chunk.substr(0, stem_end))));
        for (size_t k = stem_end; k < chunk.size(); ++k) {
            out.push_back(Token::word(std::string(1, chunk[k])));
        }
        i = j;
    }
    return out;
}

std::vector<Sentence> split_sentences(std::string_view raw_document, const std::string& doc_id) {
    std::vector<Sentence> out;
    size_t pos = 0;
    int turn = 0;
    while (pos <= raw_document.size()) {
        size_t eol = raw_document.find('\n', pos);
        std::string_view line = raw_document.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        std::vector<Token> tokens = tokenize(line);
        if (!tokens.empty()) {
            Sentence s;
            s.tokens = std::move(tokens);
            s.doc_id = doc_id;
            s.turn_index = turn++;
            out.push_back(std::move(s));
        }
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    return out;
}

Vocab build_vocab(const std::vector<Sentence>& sentences) {
    return build_vocab(sentences, {});
}

Vocab build_vocab(const std::vector<Sentence>& sentences, const std::vector<std::string>& extra_texts) {
    std::set<std::string> texts;
    for (const Sentence& s : sentences) {
        for (const Token& t : s.tokens) {
            if (!t.is_mask) texts.insert(t.text);
        }
    }
    for (const std::string& t : extra_texts) {
        if (t != kMaskText) texts.insert(t);
    }
    texts.erase(std::string(kMaskText));
    Vocab v;
    v.id_to_text.reserve(texts.size() + 1);
    v.id_to_text.emplace_back(kMaskText);
    for (const std::string& t : texts) v.id_to_text.push_back(t);
    for (int i = 0; i < static_cast<int>(v.id_to_text.size()); ++i) v.text_to_id[v.id_to_text[i]] = i;
    return v;
}

std::string join_tokens(const std::vector<Token>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out += ' ';
        out += tokens[i].text;
    }
    return out;
}

namespace {

struct TemplateSegment {
    bool is_slot = false;
    std::string literal;             // valid when !is_slot
    SecretCategory category{};       // valid when is_slot
};

std::vector<TemplateSegment> parse_template(const std::string& text) {
    std::vector<TemplateSegment> segments;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t open = text.find('{', pos);
        if (open == std::string::npos) {
            segments.push_back({false, text.substr(pos), {}});
            break;
        }
        if (open > pos) segments.push_back({false, text.substr(pos, open - pos), {}});
        size_t close = text.find('}', open);
        if (close == std::string::npos) throw std::invalid_argument("unterminated slot in template: " + text);
        const std::string name = text.substr(open + 1, close - open - 1);
        segments.push_back({true, "", category_from_string(name)});
        pos = close + 1;
    }
    return segments;
}

}  // namespace

AnnotatedCorpus generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_dialogues <= 0) throw std::invalid_argument("num_dialogues must be positive");
    if (spec.templates.empty()) throw std::invalid_argument("no templates");
    if (!(spec.duplicate_rate >= 0.0 && spec.duplicate_rate < 1.0)) {
        throw std::invalid_argument("duplicate_rate must be in [0,1)");
    }

    std::vector<std::vector<TemplateSegment>> parsed;
    parsed.reserve(spec.templates.size());
    for (const std::string& t : spec.templates) {
        auto segments = parse_template(t);
        for (const TemplateSegment& seg : segments) {
            if (seg.is_slot) {
                auto it = spec.secret_pools.find(seg.category);
                if (it == spec.secret_pools.end() || it->second.empty()) {
                    throw std::invalid_argument("empty pool for referenced category: " +
                                                std::string(to_string(seg.category)));
                }
            }
        }
        parsed.push_back(std::move(segments));
    }

    AnnotatedCorpus corpus;
    Rng rng(spec.rng_seed);
    for (int d = 0; d < spec.num_dialogues; ++d) {
        const std::string doc_id = "dlg-" + std::to_string(d);
        if (!corpus.sentences.empty() && rng.uniform01() < spec.duplicate_rate) {
            const size_t src = static_cast<size_t>(rng.below(corpus.sentences.size()));
            const Sentence& original = corpus.sentences[src];
            Sentence copy;
            copy.tokens = original.tokens;
            copy.doc_id = doc_id;
            copy.turn_index = 0;
            // exact repeat carries the same secret spans, re-anchored
            for (const SecretSpan& span : std::vector<SecretSpan>(corpus.secrets)) {
                if (span.doc_id == original.doc_id && span.turn_index == original.turn_index) {
                    SecretSpan dup = span;
                    dup.doc_id = doc_id;
                    dup.turn_index = 0;
                    corpus.secrets.push_back(std::move(dup));
                }
            }
            corpus.sentences.push_back(std::move(copy));
            continue;
        }

        const auto& segments = parsed[rng.below(parsed.size())];
        Sentence s;
        s.doc_id = doc_id;
        s.turn_index = 0;
        std::vector<SecretSpan> spans;
        for (const TemplateSegment& seg : segments) {
            if (!seg.is_slot) {
                for (Token& t : tokenize(seg.literal)) s.tokens.push_back(std::move(t));
                continue;
            }
            const auto& pool = spec.secret_pools.at(seg.category);
            const std::string& secret = pool[rng.below(pool.size())];
            std::vector<Token> secret_tokens = tokenize(secret);
            if (secret_tokens.empty()) throw std::invalid_argument("secret tokenizes to nothing: " + secret);
            SecretSpan span;
            span.doc_id = doc_id;
            span.turn_index = 0;
            span.start = s.tokens.size();
            for (Token& t : secret_tokens) s.tokens.push_back(std::move(t));
            span.end = s.tokens.size();
            std::string joined;
            for (size_t i = span.start; i < span.end; ++i) {
                if (i > span.start) joined += ' ';
                joined += s.tokens[i].text;
            }
            span.secret_id = joined;
            span.category = seg.category;
            spans.push_back(std::move(span));
        }
        if (s.tokens.empty()) throw std::invalid_argument("template produced an empty sentence");
        corpus.sentences.push_back(std::move(s));
        for (SecretSpan& span : spans) corpus.secrets.push_back(std::move(span));
    }

    corpus.vocab = build_vocab(corpus.sentences);
    return corpus;
}

void save_corpus(const AnnotatedCorpus& corpus, std::ostream& out) {
    // secrets grouped per sentence so each line is self-contained
    std::map<std::pair<std::string, int>, std::vector<const SecretSpan*>> by_ref;
    for (const SecretSpan& span : corpus.secrets) {
        by_ref[{span.doc_id, span.turn_index}].push_back(&span);
    }
    for (const Sentence& s : corpus.sentences) {
        json rec;
        rec["doc_id"] = s.doc_id;
        rec["turn_index"] = s.turn_index;
        json tokens = json::array();
        for (const Token& t : s.tokens) tokens.push_back(t.text);
        rec["tokens"] = std::move(tokens);
        auto it = by_ref.find({s.doc_id, s.turn_index});
        if (it != by_ref.end()) {
            json secrets = json::array();
            for (const SecretSpan* span : it->second) {
                secrets.push_back({{"start", span->start},
                                   {"end", span->end},
                                   {"category", to_string(span->category)},
                                   {"secret_id", span->secret_id}});
            }
            rec["secrets"] = std::move(secrets);
        }
        out << rec.dump() << '\n';
    }
}

void save_corpus(const AnnotatedCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    save_corpus(corpus, out);
}

AnnotatedCorpus load_corpus(std::istream& in) {
    AnnotatedCorpus corpus;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
            Sentence s;
            s.doc_id = rec.at("doc_id").get<std::string>();
            s.turn_index = rec.at("turn_index").get<int>();
            for (const auto& t : rec.at("tokens")) {
                const std::string text = t.get<std::string>();
                s.tokens.push_back(text == kMaskText ? Token::mask() : Token::word(text));
            }
            if (s.tokens.empty()) throw std::runtime_error("record has no tokens");
            if (rec.contains("secrets")) {
                for (const auto& sp : rec.at("secrets")) {
                    SecretSpan span;
                    span.doc_id = s.doc_id;
                    span.turn_index = s.turn_index;
                    span.start = sp.at("start").get<size_t>();
                    span.end = sp.at("end").get<size_t>();
                    span.category = category_from_string(sp.at("category").get<std::string>());
                    span.secret_id = sp.at("secret_id").get<std::string>();
                    corpus.secrets.push_back(std::move(span));
                }
            }
            corpus.sentences.push_back(std::move(s));
        } catch (const std::exception& e) {
            throw std::runtime_error("corpus parse error at line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    corpus.vocab = build_vocab(corpus.sentences);
    corpus.validate();
    return corpus;
}

AnnotatedCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
    return load_corpus(in);
}

}  // namespace crt
