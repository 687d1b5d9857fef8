#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "crt/corpus.hpp"

namespace crt {

struct LabeledSpan {
    size_t start = 0;
    size_t end = 0;  // exclusive
    SecretCategory category = SecretCategory::other;

    bool operator==(const LabeledSpan&) const = default;
};

// Token-labeling screening policy. label() returns maximal contiguous spans
// of flagged tokens, sorted and disjoint, never covering <MASK> tokens.
class Policy {
  public:
    virtual ~Policy() = default;
    virtual std::vector<LabeledSpan> label(const Sentence& sentence) const = 0;
};

enum class PolicyMode { standard, conservative };

struct PolicyPattern {
    SecretCategory category = SecretCategory::other;
    std::string regex_text;
};

// Regex + dictionary rule set. Conservative mode layers two extra built-in
// rules on top of the standard ones (any digit-bearing token; any capitalized
// token outside a closed function-word list), so its match set is a superset
// of the standard one on every input.
class PolicyRuleSet : public Policy {
  public:
    PolicyRuleSet(PolicyMode mode,
                  std::vector<PolicyPattern> patterns,
                  std::vector<std::pair<SecretCategory, std::string>> dictionary);

    std::vector<LabeledSpan> label(const Sentence& sentence) const override;

    PolicyMode mode() const { return mode_; }
    const std::vector<PolicyPattern>& patterns() const { return patterns_; }

  private:
    struct DictEntry {
        SecretCategory category;
        std::vector<std::string> tokens;
    };

    PolicyMode mode_;
    std::vector<PolicyPattern> patterns_;
    std::vector<std::regex> compiled_;
    std::vector<DictEntry> dictionary_;
    std::set<std::string> function_words_;
};

// Simulates a policy with false-negative rate gamma: every unique secret is
// either always detected or always dropped, decided by one seeded coin per
// secret_id (u < gamma drops). Drop sets are nested across gamma for a fixed
// seed.
class DegradedPolicy : public Policy {
  public:
    DegradedPolicy(std::shared_ptr<const Policy> base, double gamma, uint64_t rng_seed);

    std::vector<LabeledSpan> label(const Sentence& sentence) const override;

    bool drops(std::string_view secret_id) const;
    // The derived drop set: unique base-detectable secrets that the coin removed.
    std::set<std::string> dropped_secrets(const AnnotatedCorpus& corpus) const;

    double gamma() const { return gamma_; }

  private:
    std::shared_ptr<const Policy> base_;
    double gamma_;
    uint64_t seed_;
};

DegradedPolicy degrade(std::shared_ptr<const Policy> base, double gamma, uint64_t rng_seed);

struct PolicyQuality {
    double recall = 0.0;
    double precision = 0.0;
    double false_negative_rate = 0.0;  // 1 - recall; gamma for pi, delta2 for pi_c
};

// Recall counts a unique secret only when every occurrence is fully covered;
// precision is the fraction of labeled tokens lying inside some true span.
PolicyQuality evaluate_policy(const Policy& policy, const AnnotatedCorpus& corpus);

// Rule files: {"mode": "standard"|"conservative", "patterns": [{"category":..., "regex":...}],
// "dictionary": {"<category>": ["literal", ...]}, "dictionary_files": {"<category>": "path"}}.
std::shared_ptr<PolicyRuleSet> load_policy_rules(const std::filesystem::path& path);

// Built-in rules matching the synthetic generator's secret shapes: phone
// numbers, six-digit ids, email-shaped tokens, single digits (canary slots),
// plus dictionary entries for the given name/address pools.
std::shared_ptr<PolicyRuleSet> make_default_policy(
    PolicyMode mode,
    const std::map<SecretCategory, std::vector<std::string>>& dictionary_pools);

}  // namespace crt
