#include "crt/experiment.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "crt/rng.hpp"
#include "json.hpp"

namespace crt {

namespace {

using nlohmann::json;

// Derived-seed tags; every randomized component hangs off the master seed.
enum SeedTag : uint64_t {
    kCorpusSeed = 0x11,
    kTestSeed = 0x12,
    kFreshSeed = 0x13,
    kCanarySeed = 0x14,
    kDegradeSeed = 0x15,
    kModelSeed = 0x16,
    kSgdSeed = 0x17,
    kDpSeed = 0x18,
    kMiSeed = 0x19,
};

uint64_t derive_seed(uint64_t master, uint64_t tag) {
    return splitmix64(master ^ splitmix64(tag));
}

// ------------------------- default synthetic content -------------------------

const std::vector<std::string>& item_fillers() {
    static const std::vector<std::string> items = {
        "laptop",     "charger",   "headphones", "keyboard",  "monitor",  "desk lamp",
        "water bottle", "backpack", "notebook",  "coffee maker", "blender", "toaster",
        "vacuum",     "heater",    "fan",        "router",    "webcam",   "speaker",
        "tablet",     "printer",   "scanner",    "mouse pad", "phone case", "power strip",
    };
    return items;
}

std::vector<std::string> make_name_pool(int count) {
    static const std::vector<std::string> first = {
        "Aaron",  "Bella",  "Carlos", "Diana",  "Elena",  "Felix",  "Gloria", "Hassan",
        "Irene",  "Jonas",  "Karina", "Leopold", "Marcus", "Nadia",  "Oscar",  "Priya",
        "Quentin", "Rosa",  "Samuel", "Tanya",  "Ulrich", "Vera",   "Wesley", "Ximena",
        "Yusuf",  "Zoe",    "Amara",  "Boris",  "Celine", "Dmitri", "Esther", "Farid",
        "Greta",  "Hugo",   "Ingrid", "Javier", "Kenji",  "Luisa",  "Mateo",  "Noor",
    };
    static const std::vector<std::string> last = {
        "Alvarez",  "Becker",   "Castillo", "Dubois",  "Eriksen", "Fontaine", "Garza",
        "Hoffman",  "Ibarra",   "Jensen",   "Kovacs",  "Lindgren", "Moreau",  "Novak",
        "Okafor",   "Petrov",   "Quiroga",  "Romano",  "Schulz",  "Tanaka",   "Ueda",
        "Vargas",   "Weber",    "Xiong",    "Yamamoto", "Zielinski", "Andrade", "Bergman",
        "Costa",    "Deluca",
    };
    std::vector<std::string> pool;
    pool.reserve(count);
    for (int i = 0; i < count; ++i) {
        pool.push_back(first[i % first.size()] + " " + last[(i * 7 + 3) % last.size()]);
    }
    return pool;
}

std::vector<std::string> make_address_pool(int count) {
    static const std::vector<std::string> streets = {
        "Maple",     "Cedar",     "Birch",     "Walnut",    "Willow",     "Aspen",
        "Juniper",   "Magnolia",  "Sycamore",  "Hickory",   "Poplar",     "Chestnut",
        "Spruce",    "Elmwood",   "Rosewood",  "Lakeview",  "Hillcrest",  "Meadow",
        "Harbor",    "Summit",    "Prairie",   "Canyon",    "Ridgeway",   "Fairview",
        "Brookside", "Clearwater", "Stonebridge", "Amberly", "Crestline",  "Dalewood",
        "Eastgate",  "Fernwood",  "Glenview",  "Hollybrook", "Ironwood",  "Jasmine",
        "Kingsley",  "Larkspur",  "Oakmont",   "Pinehurst",
    };
    static const std::vector<std::string> suffixes = {"Street", "Avenue", "Road", "Lane", "Drive", "Court"};
    std::vector<std::string> pool;
    pool.reserve(count);
    for (int i = 0; i < count; ++i) {
        pool.push_back(std::to_string(100 + i) + " " + streets[i % streets.size()] + " " +
                       suffixes[(i / static_cast<int>(streets.size())) % suffixes.size()]);
    }
    return pool;
}

std::vector<std::string> make_phone_pool(int count) {
    std::vector<std::string> pool;
    pool.reserve(count);
    for (int i = 0; i < count; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "555-%03d-%04d", 100 + i, 1000 + (i * 37) % 9000);
        pool.emplace_back(buf);
    }
    return pool;
}

std::vector<std::string> make_six_digit_pool(int count, int leading) {
    std::vector<std::string> pool;
    pool.reserve(count);
    for (int i = 0; i < count; ++i) {
        pool.push_back(std::to_string(leading * 100000 + 91 * i + 137));
    }
    return pool;
}

// Tail phrases give every skeleton combinatorial variety, so the corpus is
// mostly distinct sentences rather than a handful of repeated forms.
const std::vector<std::string>& tail_fillers() {
    static const std::vector<std::string> tails = {
        "right away",          "when you can",        "as soon as possible", "before the weekend",
        "sometime this week",  "for my office",       "for my kitchen",      "for a gift",
        "if that works",       "thanks in advance",   "whenever convenient", "by tomorrow evening",
        "at your convenience", "without extra fees",  "with standard shipping", "with express shipping",
        "if still possible",   "per my last message", "as discussed earlier", "once more please",
        "for the second time", "with gift wrapping",  "in the original box", "with a receipt",
        "for store credit",    "against my balance",  "under my account",    "under warranty",
        "after the holidays",  "during business hours", "over the phone",    "through the portal",
        "via email instead",   "without delay",       "in one package",      "in separate packages",
        "to the front desk",   "to the back door",    "with insurance",      "with tracking enabled",
        "at the listed price", "at the sale price",   "from the new catalog", "from last season",
        "in any color",        "in the large size",   "in the small size",   "as a replacement",
    };
    return tails;
}

std::vector<std::string> default_templates() {
    std::vector<std::string> t = {
        "Hello how are you today ?",
        "Thank you for your help .",
        "Is there anything else I can do for you ?",
        "Sorry for the delay in our response .",
        "Have a great day and thanks for contacting us .",
        "Okay that sounds good to me .",
        "It was a pleasure assisting you today .",
        "Let me know if you need anything else .",
    };
    const auto& items = item_fillers();
    const auto& tails = tail_fillers();

    const std::vector<std::pair<std::string, std::string>> plain = {
        {"I would like to buy a $ITEM", "."},
        {"Can you check if the $ITEM is in stock", "?"},
        {"The $ITEM arrived damaged yesterday", "."},
        {"How much does the $ITEM cost", "?"},
        {"I want to return the $ITEM", "."},
        {"Is the $ITEM available in black", "?"},
        {"My $ITEM stopped working this week", "."},
        {"Please cancel my request for the $ITEM", "."},
        {"Do you offer a warranty on the $ITEM", "?"},
        {"The $ITEM works great thanks a lot", "."},
        {"When will the $ITEM be back in stock", "?"},
        {"What are the shipping options for the $ITEM", "?"},
    };
    const std::vector<std::pair<std::string, std::string>> secret = {
        {"My name is {name} and I need help with my $ITEM", "."},
        {"Hi this is {name} calling about a $ITEM", "."},
        {"You can reach me at {phone} about the $ITEM", "."},
        {"My phone number is {phone} for the $ITEM issue", "."},
        {"Please ship the $ITEM to {address}", "."},
        {"The $ITEM should go to {address}", "."},
        {"My order number for the $ITEM is {order_number}", "."},
        {"The tracking number for my $ITEM is {tracking_number}", "."},
    };

    auto instantiate = [&items](const std::string& skeleton, const std::string& item) {
        std::string out = skeleton;
        const size_t pos = out.find("$ITEM");
        return out.replace(pos, 5, item);
    };
    for (const auto& [skeleton, punct] : plain) {
        for (const std::string& item : items) {
            const std::string body = instantiate(skeleton, item);
            for (const std::string& tail : tails) {
                t.push_back(body + " " + tail + " " + punct);
            }
        }
    }
    for (const auto& [skeleton, punct] : secret) {
        for (const std::string& item : items) {
            const std::string body = instantiate(skeleton, item);
            for (size_t k = 0; k < 20; ++k) {
                t.push_back(body + " " + tails[k] + " " + punct);
            }
        }
    }
    return t;
}

std::string strip_slots(const std::string& text) {
    std::string out;
    size_t pos = 0;
    while (pos < text.size()) {
        const size_t open = text.find('{', pos);
        if (open == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        out += text.substr(pos, open - pos);
        out += ' ';
        const size_t close = text.find('}', open);
        if (close == std::string::npos) break;
        pos = close + 1;
    }
    return out;
}

// ------------------------------ serialization ------------------------------

json spec_to_json(const SyntheticSpec& spec) {
    json pools = json::object();
    for (const auto& [cat, pool] : spec.secret_pools) pools[std::string(to_string(cat))] = pool;
    return {{"num_dialogues", spec.num_dialogues},
            {"duplicate_rate", spec.duplicate_rate},
            {"templates", spec.templates},
            {"secret_pools", std::move(pools)}};
}

json config_to_json(const ExperimentConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["corpus"] = spec_to_json(cfg.corpus_spec);
    doc["fresh"] = spec_to_json(cfg.fresh_spec);
    doc["test_dialogues"] = cfg.test_dialogues;
    doc["gammas"] = cfg.gammas;
    doc["model"] = {{"embed_dim", cfg.model.embed_dim},
                    {"hidden_dim", cfg.model.hidden_dim},
                    {"max_seq_len", cfg.model.max_seq_len}};
    doc["sgd"] = {{"batch_size", cfg.sgd.batch_size}, {"learning_rate", cfg.sgd.learning_rate}};
    doc["dpsgd"] = {{"clip_norm", cfg.dpsgd.clip_norm},
                    {"sample_rate", cfg.dpsgd.sample_rate},
                    {"learning_rate", cfg.dpsgd.learning_rate},
                    {"epochs", cfg.dpsgd.epochs}};
    if (cfg.target_budget) {
        doc["budget"] = {{"epsilon", cfg.target_budget->epsilon}, {"delta", cfg.target_budget->delta}};
    }
    if (cfg.explicit_sigma) doc["sigma"] = *cfg.explicit_sigma;
    if (cfg.standard_rules_path) doc["policy_standard_rules"] = cfg.standard_rules_path->string();
    if (cfg.conservative_rules_path) {
        doc["policy_conservative_rules"] = cfg.conservative_rules_path->string();
    }
    doc["canary"] = {{"template", cfg.canary.template_text},
                     {"num_canaries", cfg.canary.num_canaries},
                     {"insertions_each", cfg.canary.insertions_each},
                     {"randomness_space", cfg.canary.randomness_space}};
    doc["mi"] = {{"category", std::string(to_string(cfg.mi.category))},
                 {"per_class", cfg.mi.per_class},
                 {"groups_per_class", cfg.mi.groups_per_class},
                 {"group_size", cfg.mi.group_size}};
    return doc;
}

std::string hash_config(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(stable_hash64(config_to_json(cfg).dump())));
    return buf;
}

void stamp(json& doc, const ExperimentConfig& cfg) {
    doc["config_hash"] = cfg.config_hash;
    doc["master_seed"] = cfg.seed;
}

void write_json(const json& doc, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

json require_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("missing artifact: " + path.string());
    return json::parse(in);
}

AnnotatedCorpus require_corpus(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw MissingArtifactError("missing artifact: " + path.string());
    }
    return load_corpus(path);
}

double report_delta(const ExperimentConfig& cfg) {
    return cfg.target_budget ? cfg.target_budget->delta : 8e-5;
}

}  // namespace

std::string_view to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::non_private: return "non-private";
        case TrainMode::non_private_redaction: return "non-private+redaction";
        case TrainMode::dpsgd: return "dp-sgd";
        case TrainMode::crt: return "crt";
    }
    throw std::logic_error("unknown TrainMode");
}

TrainMode train_mode_from_string(std::string_view text) {
    if (text == "non-private") return TrainMode::non_private;
    if (text == "non-private+redaction") return TrainMode::non_private_redaction;
    if (text == "dp-sgd") return TrainMode::dpsgd;
    if (text == "crt") return TrainMode::crt;
    throw ConfigError("unknown training mode: " + std::string(text));
}

// Interleaved split keeps the held-out slice distributionally identical to
// the training slice; a block split would let models separate the classes on
// marginal statistics alone.
std::pair<std::vector<std::string>, std::vector<std::string>> split_holdout(
    const std::vector<std::string>& pool) {
    std::vector<std::string> train;
    std::vector<std::string> holdout;
    for (size_t i = 0; i < pool.size(); ++i) {
        (i % 5 == 4 ? holdout : train).push_back(pool[i]);
    }
    return {std::move(train), std::move(holdout)};
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;

    const auto [train_addresses, holdout_addresses] = split_holdout(make_address_pool(240));

    cfg.corpus_spec.num_dialogues = 10000;
    cfg.corpus_spec.duplicate_rate = 0.05;
    cfg.corpus_spec.templates = default_templates();
    cfg.corpus_spec.secret_pools[SecretCategory::name] = make_name_pool(120);
    cfg.corpus_spec.secret_pools[SecretCategory::address] = train_addresses;
    cfg.corpus_spec.secret_pools[SecretCategory::phone] = make_phone_pool(120);
    cfg.corpus_spec.secret_pools[SecretCategory::order_number] = make_six_digit_pool(120, 2);
    cfg.corpus_spec.secret_pools[SecretCategory::tracking_number] = make_six_digit_pool(120, 8);

    cfg.fresh_spec = cfg.corpus_spec;
    cfg.fresh_spec.duplicate_rate = 0.0;
    cfg.fresh_spec.secret_pools[SecretCategory::address] = holdout_addresses;

    cfg.test_dialogues = 1000;
    cfg.gammas = {0.0, 0.1, 0.3, 0.5};

    cfg.sgd.batch_size = 32;
    cfg.sgd.learning_rate = 0.2;
    cfg.dpsgd.clip_norm = 1.0;
    cfg.dpsgd.sample_rate = 0.01;
    cfg.dpsgd.learning_rate = 0.1;
    cfg.dpsgd.epochs = 12;
    cfg.target_budget = PrivacyBudget{1.0, 8e-5};

    cfg.config_hash = hash_config(cfg);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config parse failure: " + std::string(e.what()));
    }

    ExperimentConfig cfg = default_experiment_config();
    try {
        if (doc.contains("seed")) cfg.seed = doc.at("seed").get<uint64_t>();
        if (doc.contains("corpus")) {
            const json& c = doc.at("corpus");
            if (c.contains("num_dialogues")) cfg.corpus_spec.num_dialogues = c.at("num_dialogues").get<int>();
            if (c.contains("duplicate_rate")) cfg.corpus_spec.duplicate_rate = c.at("duplicate_rate").get<double>();
            if (c.contains("templates")) {
                cfg.corpus_spec.templates = c.at("templates").get<std::vector<std::string>>();
                cfg.fresh_spec.templates = cfg.corpus_spec.templates;
            }
            if (c.contains("secret_pools")) {
                cfg.corpus_spec.secret_pools.clear();
                for (const auto& [cat, pool] : c.at("secret_pools").items()) {
                    cfg.corpus_spec.secret_pools[category_from_string(cat)] =
                        pool.get<std::vector<std::string>>();
                }
                // hold out an interleaved fifth of the attacked category
                cfg.fresh_spec.secret_pools = cfg.corpus_spec.secret_pools;
                auto& full = cfg.corpus_spec.secret_pools.at(cfg.mi.category);
                auto [train_slice, holdout_slice] = split_holdout(full);
                cfg.fresh_spec.secret_pools[cfg.mi.category] = std::move(holdout_slice);
                full = std::move(train_slice);
            }
            if (c.contains("test_dialogues")) cfg.test_dialogues = c.at("test_dialogues").get<int>();
            cfg.fresh_spec.num_dialogues = cfg.corpus_spec.num_dialogues;
        }
        if (doc.contains("policy")) {
            const json& p = doc.at("policy");
            const auto base = path.parent_path();
            if (p.contains("standard_rules")) {
                cfg.standard_rules_path = base / p.at("standard_rules").get<std::string>();
            }
            if (p.contains("conservative_rules")) {
                cfg.conservative_rules_path = base / p.at("conservative_rules").get<std::string>();
            }
        }
        if (doc.contains("gammas")) cfg.gammas = doc.at("gammas").get<std::vector<double>>();
        if (doc.contains("model")) {
            const json& m = doc.at("model");
            if (m.contains("embed_dim")) cfg.model.embed_dim = m.at("embed_dim").get<int>();
            if (m.contains("hidden_dim")) cfg.model.hidden_dim = m.at("hidden_dim").get<int>();
            if (m.contains("max_seq_len")) cfg.model.max_seq_len = m.at("max_seq_len").get<int>();
        }
        if (doc.contains("sgd")) {
            const json& s = doc.at("sgd");
            if (s.contains("batch_size")) cfg.sgd.batch_size = s.at("batch_size").get<size_t>();
            if (s.contains("learning_rate")) cfg.sgd.learning_rate = s.at("learning_rate").get<double>();
        }
        if (doc.contains("dpsgd")) {
            const json& d = doc.at("dpsgd");
            if (d.contains("clip_norm")) cfg.dpsgd.clip_norm = d.at("clip_norm").get<double>();
            if (d.contains("sample_rate")) cfg.dpsgd.sample_rate = d.at("sample_rate").get<double>();
            if (d.contains("learning_rate")) cfg.dpsgd.learning_rate = d.at("learning_rate").get<double>();
            if (d.contains("epochs")) cfg.dpsgd.epochs = d.at("epochs").get<int>();
        }
        if (doc.contains("budget") && doc.contains("sigma")) {
            throw ConfigError("config must supply exactly one of budget / sigma");
        }
        if (doc.contains("budget")) {
            cfg.target_budget = PrivacyBudget{doc.at("budget").at("epsilon").get<double>(),
                                              doc.at("budget").at("delta").get<double>()};
            cfg.explicit_sigma.reset();
        }
        if (doc.contains("sigma")) {
            cfg.explicit_sigma = doc.at("sigma").get<double>();
            cfg.target_budget.reset();
        }
        if (doc.contains("canary")) {
            const json& c = doc.at("canary");
            if (c.contains("template")) cfg.canary.template_text = c.at("template").get<std::string>();
            if (c.contains("num_canaries")) cfg.canary.num_canaries = c.at("num_canaries").get<int>();
            if (c.contains("insertions_each")) cfg.canary.insertions_each = c.at("insertions_each").get<int>();
            if (c.contains("randomness_space")) cfg.canary.randomness_space = c.at("randomness_space").get<long>();
        }
        if (doc.contains("mi")) {
            const json& m = doc.at("mi");
            if (m.contains("category")) cfg.mi.category = category_from_string(m.at("category").get<std::string>());
            if (m.contains("per_class")) cfg.mi.per_class = m.at("per_class").get<size_t>();
            if (m.contains("groups_per_class")) cfg.mi.groups_per_class = m.at("groups_per_class").get<size_t>();
            if (m.contains("group_size")) cfg.mi.group_size = m.at("group_size").get<size_t>();
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("invalid config field: " + std::string(e.what()));
    }

    for (double g : cfg.gammas) {
        if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("gamma outside [0,1]");
    }
    if (!cfg.target_budget && !cfg.explicit_sigma) {
        throw ConfigError("config must supply one of budget / sigma");
    }
    cfg.config_hash = hash_config(cfg);
    return cfg;
}

long planned_privacy_steps(const ExperimentConfig& config) {
    return static_cast<long>(config.dpsgd.epochs) *
           static_cast<long>(dpsgd_steps_per_epoch(config.dpsgd.sample_rate));
}

double resolve_sigma(const ExperimentConfig& config) {
    if (config.explicit_sigma) return *config.explicit_sigma;
    return calibrate_sigma(*config.target_budget, config.dpsgd.sample_rate,
                           planned_privacy_steps(config));
}

ExperimentData prepare_data(const ExperimentConfig& config) {
    ExperimentData data;

    SyntheticSpec train_spec = config.corpus_spec;
    train_spec.rng_seed = derive_seed(config.seed, kCorpusSeed);
    AnnotatedCorpus base = generate_synthetic(train_spec);

    CanarySpec canary = config.canary;
    canary.rng_seed = derive_seed(config.seed, kCanarySeed);
    CanaryInsertion inserted = insert_canaries(base, canary);
    data.train_corpus = std::move(inserted.corpus);
    data.canary_values = std::move(inserted.values);

    SyntheticSpec test_spec = config.corpus_spec;
    test_spec.num_dialogues = config.test_dialogues;
    test_spec.duplicate_rate = 0.0;
    test_spec.rng_seed = derive_seed(config.seed, kTestSeed);
    data.test_corpus = generate_synthetic(test_spec);

    SyntheticSpec fresh_spec = config.fresh_spec;
    fresh_spec.rng_seed = derive_seed(config.seed, kFreshSeed);
    data.fresh_corpus = generate_synthetic(fresh_spec);

    // The scoring model must cover holdout secrets, digits and every template
    // literal even when the training draw missed some of them.
    std::vector<std::string> extras;
    for (const SyntheticSpec* spec : {&config.corpus_spec, &config.fresh_spec}) {
        for (const auto& [cat, pool] : spec->secret_pools) {
            for (const std::string& value : pool) {
                for (const Token& t : tokenize(value)) extras.push_back(t.text);
            }
        }
        for (const std::string& tmpl : spec->templates) {
            for (const Token& t : tokenize(strip_slots(tmpl))) extras.push_back(t.text);
        }
    }
    for (char d = '0'; d <= '9'; ++d) extras.push_back(std::string(1, d));
    data.model_vocab = build_vocab(data.train_corpus.sentences, extras);

    data.pi_standard = config.standard_rules_path
                           ? load_policy_rules(*config.standard_rules_path)
                           : make_default_policy(PolicyMode::standard, config.corpus_spec.secret_pools);
    data.pi_conservative =
        config.conservative_rules_path
            ? load_policy_rules(*config.conservative_rules_path)
            : make_default_policy(PolicyMode::conservative, config.corpus_spec.secret_pools);
    return data;
}

std::shared_ptr<const Policy> make_degraded_pi(const ExperimentConfig& config,
                                               const ExperimentData& data, double gamma) {
    return std::make_shared<DegradedPolicy>(data.pi_standard, gamma,
                                            derive_seed(config.seed, kDegradeSeed));
}

CellResult run_cell(const ExperimentConfig& config, const ExperimentData& data,
                    TrainMode mode, double gamma) {
    const Vocab& vocab = data.model_vocab;
    TinyLMConfig model_config;
    model_config.vocab_size = vocab.size();
    model_config.embed_dim = config.model.embed_dim;
    model_config.hidden_dim = config.model.hidden_dim;
    model_config.max_seq_len = config.model.max_seq_len;
    model_config.init_seed = derive_seed(config.seed, kModelSeed);
    TinyLM model(model_config);

    SgdConfig sgd = config.sgd;
    sgd.rng_seed = derive_seed(config.seed, kSgdSeed);
    DpSgdConfig dp = config.dpsgd;
    dp.rng_seed = derive_seed(config.seed, kDpSeed);

    const bool is_dp = mode == TrainMode::dpsgd || mode == TrainMode::crt;
    dp.noise_multiplier = is_dp ? resolve_sigma(config) : 0.0;

    const auto degraded = make_degraded_pi(config, data, gamma);
    const DedupedCorpus deduped = dedup(data.train_corpus);
    const double recall_pi = evaluate_policy(*degraded, deduped.corpus).recall;
    const double recall_pi_c = evaluate_policy(*data.pi_conservative, deduped.corpus).recall;

    std::vector<std::vector<int>> pub;
    std::vector<std::vector<int>> pri;
    switch (mode) {
        case TrainMode::non_private:
            pub = encode_sentences(data.train_corpus.sentences, vocab);
            break;
        case TrainMode::non_private_redaction: {
            const RedactedCorpus redacted = redact(deduped, *degraded);
            pub = encode_sentences(redacted.corpus.sentences, vocab);
            break;
        }
        case TrainMode::dpsgd:
            pri = encode_sentences(data.train_corpus.sentences, vocab);
            break;
        case TrainMode::crt: {
            const PartitionedCorpus part = partition(redact(deduped, *degraded), *data.pi_conservative);
            pub = encode_sentences(part.public_set, vocab);
            pri = encode_sentences(part.private_set, vocab);
            break;
        }
    }

    TrainLog log = crt_train(model, pub, pri, sgd, dp);

    SweepCell cell;
    cell.mode = mode;
    cell.gamma = gamma;
    cell.sigma = dp.noise_multiplier;
    cell.public_count = pub.size();
    cell.private_count = pri.size();
    cell.privacy_steps = log.total_privacy_steps();
    cell.recall_pi = recall_pi;
    cell.recall_pi_c = recall_pi_c;

    cell.ppl = perplexity(model, encode_sentences(data.test_corpus.sentences, vocab));

    CanarySpec canary = config.canary;
    canary.rng_seed = derive_seed(config.seed, kCanarySeed);
    cell.max_exposure = canary_exposure(model, vocab, data.canary_values, canary).max_exposure;

    const uint64_t mi_seed = derive_seed(config.seed, kMiSeed);
    cell.mi_accuracy = mi_attack(model, build_mi_dataset(data.train_corpus, data.fresh_corpus, vocab,
                                                         config.mi.category, config.mi.per_class, mi_seed));
    cell.group_mi_accuracy =
        group_mi_attack(model, build_group_mi_dataset(data.train_corpus, data.fresh_corpus, vocab,
                                                      config.mi.category, config.mi.groups_per_class,
                                                      config.mi.group_size, mi_seed + 1));

    const double delta = report_delta(config);
    cell.delta = delta;
    if (is_dp) {
        const MechanismSpec mech{cell.sigma, dp.sample_rate, static_cast<long>(cell.privacy_steps)};
        cell.eps_base = dp_epsilon(mech, delta);
        if (mode == TrainMode::crt) {
            const double measured_gamma = 1.0 - recall_pi;
            const double delta2 = 1.0 - recall_pi_c;
            cell.eps_bayes = bayesian_amplify({cell.eps_base, delta}, measured_gamma, delta2).epsilon;
            cell.eps_recal = delta2 < delta ? recalibrate_epsilon(mech, measured_gamma, delta2, delta)
                                            : std::numeric_limits<double>::infinity();
        } else {
            cell.eps_bayes = cell.eps_base;  // no redaction: gamma = 1 identity
            cell.eps_recal = cell.eps_base;
        }
    } else {
        const double inf = std::numeric_limits<double>::infinity();
        cell.eps_base = inf;
        cell.eps_bayes = mode == TrainMode::non_private_redaction && recall_pi == 1.0 ? 0.0 : inf;
        cell.eps_recal = cell.eps_bayes;
    }

    return {cell, std::move(model), std::move(log)};
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const ExperimentConfig& config,
                     const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# config_hash=" << config.config_hash << " master_seed=" << config.seed << '\n';
    out << "mode,gamma,sigma,public_count,private_count,privacy_steps,ppl,max_exposure,"
           "mi_accuracy,group_mi_accuracy,recall_pi,recall_pi_c,eps_base,eps_bayes,eps_recal,delta\n";
    for (const SweepCell& c : cells) {
        out << to_string(c.mode) << ',' << c.gamma << ',' << c.sigma << ',' << c.public_count << ','
            << c.private_count << ',' << c.privacy_steps << ',' << c.ppl << ',' << c.max_exposure
            << ',' << c.mi_accuracy << ',' << c.group_mi_accuracy << ',' << c.recall_pi << ','
            << c.recall_pi_c << ',' << c.eps_base << ',' << c.eps_bayes << ',' << c.eps_recal << ','
            << c.delta << '\n';
    }
}

// ------------------------------- CLI stages -------------------------------

void run_generate(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const ExperimentData data = prepare_data(config);
    save_corpus(data.train_corpus, out_dir / "corpus.jsonl");
    save_corpus(data.test_corpus, out_dir / "test_corpus.jsonl");
    json canaries;
    canaries["values"] = data.canary_values;
    stamp(canaries, config);
    write_json(canaries, out_dir / "canaries.json");
}

void run_preprocess(const ExperimentConfig& config, const std::filesystem::path& out_dir, double gamma) {
    const AnnotatedCorpus corpus = require_corpus(out_dir / "corpus.jsonl");
    ExperimentData data = prepare_data(config);  // policies + vocab derive from config
    const auto degraded = make_degraded_pi(config, data, gamma);

    const DedupedCorpus deduped = dedup(corpus);
    const PartitionedCorpus part = partition(redact(deduped, *degraded), *data.pi_conservative);

    AnnotatedCorpus public_corpus;
    public_corpus.sentences = part.public_set;
    public_corpus.vocab = build_vocab(public_corpus.sentences);
    save_corpus(public_corpus, out_dir / "public.jsonl");

    AnnotatedCorpus private_corpus;
    private_corpus.sentences = part.private_set;
    for (const SecretSpan& span : part.secrets) {
        for (const Sentence& s : private_corpus.sentences) {
            if (s.doc_id == span.doc_id && s.turn_index == span.turn_index) {
                private_corpus.secrets.push_back(span);
                break;
            }
        }
    }
    private_corpus.vocab = build_vocab(private_corpus.sentences);
    save_corpus(private_corpus, out_dir / "private.jsonl");

    const PolicyQuality pi_quality = evaluate_policy(*degraded, deduped.corpus);
    const PolicyQuality pic_quality = evaluate_policy(*data.pi_conservative, deduped.corpus);

    size_t public_secret_tokens = 0;
    for (const SecretSpan& span : part.secrets) {
        for (size_t i = 0; i < part.public_set.size(); ++i) {
            const Sentence& s = part.public_set[i];
            if (s.doc_id == span.doc_id && s.turn_index == span.turn_index) {
                public_secret_tokens += span.end - span.start;
            }
        }
    }

    json report;
    report["gamma"] = gamma;
    report["duplicates_replaced"] = part.duplicates_replaced;
    report["spans_redacted"] = part.spans_redacted;
    report["public_sentences"] = part.public_set.size();
    report["private_sentences"] = part.private_set.size();
    report["recall_pi"] = pi_quality.recall;
    report["precision_pi"] = pi_quality.precision;
    report["recall_pi_c"] = pic_quality.recall;
    report["ground_truth_secret_tokens_in_public"] = public_secret_tokens;
    stamp(report, config);
    write_json(report, out_dir / "preprocess_report.json");
}

void run_train(const ExperimentConfig& config, const std::filesystem::path& out_dir,
               TrainMode mode, double gamma) {
    const AnnotatedCorpus corpus = require_corpus(out_dir / "corpus.jsonl");
    ExperimentData data = prepare_data(config);
    data.train_corpus = corpus;  // train on the persisted artifact

    if (mode == TrainMode::crt) {
        // the partition artifacts must exist and match the requested gamma
        const json report = require_json(out_dir / "preprocess_report.json");
        if (report.at("gamma").get<double>() != gamma) {
            throw MissingArtifactError("preprocess artifacts were built for gamma=" +
                                       std::to_string(report.at("gamma").get<double>()));
        }
        (void)require_corpus(out_dir / "public.jsonl");
        (void)require_corpus(out_dir / "private.jsonl");
    }

    CellResult result = run_cell(config, data, mode, gamma);

    result.model.save(out_dir / "model.json", data.model_vocab);
    result.log.write_csv(out_dir / "train_log.csv");

    json meta;
    meta["mode"] = std::string(to_string(mode));
    meta["gamma"] = gamma;
    meta["sigma"] = result.cell.sigma;
    meta["privacy_steps"] = result.cell.privacy_steps;
    meta["public_count"] = result.cell.public_count;
    meta["private_count"] = result.cell.private_count;
    meta["ppl"] = result.cell.ppl;
    stamp(meta, config);
    write_json(meta, out_dir / "train_meta.json");
}

void run_account(const ExperimentConfig& config, const std::filesystem::path& out_dir, double gamma) {
    const AnnotatedCorpus corpus = require_corpus(out_dir / "corpus.jsonl");
    ExperimentData data = prepare_data(config);
    const auto degraded = make_degraded_pi(config, data, gamma);
    const DedupedCorpus deduped = dedup(corpus);

    double sigma = 0.0;
    long steps = 0;
    const std::filesystem::path meta_path = out_dir / "train_meta.json";
    if (std::filesystem::exists(meta_path)) {
        const json meta = require_json(meta_path);
        sigma = meta.at("sigma").get<double>();
        steps = meta.at("privacy_steps").get<long>();
    }
    if (sigma == 0.0 || steps == 0) {
        sigma = resolve_sigma(config);
        steps = planned_privacy_steps(config);
    }

    const double delta = report_delta(config);
    const MechanismSpec mech{sigma, config.dpsgd.sample_rate, steps};
    const std::vector<SecretOutcome> outcomes = analyze_secrets(deduped, *degraded, *data.pi_conservative);
    const double measured_gamma = evaluate_policy(*degraded, deduped.corpus).false_negative_rate;
    const double delta2 = evaluate_policy(*data.pi_conservative, deduped.corpus).false_negative_rate;

    const ConfidentialityReport report =
        build_confidentiality_report(mech, delta, outcomes, measured_gamma, delta2);

    json doc = json::parse(report_to_json(report));
    // amplification of the nominal budget at the nominal gamma
    const PrivacyBudget base{dp_epsilon(mech, delta), delta};
    const PrivacyBudget nominal = bayesian_amplify(base, gamma, 0.0);
    doc["closed_form"] = {{"epsilon_base", base.epsilon},
                          {"gamma", gamma},
                          {"epsilon_amplified", nominal.epsilon},
                          {"delta_amplified", nominal.delta}};
    stamp(doc, config);
    write_json(doc, out_dir / "accountant_report.json");
}

void run_attack_canary(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    const json canaries = require_json(out_dir / "canaries.json");
    if (!std::filesystem::exists(out_dir / "model.json")) {
        throw MissingArtifactError("missing artifact: " + (out_dir / "model.json").string());
    }
    auto [model, vocab] = TinyLM::load(out_dir / "model.json");

    CanarySpec spec = config.canary;
    spec.rng_seed = derive_seed(config.seed, kCanarySeed);
    const std::vector<std::string> values = canaries.at("values").get<std::vector<std::string>>();
    const ExposureResult result = canary_exposure(model, vocab, values, spec);

    std::ofstream out(out_dir / "canary_attack.csv");
    if (!out) throw std::runtime_error("cannot write canary_attack.csv");
    out << "# config_hash=" << config.config_hash << " master_seed=" << config.seed
        << " max_exposure=" << result.max_exposure << '\n';
    out << "value,rank,exposure\n";
    for (const ExposureEntry& e : result.per_canary) {
        out << e.value << ',' << e.rank << ',' << e.exposure << '\n';
    }
}

void run_attack_mi(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    const AnnotatedCorpus corpus = require_corpus(out_dir / "corpus.jsonl");
    if (!std::filesystem::exists(out_dir / "model.json")) {
        throw MissingArtifactError("missing artifact: " + (out_dir / "model.json").string());
    }
    auto [model, vocab] = TinyLM::load(out_dir / "model.json");
    const json meta = require_json(out_dir / "train_meta.json");
    const double gamma = meta.at("gamma").get<double>();

    SyntheticSpec fresh_spec = config.fresh_spec;
    fresh_spec.rng_seed = derive_seed(config.seed, kFreshSeed);
    const AnnotatedCorpus fresh = generate_synthetic(fresh_spec);

    const uint64_t mi_seed = derive_seed(config.seed, kMiSeed);
    const double individual = mi_attack(
        model, build_mi_dataset(corpus, fresh, vocab, config.mi.category, config.mi.per_class, mi_seed));
    const double grouped = group_mi_attack(
        model, build_group_mi_dataset(corpus, fresh, vocab, config.mi.category,
                                      config.mi.groups_per_class, config.mi.group_size, mi_seed + 1));

    std::ofstream out(out_dir / "mi_attack.csv");
    if (!out) throw std::runtime_error("cannot write mi_attack.csv");
    out << "# config_hash=" << config.config_hash << " master_seed=" << config.seed << '\n';
    out << "attack,gamma,accuracy\n";
    out << "individual," << gamma << ',' << individual << '\n';
    out << "group," << gamma << ',' << grouped << '\n';
}

void run_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const ExperimentData data = prepare_data(config);

    std::vector<SweepCell> cells;
    // non-private and dp-sgd ignore gamma; train them once and replicate rows
    std::optional<SweepCell> non_private_cell;
    std::optional<SweepCell> dpsgd_cell;
    for (TrainMode mode : {TrainMode::non_private, TrainMode::non_private_redaction,
                           TrainMode::dpsgd, TrainMode::crt}) {
        for (double gamma : config.gammas) {
            if (mode == TrainMode::non_private && non_private_cell) {
                SweepCell copy = *non_private_cell;
                copy.gamma = gamma;
                cells.push_back(copy);
                continue;
            }
            if (mode == TrainMode::dpsgd && dpsgd_cell) {
                SweepCell copy = *dpsgd_cell;
                copy.gamma = gamma;
                cells.push_back(copy);
                continue;
            }
            CellResult result = run_cell(config, data, mode, gamma);
            if (mode == TrainMode::non_private) non_private_cell = result.cell;
            if (mode == TrainMode::dpsgd) dpsgd_cell = result.cell;
            cells.push_back(result.cell);
        }
    }
    write_sweep_csv(cells, config, out_dir / "sweep.csv");
}

}  // namespace crt
