#include "scicot/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>

#include "scicot/seq2seq.hpp"

namespace scicot {

namespace {

const std::array<const char*, 8> kMetals = {"iron",   "copper", "tin",  "lead",
                                            "zinc",   "silver", "gold", "nickel"};

// Key words are short and common so the codeword stays the rare token.
const std::array<const char*, 4> kKeys = {"north", "south", "east", "west"};

// Three-syllable codewords stay the longest word in the stem, which keeps
// the mock teacher's keyword choice pinned to the codeword.
const std::array<const char*, 20> kSyllables = {"bal", "cor", "dun", "fen", "gri", "hol", "jas",
                                                "kel", "mir", "nov", "pra", "qil", "ros", "tam",
                                                "umb", "vex", "wyn", "yor", "zan", "bri"};

// Terse stems keep the encoder input short; past roughly thirty tokens the
// clue-to-option matching stops forming at this training scale.
std::string make_stem(const std::string& key, const std::string& codeword) {
    return "Map " + codeword + " under " + key + ".";
}

McqExample make_example(const std::string& id, Split split, const std::string& key,
                        const std::string& codeword, const std::string& gold_metal,
                        int gold_index, int choices_per_example, DeterministicRng& rng) {
    std::vector<std::string> distractors;
    for (const char* m : kMetals) {
        if (gold_metal != m) {
            distractors.push_back(m);
        }
    }
    rng.shuffle(distractors);
    distractors.resize(static_cast<std::size_t>(choices_per_example - 1));

    McqExample ex;
    ex.id = id;
    ex.split = split;
    ex.stem = make_stem(key, codeword);
    std::size_t d = 0;
    for (int pos = 0; pos < choices_per_example; ++pos) {
        Choice c;
        c.label = std::string(1, static_cast<char>('A' + pos));
        c.source_label = c.label;
        c.text = (pos == gold_index) ? gold_metal : distractors[d++];
        ex.choices.push_back(c);
    }
    ex.answer_key = std::string(1, static_cast<char>('A' + gold_index));
    validate_example(ex, id);
    return ex;
}

std::string pad4(int n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", n);
    return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (train_count <= 0 || dev_count < 0 || test_count <= 0) {
        throw ConfigError("synthetic corpus counts must be positive");
    }
    if (choices_per_example < 2 || choices_per_example > 5) {
        throw ConfigError("choices_per_example must be between 2 and 5");
    }
    const int keys = static_cast<int>(kKeys.size());
    if (train_count % (choices_per_example * keys) != 0) {
        throw ConfigError("train_count must be a multiple of choices_per_example times " +
                          std::to_string(keys) + " key words");
    }
    if (train_count / (choices_per_example * keys) < 2) {
        throw ConfigError("train_count must cover at least two codewords");
    }
}

std::vector<McqExample> generate_synthetic_corpus(const SyntheticSpec& spec) {
    spec.validate();
    DeterministicRng rng(spec.seed);
    const int n_keys = static_cast<int>(kKeys.size());
    const int n_pairs = spec.train_count / spec.choices_per_example;
    const int n_codewords = n_pairs / n_keys;

    // Unique codewords, none colliding with a metal or key word.
    std::vector<std::string> codewords;
    std::set<std::string> seen;
    for (const char* m : kMetals) {
        seen.insert(m);
    }
    for (const char* k : kKeys) {
        seen.insert(k);
    }
    while (static_cast<int>(codewords.size()) < n_codewords) {
        std::string cw;
        for (int s = 0; s < 3; ++s) {
            cw += kSyllables[rng.below(kSyllables.size())];
        }
        if (seen.insert(cw).second) {
            codewords.push_back(cw);
        }
    }

    // Codebook row per codeword: a shuffled draw of metals whose first
    // n_keys entries serve the keys, so one codeword never repeats a metal
    // across keys and the key word alone fixes nothing.
    std::vector<std::vector<std::string>> codebook(codewords.size());
    for (auto& row : codebook) {
        row.assign(kMetals.begin(), kMetals.end());
        rng.shuffle(row);
        row.resize(static_cast<std::size_t>(n_keys));
    }

    auto pair_metal = [&](int p) -> const std::string& {
        return codebook[static_cast<std::size_t>(p / n_keys)][static_cast<std::size_t>(p % n_keys)];
    };
    auto pair_codeword = [&](int p) -> const std::string& {
        return codewords[static_cast<std::size_t>(p / n_keys)];
    };
    auto pair_key = [&](int p) -> std::string { return kKeys[p % n_keys]; };

    // Every (codeword, key) pair is trained once per gold slot, so the
    // label cannot be predicted from the stem; only reading the option
    // list works.
    std::vector<McqExample> out;
    for (int k = 0; k < spec.choices_per_example; ++k) {
        for (int p = 0; p < n_pairs; ++p) {
            int i = k * n_pairs + p;
            int gold = (p + k) % spec.choices_per_example;
            out.push_back(make_example("syn_train_" + pad4(i), Split::train, pair_key(p),
                                       pair_codeword(p), pair_metal(p), gold,
                                       spec.choices_per_example, rng));
        }
    }
    // Dev and test reuse the train pairs with freshly drawn option layouts;
    // the codebook answer stays the same.
    for (int j = 0; j < spec.dev_count; ++j) {
        int p = j % n_pairs;
        int gold = static_cast<int>(rng.below(static_cast<std::size_t>(spec.choices_per_example)));
        out.push_back(make_example("syn_dev_" + pad4(j), Split::dev, pair_key(p), pair_codeword(p),
                                   pair_metal(p), gold, spec.choices_per_example, rng));
    }
    for (int t = 0; t < spec.test_count; ++t) {
        int p = t % n_pairs;
        int gold = static_cast<int>(rng.below(static_cast<std::size_t>(spec.choices_per_example)));
        out.push_back(make_example("syn_test_" + pad4(t), Split::test, pair_key(p),
                                   pair_codeword(p), pair_metal(p), gold,
                                   spec.choices_per_example, rng));
    }
    return out;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticSpec& spec) {
    std::vector<McqExample> all = generate_synthetic_corpus(spec);
    std::filesystem::create_directories(dir);
    for (Split split : {Split::train, Split::dev, Split::test}) {
        std::vector<McqExample> part;
        for (const McqExample& ex : all) {
            if (ex.split == split) {
                part.push_back(ex);
            }
        }
        write_examples_jsonl(part, dir / ("synthetic_" + split_name(split) + ".jsonl"));
    }
}

}  // namespace scicot
