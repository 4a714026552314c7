#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scicot/corpus.hpp"

namespace scicot {

// Deterministic cipher corpus for the signal-separation check. Every stem
// asks which metal a codeword stands for under one of four key words; the
// answer comes from a fixed (codeword, key) table, and the four keys of a
// codeword map to four different metals. The table entry is a conjunction
// of two stem tokens, so no single-token shortcut (codeword alone or key
// alone) determines the metal. Each (codeword, key) pair is trained once
// per option slot, so the gold label cannot be predicted from the stem
// either; it is recoverable only by locating the pair's metal in the
// option list. Rationales name that metal explicitly, which reduces the
// second stage to copy-and-match, while answer-only supervision has to
// resolve the conjunction and the option lookup in a single pass. Dev and
// test reuse the train pairs with freshly drawn option layouts.
struct SyntheticSpec {
    std::uint64_t seed = 7;
    int train_count = 128;
    int dev_count = 8;
    int test_count = 48;
    int choices_per_example = 4;

    void validate() const;
};

std::vector<McqExample> generate_synthetic_corpus(const SyntheticSpec& spec = {});

// Writes synthetic_train.jsonl / synthetic_dev.jsonl / synthetic_test.jsonl.
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticSpec& spec = {});

}  // namespace scicot
