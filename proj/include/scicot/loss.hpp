#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "scicot/common.hpp"

namespace scicot {

struct CrossEntropyOptions {
    double prob_floor = 1e-12;    // guards log of a zero probability
    double sum_tolerance = 1e-6;  // each distribution must sum to 1 within this
    std::optional<int> pad_token; // positions with this target are excluded
    bool validate_sums = true;
};

struct CrossEntropyValue {
    double value = 0.0;       // mean of -log p(target) over counted positions
    std::size_t positions = 0;
    std::size_t floored = 0;  // how often the probability floor fired
};

// Mean token-level cross entropy over target positions. This is the one
// loss routine in the project; the rationale-generation and answer-inference
// stages differ only in the data fed to it, and the trainer's loss node
// calls it for its forward value.
CrossEntropyValue token_cross_entropy(std::span<const std::vector<double>> predicted_distributions,
                                      std::span<const int> target_tokens,
                                      const CrossEntropyOptions& options = {});

// Batch reduction convention: mean over examples of the per-example
// mean-over-positions loss.
double batch_mean_loss(std::span<const CrossEntropyValue> per_example);

}  // namespace scicot
