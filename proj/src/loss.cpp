#include "scicot/loss.hpp"

#include <cmath>

namespace scicot {

CrossEntropyValue token_cross_entropy(std::span<const std::vector<double>> predicted_distributions,
                                      std::span<const int> target_tokens,
                                      const CrossEntropyOptions& options) {
    if (predicted_distributions.size() != target_tokens.size()) {
        throw DataError("token_cross_entropy: " + std::to_string(predicted_distributions.size()) +
                        " distributions vs " + std::to_string(target_tokens.size()) + " targets");
    }
    if (predicted_distributions.empty()) {
        throw DataError("token_cross_entropy: need at least one position");
    }

    CrossEntropyValue out;
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted_distributions.size(); ++i) {
        int target = target_tokens[i];
        if (options.pad_token && target == *options.pad_token) continue;
        const auto& dist = predicted_distributions[i];
        if (target < 0 || static_cast<std::size_t>(target) >= dist.size()) {
            throw DataError("token_cross_entropy: target " + std::to_string(target) +
                            " outside vocabulary of size " + std::to_string(dist.size()) +
                            " at position " + std::to_string(i));
        }
        if (options.validate_sums) {
            double total = 0.0;
            for (double p : dist) total += p;
            if (std::abs(total - 1.0) > options.sum_tolerance) {
                throw DataError("token_cross_entropy: distribution at position " +
                                std::to_string(i) + " sums to " + std::to_string(total));
            }
        }
        double p = dist[static_cast<std::size_t>(target)];
        if (p < options.prob_floor) {
            p = options.prob_floor;
            ++out.floored;
        }
        sum += -std::log(p);
        ++out.positions;
    }
    if (out.positions == 0) {
        throw DataError("token_cross_entropy: all positions were padding");
    }
    out.value = sum / static_cast<double>(out.positions);
    return out;
}

double batch_mean_loss(std::span<const CrossEntropyValue> per_example) {
    if (per_example.empty()) {
        throw DataError("batch_mean_loss: empty batch");
    }
    double sum = 0.0;
    for (const auto& v : per_example) sum += v.value;
    return sum / static_cast<double>(per_example.size());
}

}  // namespace scicot
