#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scicot/common.hpp"
#include "scicot/seq2seq.hpp"
#include "scicot/taskform.hpp"
#include "scicot/tokenizer.hpp"

namespace scicot {

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Decoupled decay applied to weight matrices and embeddings only; layer
    // norm gains and bias rows are exempt.
    double weight_decay = 0.0;

    json to_json() const;
    static AdamSettings from_json(const json& j);
};

struct ExternalBackendSettings {
    // Run as `train_command <pairs.jsonl> <model_dir>`; must exit 0 and leave
    // <model_dir>/service.json behind unless generate_command is given here.
    std::string train_command;
    std::string generate_command;

    json to_json() const;
    static ExternalBackendSettings from_json(const json& j);
};

struct TrainerConfig {
    std::uint64_t seed = 0;
    int epochs = 150;
    int batch_size = 8;
    double learning_rate = 3e-3;
    double clip_norm = 1.0;
    // Probability of masking each encoder input token to padding during
    // training steps; generation and scoring always see the full input.
    double input_dropout = 0.0;
    int max_input_tokens = 96;
    int max_target_tokens = 48;
    std::string backend = "builtin";      // builtin | external
    std::string tokenizer = "whitespace";
    ModelDims model;
    AdamSettings adam;
    ExternalBackendSettings external;

    void validate() const;
    json to_json() const;
    // Rejects unknown keys so config typos fail loudly instead of training
    // with silently ignored settings.
    static TrainerConfig from_json(const json& j);
};

struct TrainMetrics {
    std::vector<double> epoch_mean_loss;
    std::size_t truncated_inputs = 0;
    std::size_t truncated_targets = 0;
    std::size_t floored_positions = 0;
    std::size_t example_count = 0;
    double train_seconds = 0.0;

    json to_json() const;
    static TrainMetrics from_json(const json& j);
};

// Reference to a trained model persisted under dir. The fingerprint binds
// the handle to the exact config and training pairs that produced it.
struct ModelHandle {
    std::filesystem::path dir;
    Regime regime = Regime::baseline_ft;
    std::string backend = "builtin";
    std::string fingerprint;
    TrainMetrics metrics;
};

struct GenerateOptions {
    std::string strategy = "greedy";  // greedy | beam
    int beam_width = 4;
};

struct GenerateResult {
    std::string text;
    bool input_truncated = false;
};

std::string compute_fingerprint(const TrainerConfig& config, Regime regime,
                                const std::vector<TrainingPair>& pairs);

ModelHandle train(const std::vector<TrainingPair>& pairs, const TrainerConfig& config,
                  const std::filesystem::path& out_dir);

ModelHandle load_handle(const std::filesystem::path& dir);

// Read-only once the handle is trained; safe to call from parallel workers.
GenerateResult generate(const ModelHandle& handle, const std::string& input,
                        const GenerateOptions& options = {});

}  // namespace scicot
