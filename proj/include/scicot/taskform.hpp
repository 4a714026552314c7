#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scicot/common.hpp"
#include "scicot/corpus.hpp"
#include "scicot/markers.hpp"
#include "scicot/rationale_store.hpp"

namespace scicot {

// The four training regimes: direct fine-tune, one-stage (rationale and
// answer in one generation), and the two halves of the two-stage method.
enum class Regime { baseline_ft, one_stage, stage1_rationale, stage2_answer };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct TrainingPair {
    std::string example_id;
    Regime regime = Regime::baseline_ft;
    std::string input_text;
    std::string target_text;

    json to_json() const;
    static TrainingPair from_json(const json& j, const std::string& context);
};

bool regime_needs_rationale(Regime r);

// Renders one (input, target) pair. A rationale is required for
// stage1_rationale (as target) and stage2_answer / one_stage (as input or
// target component) and must be auto_cleaned.
TrainingPair format_pair(const McqExample& ex, Regime regime,
                         const std::optional<RationaleRecord>& rationale = std::nullopt);

// Splits a one-stage generation at the last answer marker; no marker means
// the whole text is rationale and the answer is absent.
struct OneStageParse {
    std::string rationale_text;
    std::optional<std::string> answer_text;
};
OneStageParse parse_one_stage(const std::string& output_text);

// The rationale span of a stage-2 input (text after the last rationale
// marker line); nullopt when the marker is absent.
std::optional<std::string> extract_rationale_span(const std::string& stage2_input);

void write_pairs_jsonl(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path);
std::vector<TrainingPair> read_pairs_jsonl(const std::filesystem::path& path);

}  // namespace scicot
