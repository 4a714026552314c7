#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scicot/corpus.hpp"
#include "scicot/pipeline.hpp"

namespace scicot {

// Answer extraction cascade: (1) leading label token ("B", "B)", "(B)",
// "B."), (2) normalized exact match against a choice text, (3) unique
// token-level containment of a choice text. Ambiguity at any level yields
// nullopt, which scores as incorrect.
std::optional<std::string> extract_answer(const std::string& output_text,
                                          const std::vector<Choice>& choices);

struct PredictionRow {
    std::string id;
    std::string raw_output;
    std::optional<std::string> extracted;
    std::string gold;
    bool correct = false;

    json to_json() const;
    static PredictionRow from_json(const json& j, const std::string& context);
};

struct ScoredEval {
    std::vector<PredictionRow> rows;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;  // correct / total, exactly

    json to_json() const;
    static ScoredEval from_json(const json& j);
};

// Aligns predictions with examples by id; every example needs exactly one
// prediction and stray prediction ids are rejected.
ScoredEval score_predictions(const std::vector<Prediction>& predictions,
                             const std::vector<McqExample>& examples);

void write_prediction_rows_jsonl(const ScoredEval& eval, const std::filesystem::path& path);

// One line of a results table. Reference rows carry published numbers and
// are never computed; computed cells may only land on non-reference rows.
struct ReportRow {
    std::string label;
    std::string size_label;
    std::map<std::string, double> accuracy;  // dataset id -> fraction in [0,1]
    bool reference = false;
    std::string source_tag;  // non-empty for reference rows
};

struct AblationCell {
    std::string dataset_id;
    std::string fraction;  // "1/8", "1/4", "1/2", "1/1"
    std::size_t train_count = 0;
    std::string regime;  // baseline_ft | scicot
    std::optional<double> accuracy;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::string error;  // non-empty when this cell failed; the sweep continues
    std::string run_id;
    bool reused = false;  // satisfied by an existing run with a matching run id
};

json ablation_cell_to_json(const AblationCell& cell);
AblationCell ablation_cell_from_json(const json& j);

struct EvalReport {
    std::vector<ReportRow> rows;
    std::vector<AblationCell> ablation;
    std::map<std::string, ScoredEval> regime_results;

    void add_reference_row(const std::string& label, const std::string& size_label,
                           const std::map<std::string, double>& accuracy,
                           const std::string& source_tag);
    // Throws DataError when the target row is a reference row.
    void set_computed(const std::string& label, const std::string& size_label,
                      const std::string& dataset_id, double accuracy);

    json to_json() const;
    static EvalReport from_json(const json& j);
};

// The published large-model rows used for comparison, stored as literals.
std::vector<ReportRow> published_reference_rows();

struct AblateOptions {
    std::vector<std::string> fractions = {"1/8", "1/4", "1/2", "1/1"};
    std::vector<std::string> regimes = {"baseline_ft", "scicot"};
    int predict_workers = 1;
};

// Runs one pipeline run per (fraction, regime) cell under run_root, scoring
// each on the configured eval split. A failing cell records its error and
// the sweep continues.
std::vector<AblationCell> ablate_data_size(const std::vector<McqExample>& dataset,
                                           const std::vector<RationaleRecord>& rationales,
                                           const PipelineConfig& base_config,
                                           const std::filesystem::path& run_root,
                                           const AblateOptions& options = {});

enum class ReportFormat { markdown, csv, json };
ReportFormat report_format_from_name(const std::string& name);

// markdown rounds to two-decimal percent cells; csv and json are lossless.
std::string render_report(const EvalReport& report, ReportFormat format);
EvalReport parse_report_csv(const std::string& text);

}  // namespace scicot
