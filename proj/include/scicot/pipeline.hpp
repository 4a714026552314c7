#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scicot/corpus.hpp"
#include "scicot/rationale_store.hpp"
#include "scicot/taskform.hpp"
#include "scicot/teacher.hpp"
#include "scicot/trainer.hpp"

namespace scicot {

struct PipelineConfig {
    std::string dataset_id = "dataset";
    SubsetSpec subset;                      // applied to the train split
    TrainerConfig trainer;
    PromptTemplate prompt;
    CleaningRules cleaning;                 // also applied to student generations
    GenerateOptions decode;                 // student rationale + answer decoding
    std::string stage2_source = "student";  // student | teacher
    std::string eval_split = "test";
    int stage1_workers = 1;

    void validate() const;
    json to_json() const;
    static PipelineConfig from_json(const json& j);
};

// Replayable record of one run: every effective setting plus a digest for
// every artifact the run wrote. Artifact paths are relative to the run
// directory so identical runs in different directories compare equal.
struct RunManifest {
    std::string run_id;
    std::string regime;  // baseline_ft | one_stage | scicot
    std::string dataset_id;
    json config;
    std::string template_hash;
    std::map<std::string, std::string> model_fingerprints;
    std::map<std::string, std::string> artifacts;  // relative path -> sha256
    json counts;
    json timings_seconds;
    std::int64_t created_at_unix = 0;

    json to_json() const;
    static RunManifest from_json(const json& j);
};

void write_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir);
RunManifest read_manifest(const std::filesystem::path& run_dir);
// Re-hashes every artifact against its recorded digest.
void validate_manifest(const std::filesystem::path& run_dir);
// Manifest equality for determinism checks ignores wall-clock fields.
bool manifests_equal_modulo_timestamps(const RunManifest& a, const RunManifest& b);

std::string compute_run_id(const std::string& regime, const std::vector<McqExample>& dataset,
                           const PipelineConfig& config);

struct RunResult {
    std::filesystem::path run_dir;
    RunManifest manifest;
    std::optional<ModelHandle> model;   // baseline_ft / one_stage
    std::optional<ModelHandle> stage1;  // scicot
    std::optional<ModelHandle> stage2;  // scicot
};

RunResult run_baseline(const std::vector<McqExample>& dataset, const PipelineConfig& config,
                       const std::filesystem::path& run_dir);

// Requires an auto_cleaned teacher rationale for every subsampled train id.
RunResult run_one_stage(const std::vector<McqExample>& dataset,
                        const std::vector<RationaleRecord>& rationales,
                        const PipelineConfig& config, const std::filesystem::path& run_dir);

// Stage 1 trains on teacher rationales, then generates a student rationale
// per train example; stage 2 trains on those generations (stage2_source
// "teacher" switches the inputs back to teacher rationales). Examples whose
// stage-1 generation fails cleaning are dropped from stage-2 training only.
RunResult run_scicot(const std::vector<McqExample>& dataset,
                     const std::vector<RationaleRecord>& rationales, const PipelineConfig& config,
                     const std::filesystem::path& run_dir);

// Reloads a finished run from its directory (manifest + model handles).
RunResult load_run(const std::filesystem::path& run_dir);

struct Prediction {
    std::string example_id;
    std::string raw_output;                 // answer text as generated
    std::optional<std::string> rationale;   // two-stage intermediate
};

Prediction predict(const RunResult& run, const McqExample& example);
std::vector<Prediction> predict_examples(const RunResult& run,
                                         const std::vector<McqExample>& examples, int workers = 1);

void write_predictions_jsonl(const std::vector<Prediction>& predictions,
                             const std::filesystem::path& path);
std::vector<Prediction> read_predictions_jsonl(const std::filesystem::path& path);

// Runs predictions over the configured eval split, records the artifact in
// the manifest, and returns the rows.
std::vector<Prediction> predict_eval_split(RunResult& run, const std::vector<McqExample>& dataset,
                                           int workers = 1);

// Reads the persisted stage-2 pairs and student store back from disk and
// checks that every stage-2 input's rationale span is byte-identical to the
// stored stage-1 generation with provenance student_stage1.
struct DataflowCheck {
    std::size_t checked = 0;
    std::size_t matched = 0;
};
DataflowCheck verify_stage2_dataflow(const std::filesystem::path& run_dir);

}  // namespace scicot
