#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scicot/common.hpp"
#include "scicot/pipeline.hpp"
#include "scicot/teacher.hpp"

namespace scicot {

// Pipeline-level regimes accepted by the train and ablate commands. The
// two-stage regime expands to the stage1_rationale / stage2_answer trainer
// regimes internally.
const std::vector<std::string>& run_regimes();
void require_run_regime(const std::string& name);

struct DatasetPaths {
    std::string id = "dataset";
    std::string format = "jsonl";  // jsonl | csv
    std::string train;
    std::string dev;
    std::string test;

    json to_json() const;
    static DatasetPaths from_json(const json& j);
};

struct TeacherSettings {
    bool mock = false;
    std::uint64_t mock_seed = 0;
    TeacherEndpoint endpoint;  // used when mock is false
    DecodeSettings decode;
    std::string cache_dir;  // empty = no response cache
    int concurrency = 1;
    int max_attempts = 4;

    json to_json() const;
    static TeacherSettings from_json(const json& j);
};

// The structured configuration behind every command: a config file plus flag
// overrides (flags win). Unknown keys are rejected at every level; secrets
// never appear here, only the name of the environment variable holding the
// teacher token.
struct RunConfig {
    DatasetPaths dataset;
    TeacherSettings teacher;
    PipelineConfig pipeline;  // dataset_id is mirrored from dataset.id
    std::string regime = "scicot";
    std::vector<std::string> fractions = {"1/8", "1/4", "1/2", "1/1"};
    std::vector<std::string> regimes = {"baseline_ft", "scicot"};
    std::string output_dir;
    std::string rationales;  // cleaned teacher store; empty = mock on demand

    void validate() const;
    json to_json() const;
    static RunConfig from_json(const json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

// Subcommand front-end. Returns the process exit code: 0 success, 1 config
// error, 2 data error, 3 backend error; errors are also written to stderr as
// one-line JSON {"error": {"kind", "message"}}.
int cli_main(int argc, const char* const* argv);

}  // namespace scicot
