#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scicot/common.hpp"
#include "scicot/corpus.hpp"
#include "scicot/teacher.hpp"

namespace scicot {

enum class RationaleSource { teacher, student_stage1 };
enum class CleanStatus { raw, auto_cleaned, needs_review, rejected };

std::string source_name(RationaleSource s);
RationaleSource source_from_name(const std::string& name);
std::string clean_status_name(CleanStatus s);
CleanStatus clean_status_from_name(const std::string& name);

struct RationaleRecord {
    std::string example_id;
    std::string rationale_text;  // non-empty unless status is rejected
    RationaleSource source = RationaleSource::teacher;
    std::string run_id;          // teacher id or model run id
    std::string prompt_hash;     // teacher-sourced records only
    CleanStatus clean_status = CleanStatus::raw;
    std::vector<std::string> fired_rules;

    json to_json() const;
    static RationaleRecord from_json(const json& j, bool strict, std::vector<std::string>* warnings,
                                     const std::string& context);
};

struct CleaningRules {
    std::vector<std::string> boilerplate_openers = {"sure", "here is", "here's", "of course",
                                                    "certainly", "okay", "ok"};
    bool strip_answer_declarations = true;  // disable for leakage-ablation runs
    std::size_t min_tokens = 5;
    std::size_t max_tokens = 256;

    json to_json() const;
    static CleaningRules from_json(const json& j);
};

// Text-level cleaning shared by teacher responses and student generations.
// Applies, in order: boilerplate prefix strip, trailing answer-declaration
// strip, whitespace collapse, length window. Idempotent on its own output.
struct CleanOutcome {
    std::string text;
    CleanStatus status = CleanStatus::auto_cleaned;
    std::vector<std::string> fired_rules;
};
CleanOutcome clean_text(const std::string& raw, const CleaningRules& rules);

// Failed responses and degenerate texts land in needs_review, never dropped.
RationaleRecord clean(const TeacherResponse& raw, const CleaningRules& rules);

inline constexpr int kStoreSchemaVersion = 1;

void write_store(const std::vector<RationaleRecord>& records, const std::filesystem::path& path);
std::vector<RationaleRecord> read_store(const std::filesystem::path& path, bool strict = true,
                                        std::vector<std::string>* warnings = nullptr);

// Appends records to an existing store (or creates one). Each record is a
// single O_APPEND write, so concurrent appenders interleave whole lines.
class StoreAppender {
  public:
    explicit StoreAppender(std::filesystem::path path);
    ~StoreAppender();
    StoreAppender(const StoreAppender&) = delete;
    StoreAppender& operator=(const StoreAppender&) = delete;
    void append(const RationaleRecord& record);

  private:
    std::filesystem::path path_;
    int fd_ = -1;
};

struct CoverageReport {
    std::vector<std::string> missing_ids;  // examples with no accepted rationale
    std::size_t covered = 0;
    std::size_t total = 0;

    json to_json() const;
};

CoverageReport coverage_report(const std::vector<RationaleRecord>& records,
                               const std::vector<McqExample>& examples);

// Review queue: needs_review records exported for hand editing; re-import
// validates ids against the store and marks the edits auto_cleaned (or
// rejected when the edited text is empty).
void export_review_queue(const std::vector<RationaleRecord>& records,
                         const std::filesystem::path& path);
std::vector<RationaleRecord> reimport_review(std::vector<RationaleRecord> records,
                                             const std::filesystem::path& edits_path);

// Exact-text duplicates across examples are reported, not removed.
std::vector<std::string> duplicate_text_warnings(const std::vector<RationaleRecord>& records);

}  // namespace scicot
