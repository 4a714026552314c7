#include "scicot/rationale_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <map>
#include <regex>
#include <set>

namespace scicot {

std::string source_name(RationaleSource s) {
    return s == RationaleSource::teacher ? "teacher" : "student_stage1";
}

RationaleSource source_from_name(const std::string& name) {
    if (name == "teacher") return RationaleSource::teacher;
    if (name == "student_stage1") return RationaleSource::student_stage1;
    throw DataError("unknown rationale source '" + name + "'");
}

std::string clean_status_name(CleanStatus s) {
    switch (s) {
        case CleanStatus::raw: return "raw";
        case CleanStatus::auto_cleaned: return "auto_cleaned";
        case CleanStatus::needs_review: return "needs_review";
        case CleanStatus::rejected: return "rejected";
    }
    return "raw";
}

CleanStatus clean_status_from_name(const std::string& name) {
    for (CleanStatus s : {CleanStatus::raw, CleanStatus::auto_cleaned, CleanStatus::needs_review,
                          CleanStatus::rejected}) {
        if (clean_status_name(s) == name) return s;
    }
    throw DataError("unknown clean_status '" + name + "'");
}

json RationaleRecord::to_json() const {
    return json{{"example_id", example_id},
                {"rationale_text", rationale_text},
                {"source", source_name(source)},
                {"run_id", run_id},
                {"prompt_hash", prompt_hash},
                {"clean_status", clean_status_name(clean_status)},
                {"fired_rules", fired_rules}};
}

RationaleRecord RationaleRecord::from_json(const json& j, bool strict,
                                           std::vector<std::string>* warnings,
                                           const std::string& context) {
    static const std::set<std::string> known = {"example_id", "rationale_text", "source",
                                                "run_id",     "prompt_hash",    "clean_status",
                                                "fired_rules"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (known.count(it.key()) == 0) {
            std::string msg = context + ": unknown field '" + it.key() + "'";
            if (strict) throw DataError(msg);
            if (warnings) warnings->push_back(msg);
        }
    }
    RationaleRecord r;
    try {
        r.example_id = j.at("example_id").get<std::string>();
        r.rationale_text = j.at("rationale_text").get<std::string>();
        r.source = source_from_name(j.at("source").get<std::string>());
        r.run_id = j.at("run_id").get<std::string>();
        r.prompt_hash = j.value("prompt_hash", "");
        r.clean_status = clean_status_from_name(j.at("clean_status").get<std::string>());
        r.fired_rules = j.value("fired_rules", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw DataError(context + ": malformed rationale record: " + e.what());
    }
    if (r.rationale_text.empty() && r.clean_status != CleanStatus::rejected &&
        r.clean_status != CleanStatus::needs_review) {
        throw DataError(context + ": empty rationale_text with status " +
                        clean_status_name(r.clean_status));
    }
    return r;
}

json CleaningRules::to_json() const {
    return json{{"boilerplate_openers", boilerplate_openers},
                {"strip_answer_declarations", strip_answer_declarations},
                {"min_tokens", min_tokens},
                {"max_tokens", max_tokens}};
}

CleaningRules CleaningRules::from_json(const json& j) {
    CleaningRules r;
    r.boilerplate_openers = j.value("boilerplate_openers", r.boilerplate_openers);
    r.strip_answer_declarations = j.value("strip_answer_declarations", r.strip_answer_declarations);
    r.min_tokens = j.value("min_tokens", r.min_tokens);
    r.max_tokens = j.value("max_tokens", r.max_tokens);
    return r;
}

namespace {

bool starts_with_opener(const std::string& text, const std::string& opener) {
    if (text.size() < opener.size()) return false;
    for (size_t i = 0; i < opener.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[i])) != opener[i]) return false;
    }
    // word boundary: "sure" must not strip "surely"
    if (text.size() > opener.size()) {
        char next = text[opener.size()];
        if (std::isalnum(static_cast<unsigned char>(next))) return false;
    }
    return true;
}

// Removes one leading boilerplate sentence; returns false when no opener
// matched. A sentence runs through the first '.', '!', '?', ':' or newline.
bool strip_one_boilerplate_sentence(std::string& text, const std::vector<std::string>& openers) {
    std::string t = trim(text);
    for (const auto& opener : openers) {
        if (!starts_with_opener(t, opener)) continue;
        size_t end = t.find_first_of(".!?:\n");
        if (end == std::string::npos) {
            text.clear();  // the whole text was one boilerplate clause
        } else {
            text = trim(t.substr(end + 1));
        }
        return true;
    }
    text = t;
    return false;
}

const std::regex& answer_declaration_regex() {
    // Final sentence of the form "[so/thus/...] (the|this) (correct|final)
    // answer is <anything>". Applied only at the end of the text.
    static const std::regex re(
        R"((?:^|[.!?]\s+)(?:(?:so|thus|therefore|hence|overall|in conclusion)[,\s]+)?)"
        R"((?:the\s+|this\s+|my\s+)?(?:correct\s+|final\s+)?answer\s+is\b[^.!?]*[.!?]?\s*$)",
        std::regex::icase);
    return re;
}

// Drops a trailing "the answer is ..." sentence; returns false if absent.
bool strip_one_answer_declaration(std::string& text) {
    std::smatch m;
    if (!std::regex_search(text, m, answer_declaration_regex())) return false;
    size_t start = static_cast<size_t>(m.position(0));
    if (start == 0) {
        text.clear();
    } else {
        // The match begins at the previous sentence's terminator; keep it.
        text = trim(text.substr(0, start + 1));
    }
    return true;
}

}  // namespace

CleanOutcome clean_text(const std::string& raw, const CleaningRules& rules) {
    CleanOutcome out;
    std::string text = trim(raw);

    bool fired = false;
    while (strip_one_boilerplate_sentence(text, rules.boilerplate_openers)) {
        fired = true;
    }
    if (fired) out.fired_rules.push_back("strip_boilerplate_prefix");

    if (rules.strip_answer_declarations) {
        fired = false;
        while (strip_one_answer_declaration(text)) {
            fired = true;
        }
        if (fired) out.fired_rules.push_back("strip_answer_declaration");
    }

    std::string collapsed = collapse_whitespace(text);
    if (collapsed != text) {
        out.fired_rules.push_back("collapse_whitespace");
    }
    text = collapsed;

    size_t tokens = split_whitespace(text).size();
    if (text.empty() || tokens < rules.min_tokens || tokens > rules.max_tokens) {
        out.fired_rules.push_back("length_window");
        out.status = CleanStatus::needs_review;
    } else {
        out.status = CleanStatus::auto_cleaned;
    }
    out.text = text;
    return out;
}

RationaleRecord clean(const TeacherResponse& raw, const CleaningRules& rules) {
    RationaleRecord record;
    record.example_id = raw.example_id;
    record.source = RationaleSource::teacher;
    record.run_id = raw.teacher_id;
    record.prompt_hash = raw.prompt_hash;
    if (!raw.ok() || trim(raw.raw_text).empty()) {
        record.rationale_text.clear();
        record.clean_status = CleanStatus::needs_review;
        record.fired_rules = {"empty_input"};
        return record;
    }
    CleanOutcome outcome = clean_text(raw.raw_text, rules);
    record.rationale_text = outcome.text;
    record.clean_status = outcome.status;
    record.fired_rules = outcome.fired_rules;
    return record;
}

namespace {

json store_header() {
    return json{{"schema_version", kStoreSchemaVersion}, {"kind", "rationale_store"}};
}

void check_store_uniqueness(const std::vector<RationaleRecord>& records) {
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& r : records) {
        auto key = std::make_tuple(r.example_id, source_name(r.source), r.run_id);
        if (!seen.insert(key).second) {
            throw DataError("duplicate rationale record for example '" + r.example_id +
                            "' (source " + source_name(r.source) + ", run " + r.run_id + ")");
        }
    }
}

}  // namespace

void write_store(const std::vector<RationaleRecord>& records, const std::filesystem::path& path) {
    check_store_uniqueness(records);
    std::string out = store_header().dump() + "\n";
    for (const auto& r : records) {
        out += r.to_json().dump();
        out += "\n";
    }
    write_text_file_atomic(path, out);
}

std::vector<RationaleRecord> read_store(const std::filesystem::path& path, bool strict,
                                        std::vector<std::string>* warnings) {
    std::vector<std::string> lines = read_lines(path);
    std::vector<RationaleRecord> records;
    bool header_seen = false;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        std::string context = path.filename().string() + " line " + std::to_string(i + 1);
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::exception& e) {
            throw DataError(context + ": invalid JSON: " + e.what());
        }
        if (j.contains("schema_version")) {
            int version = j["schema_version"].get<int>();
            if (version != kStoreSchemaVersion) {
                throw DataError(context + ": store schema_version " + std::to_string(version) +
                                " is not supported (expected " +
                                std::to_string(kStoreSchemaVersion) + ")");
            }
            header_seen = true;
            continue;
        }
        records.push_back(RationaleRecord::from_json(j, strict, warnings, context));
    }
    if (!header_seen && !records.empty()) {
        throw DataError(path.filename().string() + ": missing schema_version header line");
    }
    check_store_uniqueness(records);
    return records;
}

StoreAppender::StoreAppender(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) {
        std::filesystem::create_directories(path_.parent_path());
    }
    // Exactly one creator writes the header; racers see EEXIST and append only.
    int create_fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_APPEND, 0644);
    if (create_fd >= 0) {
        std::string header = store_header().dump() + "\n";
        if (::write(create_fd, header.data(), header.size()) < 0) {
            ::close(create_fd);
            throw DataError("cannot write store header: " + path_.string());
        }
        fd_ = create_fd;
        return;
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND);
    if (fd_ < 0) {
        throw DataError("cannot open store for append: " + path_.string());
    }
}

StoreAppender::~StoreAppender() {
    if (fd_ >= 0) ::close(fd_);
}

void StoreAppender::append(const RationaleRecord& record) {
    std::string line = record.to_json().dump() + "\n";
    ssize_t n = ::write(fd_, line.data(), line.size());
    if (n != static_cast<ssize_t>(line.size())) {
        throw DataError("short write while appending to " + path_.string());
    }
}

CoverageReport coverage_report(const std::vector<RationaleRecord>& records,
                               const std::vector<McqExample>& examples) {
    std::set<std::string> accepted;
    for (const auto& r : records) {
        if (r.clean_status == CleanStatus::auto_cleaned) {
            accepted.insert(r.example_id);
        }
    }
    CoverageReport report;
    report.total = examples.size();
    for (const auto& ex : examples) {
        if (accepted.count(ex.id)) {
            ++report.covered;
        } else {
            report.missing_ids.push_back(ex.id);
        }
    }
    return report;
}

json CoverageReport::to_json() const {
    return json{{"missing_ids", missing_ids}, {"covered", covered}, {"total", total}};
}

void export_review_queue(const std::vector<RationaleRecord>& records,
                         const std::filesystem::path& path) {
    std::vector<RationaleRecord> queue;
    for (const auto& r : records) {
        if (r.clean_status == CleanStatus::needs_review) queue.push_back(r);
    }
    std::string out = store_header().dump() + "\n";
    for (const auto& r : queue) {
        out += r.to_json().dump();
        out += "\n";
    }
    write_text_file_atomic(path, out);
}

std::vector<RationaleRecord> reimport_review(std::vector<RationaleRecord> records,
                                             const std::filesystem::path& edits_path) {
    std::vector<RationaleRecord> edits = read_store(edits_path, /*strict=*/false, nullptr);
    for (const auto& edit : edits) {
        auto it = std::find_if(records.begin(), records.end(), [&](const RationaleRecord& r) {
            return r.example_id == edit.example_id && r.source == edit.source &&
                   r.run_id == edit.run_id;
        });
        if (it == records.end()) {
            throw DataError("review re-import: no store record for example '" + edit.example_id +
                            "' (source " + source_name(edit.source) + ", run " + edit.run_id + ")");
        }
        std::string text = trim(edit.rationale_text);
        it->rationale_text = text;
        it->clean_status = text.empty() ? CleanStatus::rejected : CleanStatus::auto_cleaned;
        it->fired_rules.push_back("manual_review");
    }
    return records;
}

std::vector<std::string> duplicate_text_warnings(const std::vector<RationaleRecord>& records) {
    std::map<std::string, std::vector<std::string>> by_text;
    for (const auto& r : records) {
        if (r.clean_status == CleanStatus::auto_cleaned) {
            by_text[r.rationale_text].push_back(r.example_id);
        }
    }
    std::vector<std::string> warnings;
    for (const auto& [text, ids] : by_text) {
        if (ids.size() > 1) {
            std::string msg = "identical rationale text shared by examples:";
            for (const auto& id : ids) msg += " " + id;
            warnings.push_back(msg);
        }
    }
    return warnings;
}

}  // namespace scicot
