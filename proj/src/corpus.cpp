#include "scicot/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <sstream>

namespace scicot {

namespace {

const std::vector<std::string> kCanonicalLabels = {"A", "B", "C", "D", "E"};

// "1".."5" and lowercase letters map onto the canonical A..E alphabet.
std::string canonical_label(const std::string& raw, const std::string& context) {
    if (raw.size() == 1) {
        char c = raw[0];
        if (c >= 'A' && c <= 'E') return std::string(1, c);
        if (c >= 'a' && c <= 'e') return std::string(1, static_cast<char>(c - 'a' + 'A'));
        if (c >= '1' && c <= '5') return std::string(1, static_cast<char>(c - '1' + 'A'));
    }
    throw DataError(context + ": unsupported choice label '" + raw + "'");
}

std::string row_context(const std::filesystem::path& path, size_t row) {
    return path.filename().string() + " row " + std::to_string(row);
}

// Minimal RFC-4180 style row parser; handles quoted fields and embedded commas.
std::vector<std::string> parse_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

Split split_from_filename(const std::filesystem::path& path) {
    std::string stem = path.stem().string();
    for (const char* name : {"train", "dev", "test"}) {
        std::string suffix = std::string("_") + name;
        if (stem.size() >= suffix.size() &&
            stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
            return split_from_name(name);
        }
    }
    throw DataError("cannot infer split from file name '" + path.filename().string() +
                    "' (expected an _train/_dev/_test suffix)");
}

}  // namespace

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "dev") return Split::dev;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train, dev or test)");
}

const Choice& McqExample::gold_choice() const {
    for (const auto& c : choices) {
        if (c.label == answer_key) return c;
    }
    throw DataError("example " + id + ": answer_key '" + answer_key + "' matches no choice");
}

void validate_example(const McqExample& ex, const std::string& context) {
    if (ex.id.empty()) throw DataError(context + ": empty id");
    if (trim(ex.stem).empty()) throw DataError(context + ": empty stem (field 'question')");
    if (ex.choices.size() < 2 || ex.choices.size() > 5) {
        throw DataError(context + ": expected 2..5 choices, got " + std::to_string(ex.choices.size()) +
                        " (field 'choices')");
    }
    std::set<std::string> labels;
    for (const auto& c : ex.choices) {
        if (!labels.insert(c.label).second) {
            throw DataError(context + ": duplicate choice label '" + c.label + "'");
        }
        if (trim(c.text).empty()) {
            throw DataError(context + ": empty text for choice '" + c.label + "'");
        }
    }
    if (labels.count(ex.answer_key) == 0) {
        throw DataError(context + ": answerKey '" + ex.answer_key + "' matches no choice label");
    }
}

DatasetFormat format_from_name(const std::string& name) {
    if (name == "jsonl") return DatasetFormat::jsonl;
    if (name == "csv") return DatasetFormat::csv;
    throw ConfigError("unknown dataset format '" + name + "' (expected jsonl or csv)");
}

McqExample example_from_json(const json& j, Split split, const std::string& context) {
    if (!j.is_object()) throw DataError(context + ": row is not a JSON object");
    McqExample ex;
    ex.split = split;
    try {
        ex.id = j.at("id").get<std::string>();
    } catch (const json::exception&) {
        throw DataError(context + ": missing or non-string field 'id'");
    }
    try {
        ex.stem = j.at("question").get<std::string>();
    } catch (const json::exception&) {
        throw DataError(context + ": missing or non-string field 'question'");
    }
    if (!j.contains("choices") || !j["choices"].is_array()) {
        throw DataError(context + ": missing or non-array field 'choices'");
    }
    for (const auto& cj : j["choices"]) {
        Choice c;
        try {
            c.source_label = cj.at("label").get<std::string>();
            c.text = cj.at("text").get<std::string>();
        } catch (const json::exception&) {
            throw DataError(context + ": malformed entry in 'choices' (need label and text)");
        }
        c.label = canonical_label(c.source_label, context);
        ex.choices.push_back(std::move(c));
    }
    std::string raw_key;
    try {
        raw_key = j.at("answerKey").get<std::string>();
    } catch (const json::exception&) {
        throw DataError(context + ": missing or non-string field 'answerKey'");
    }
    ex.answer_key = canonical_label(raw_key, context);
    validate_example(ex, context);
    return ex;
}

json example_to_json(const McqExample& ex) {
    json choices = json::array();
    for (const auto& c : ex.choices) {
        choices.push_back({{"label", c.label}, {"text", c.text}});
    }
    return json{{"id", ex.id}, {"question", ex.stem}, {"choices", choices}, {"answerKey", ex.answer_key}};
}

std::vector<McqExample> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                     std::optional<Split> split_override) {
    Split split = split_override ? *split_override : split_from_filename(path);
    std::vector<std::string> lines = read_lines(path);
    std::vector<McqExample> examples;
    std::set<std::string> seen_ids;

    auto check_duplicate = [&](const McqExample& ex, size_t row) {
        if (!seen_ids.insert(ex.id).second) {
            throw DataError(row_context(path, row) + ": duplicate id '" + ex.id + "'");
        }
    };

    if (format == DatasetFormat::jsonl) {
        for (size_t row = 0; row < lines.size(); ++row) {
            if (trim(lines[row]).empty()) continue;
            json j;
            try {
                j = json::parse(lines[row]);
            } catch (const json::exception& e) {
                throw DataError(row_context(path, row + 1) + ": invalid JSON: " + e.what());
            }
            McqExample ex = example_from_json(j, split, row_context(path, row + 1));
            check_duplicate(ex, row + 1);
            examples.push_back(std::move(ex));
        }
        return examples;
    }

    // CSV: header "id,question,choice_A,...,choice_E,answerKey"; empty choice
    // cells mean the example has fewer than five options.
    if (lines.empty()) return examples;
    std::vector<std::string> header = parse_csv_row(lines[0]);
    std::map<std::string, size_t> col;
    for (size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
    for (const char* required : {"id", "question", "answerKey"}) {
        if (col.count(required) == 0) {
            throw DataError(path.filename().string() + ": CSV header missing column '" +
                            std::string(required) + "'");
        }
    }
    for (size_t row = 1; row < lines.size(); ++row) {
        if (trim(lines[row]).empty()) continue;
        std::vector<std::string> fields = parse_csv_row(lines[row]);
        auto cell = [&](const std::string& name) -> std::string {
            auto it = col.find(name);
            if (it == col.end() || it->second >= fields.size()) return "";
            return fields[it->second];
        };
        const std::string ctx = row_context(path, row + 1);
        McqExample ex;
        ex.split = split;
        ex.id = trim(cell("id"));
        ex.stem = cell("question");
        for (const auto& label : kCanonicalLabels) {
            std::string text = cell("choice_" + label);
            if (trim(text).empty()) continue;
            ex.choices.push_back(Choice{label, text, label});
        }
        std::string raw_key = trim(cell("answerKey"));
        if (raw_key.empty()) throw DataError(ctx + ": missing field 'answerKey'");
        ex.answer_key = canonical_label(raw_key, ctx);
        validate_example(ex, ctx);
        check_duplicate(ex, row + 1);
        examples.push_back(std::move(ex));
    }
    return examples;
}

std::string SubsetSpec::fraction_string() const {
    if (fraction_den == 1) return std::to_string(fraction_num);
    return std::to_string(fraction_num) + "/" + std::to_string(fraction_den);
}

SubsetSpec parse_fraction(const std::string& text) {
    SubsetSpec spec;
    std::string t = trim(text);
    auto slash = t.find('/');
    try {
        if (slash == std::string::npos) {
            spec.fraction_num = std::stoi(t);
            spec.fraction_den = 1;
        } else {
            spec.fraction_num = std::stoi(t.substr(0, slash));
            spec.fraction_den = std::stoi(t.substr(slash + 1));
        }
    } catch (const std::exception&) {
        throw ConfigError("cannot parse fraction '" + text + "'");
    }
    validate_subset_spec(spec);
    return spec;
}

void validate_subset_spec(const SubsetSpec& spec) {
    static const std::vector<std::pair<int, int>> allowed = {{1, 8}, {1, 4}, {1, 2}, {1, 1}};
    if (spec.fraction_den <= 0 || spec.fraction_num <= 0 || spec.fraction() > 1.0) {
        throw ConfigError("subset fraction must lie in (0, 1], got " + spec.fraction_string());
    }
    bool ok = false;
    for (auto [n, d] : allowed) {
        if (spec.fraction_num * d == spec.fraction_den * n) ok = true;
    }
    if (!ok) {
        throw ConfigError("subset fraction must be one of 1/8, 1/4, 1/2, 1; got " +
                          spec.fraction_string());
    }
}

std::size_t subset_size(std::size_t total, const SubsetSpec& spec) {
    if (spec.target_count) {
        if (*spec.target_count > total) {
            throw ConfigError("target_count " + std::to_string(*spec.target_count) +
                              " exceeds available " + std::to_string(total));
        }
        return *spec.target_count;
    }
    return static_cast<std::size_t>(total) * static_cast<std::size_t>(spec.fraction_num) /
           static_cast<std::size_t>(spec.fraction_den);
}

std::vector<McqExample> subsample(const std::vector<McqExample>& examples, const SubsetSpec& spec) {
    validate_subset_spec(spec);
    if (examples.empty()) {
        throw DataError("subsample: examples must be non-empty");
    }
    if (spec.is_identity()) {
        return examples;
    }
    std::size_t want = subset_size(examples.size(), spec);

    // Selection sampling (Knuth algorithm S) with a hand-bounded draw, so the
    // selected id sequence is identical across platforms for a fixed seed.
    std::mt19937_64 rng(spec.seed);
    std::vector<McqExample> out;
    out.reserve(want);
    std::size_t remaining = examples.size();
    std::size_t needed = want;
    for (const auto& ex : examples) {
        if (needed == 0) break;
        if (rng() % remaining < needed) {
            out.push_back(ex);
            --needed;
        }
        --remaining;
    }
    return out;
}

DatasetStats dataset_stats(const std::vector<McqExample>& examples) {
    DatasetStats stats;
    stats.total = examples.size();
    for (const auto& ex : examples) {
        stats.per_split[split_name(ex.split)] += 1;
        stats.answer_label_counts[ex.answer_key] += 1;
        stats.choice_count_histogram[std::to_string(ex.choices.size())] += 1;
    }
    return stats;
}

json DatasetStats::to_json() const {
    return json{{"total", total},
                {"per_split", per_split},
                {"answer_label_counts", answer_label_counts},
                {"choice_count_histogram", choice_count_histogram}};
}

void write_examples_jsonl(const std::vector<McqExample>& examples, const std::filesystem::path& path) {
    std::string out;
    for (const auto& ex : examples) {
        out += example_to_json(ex).dump();
        out += "\n";
    }
    write_text_file_atomic(path, out);
}

}  // namespace scicot
