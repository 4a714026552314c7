#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scicot/common.hpp"

namespace scicot {

enum class Split { train, dev, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Choice {
    std::string label;         // canonical "A".."E"
    std::string text;
    std::string source_label;  // label as it appeared in the input file
};

// One multiple-choice question. Labels are normalized to the A..E alphabet
// at ingest; the original alphabet is kept in Choice::source_label.
struct McqExample {
    std::string id;
    std::string stem;
    std::vector<Choice> choices;
    std::string answer_key;  // canonical label of the gold choice
    Split split = Split::train;

    const Choice& gold_choice() const;
};

// Throws DataError naming the offending field if any invariant is violated.
void validate_example(const McqExample& ex, const std::string& context);

enum class DatasetFormat { jsonl, csv };

DatasetFormat format_from_name(const std::string& name);

// Loads one split file. The split is taken from the file name suffix
// (_train/_dev/_test before the extension) unless split_override is given.
std::vector<McqExample> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                     std::optional<Split> split_override = std::nullopt);

struct SubsetSpec {
    int fraction_num = 1;
    int fraction_den = 1;  // fraction must be one of 1/8, 1/4, 1/2, 1/1
    std::uint64_t seed = 0;
    std::string applies_to = "train";
    // Pins an exact subset size where a published count disagrees with the
    // floor convention; floor(fraction * n) is used when absent.
    std::optional<std::size_t> target_count;

    double fraction() const { return static_cast<double>(fraction_num) / fraction_den; }
    std::string fraction_string() const;
    bool is_identity() const { return fraction_num == fraction_den && !target_count; }
};

SubsetSpec parse_fraction(const std::string& text);
void validate_subset_spec(const SubsetSpec& spec);

// Uniform random subset without replacement, deterministic for a fixed seed,
// preserving the original relative order. fraction = 1 returns the input.
std::vector<McqExample> subsample(const std::vector<McqExample>& examples, const SubsetSpec& spec);

std::size_t subset_size(std::size_t total, const SubsetSpec& spec);

struct DatasetStats {
    std::size_t total = 0;
    std::map<std::string, std::size_t> per_split;
    std::map<std::string, std::size_t> answer_label_counts;
    std::map<std::string, std::size_t> choice_count_histogram;  // "4" -> 5100 etc.

    json to_json() const;
};

DatasetStats dataset_stats(const std::vector<McqExample>& examples);

json example_to_json(const McqExample& ex);
McqExample example_from_json(const json& j, Split split, const std::string& context);

void write_examples_jsonl(const std::vector<McqExample>& examples, const std::filesystem::path& path);

}  // namespace scicot
