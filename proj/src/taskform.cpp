#include "scicot/taskform.hpp"

namespace scicot {

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::baseline_ft: return "baseline_ft";
        case Regime::one_stage: return "one_stage";
        case Regime::stage1_rationale: return "stage1_rationale";
        case Regime::stage2_answer: return "stage2_answer";
    }
    return "baseline_ft";
}

Regime regime_from_name(const std::string& name) {
    for (Regime r : {Regime::baseline_ft, Regime::one_stage, Regime::stage1_rationale,
                     Regime::stage2_answer}) {
        if (regime_name(r) == name) return r;
    }
    throw ConfigError("unknown regime '" + name +
                      "' (expected one of baseline_ft, one_stage, stage1_rationale, stage2_answer)");
}

bool regime_needs_rationale(Regime r) {
    return r == Regime::one_stage || r == Regime::stage1_rationale || r == Regime::stage2_answer;
}

json TrainingPair::to_json() const {
    return json{{"id", example_id},
                {"regime", regime_name(regime)},
                {"input", input_text},
                {"target", target_text}};
}

TrainingPair TrainingPair::from_json(const json& j, const std::string& context) {
    TrainingPair p;
    try {
        p.example_id = j.at("id").get<std::string>();
        p.regime = regime_from_name(j.at("regime").get<std::string>());
        p.input_text = j.at("input").get<std::string>();
        p.target_text = j.at("target").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(context + ": malformed training pair: " + e.what());
    }
    if (p.input_text.empty() || p.target_text.empty()) {
        throw DataError(context + ": training pair with empty input or target");
    }
    return p;
}

TrainingPair format_pair(const McqExample& ex, Regime regime,
                         const std::optional<RationaleRecord>& rationale) {
    if (regime_needs_rationale(regime)) {
        if (!rationale) {
            throw DataError("regime " + regime_name(regime) + " requires a rationale (example " +
                            ex.id + ")");
        }
        if (rationale->clean_status != CleanStatus::auto_cleaned) {
            throw DataError("rationale for example " + ex.id + " has clean_status " +
                            clean_status_name(rationale->clean_status) +
                            "; only auto_cleaned rationales may be used for training");
        }
        if (rationale->example_id != ex.id) {
            throw DataError("rationale example_id '" + rationale->example_id +
                            "' does not match example '" + ex.id + "'");
        }
    }

    TrainingPair pair;
    pair.example_id = ex.id;
    pair.regime = regime;

    const std::string question_block = render_question_block(ex);
    const std::string answer = answer_surface_form(ex);
    switch (regime) {
        case Regime::baseline_ft:
            pair.input_text = question_block;
            pair.target_text = answer;
            break;
        case Regime::one_stage:
            pair.input_text = question_block;
            pair.target_text = rationale->rationale_text + " " + kAnswerMarker + " " + answer;
            break;
        case Regime::stage1_rationale:
            pair.input_text = question_block;
            pair.target_text = rationale->rationale_text;
            break;
        case Regime::stage2_answer:
            pair.input_text =
                question_block + "\n" + kRationaleMarker + " " + rationale->rationale_text;
            pair.target_text = answer;
            break;
    }
    return pair;
}

OneStageParse parse_one_stage(const std::string& output_text) {
    OneStageParse parsed;
    size_t pos = output_text.rfind(kAnswerMarker);
    if (pos == std::string::npos) {
        parsed.rationale_text = trim(output_text);
        return parsed;
    }
    parsed.rationale_text = trim(output_text.substr(0, pos));
    parsed.answer_text = trim(output_text.substr(pos + std::string(kAnswerMarker).size()));
    return parsed;
}

std::optional<std::string> extract_rationale_span(const std::string& stage2_input) {
    // Cleaned rationales contain no newline, so the last marker at a line
    // start is the one the renderer appended.
    const std::string needle = std::string("\n") + kRationaleMarker + " ";
    size_t pos = stage2_input.rfind(needle);
    if (pos == std::string::npos) return std::nullopt;
    return stage2_input.substr(pos + needle.size());
}

void write_pairs_jsonl(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path) {
    std::string out;
    for (const auto& p : pairs) {
        out += p.to_json().dump();
        out += "\n";
    }
    write_text_file_atomic(path, out);
}

std::vector<TrainingPair> read_pairs_jsonl(const std::filesystem::path& path) {
    std::vector<TrainingPair> pairs;
    std::vector<std::string> lines = read_lines(path);
    for (size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        std::string context = path.filename().string() + " line " + std::to_string(i + 1);
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::exception& e) {
            throw DataError(context + ": invalid JSON: " + e.what());
        }
        pairs.push_back(TrainingPair::from_json(j, context));
    }
    return pairs;
}

}  // namespace scicot
