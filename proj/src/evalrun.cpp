#include "scicot/evalrun.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace scicot {

namespace {

// Label candidates are single characters: letters A..E (any case) or the
// 1..5 numbering some corpora use.
std::optional<std::string> label_from_token(const std::string& token,
                                            const std::vector<Choice>& choices) {
    std::string t = token;
    while (!t.empty() && t.front() == '(') {
        t.erase(t.begin());
    }
    while (!t.empty()) {
        char c = t.back();
        if (c == ')' || c == '.' || c == ':' || c == ',' || c == ';' || c == '!' || c == '?') {
            t.pop_back();
        } else {
            break;
        }
    }
    if (t.size() != 1) {
        return std::nullopt;
    }
    char c = t[0];
    char canonical = 0;
    if (c >= 'A' && c <= 'E') {
        canonical = c;
    } else if (c >= 'a' && c <= 'e') {
        canonical = static_cast<char>(c - 'a' + 'A');
    } else if (c >= '1' && c <= '5') {
        canonical = static_cast<char>(c - '1' + 'A');
    } else {
        return std::nullopt;
    }
    for (const Choice& choice : choices) {
        if (choice.label == std::string(1, canonical)) {
            return choice.label;
        }
    }
    return std::nullopt;
}

bool tokens_contain(const std::vector<std::string>& haystack,
                    const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) {
        return false;
    }
    for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
        bool all = true;
        for (std::size_t i = 0; i < needle.size(); ++i) {
            if (haystack[start + i] != needle[i]) {
                all = false;
                break;
            }
        }
        if (all) {
            return true;
        }
    }
    return false;
}

}  // namespace

std::optional<std::string> extract_answer(const std::string& output_text,
                                          const std::vector<Choice>& choices) {
    std::string text = trim(output_text);
    if (text.empty() || choices.empty()) {
        return std::nullopt;
    }
    // Rule 1: a leading token naming a valid choice label.
    std::vector<std::string> tokens = split_whitespace(text);
    if (!tokens.empty()) {
        if (auto label = label_from_token(tokens.front(), choices)) {
            return label;
        }
    }
    // Rule 2: whole output equals a choice text after normalization.
    std::string norm_out = normalize_for_match(text);
    std::vector<std::string> exact;
    for (const Choice& choice : choices) {
        std::string norm_choice = normalize_for_match(choice.text);
        if (!norm_choice.empty() && norm_choice == norm_out) {
            exact.push_back(choice.label);
        }
    }
    if (exact.size() == 1) {
        return exact.front();
    }
    if (exact.size() > 1) {
        return std::nullopt;  // duplicate choice texts; ambiguous
    }
    // Rule 3: exactly one choice text appears inside the output, compared
    // token-wise so "tin" never matches inside "latin".
    std::vector<std::string> out_tokens = split_whitespace(norm_out);
    std::vector<std::string> contained;
    for (const Choice& choice : choices) {
        std::vector<std::string> needle = split_whitespace(normalize_for_match(choice.text));
        if (tokens_contain(out_tokens, needle)) {
            contained.push_back(choice.label);
        }
    }
    if (contained.size() == 1) {
        return contained.front();
    }
    return std::nullopt;
}

json PredictionRow::to_json() const {
    json j{{"id", id},
           {"raw_output", raw_output},
           {"extracted", extracted ? json(*extracted) : json(nullptr)},
           {"gold", gold},
           {"correct", correct}};
    return j;
}

PredictionRow PredictionRow::from_json(const json& j, const std::string& context) {
    try {
        PredictionRow row;
        row.id = j.at("id").get<std::string>();
        row.raw_output = j.at("raw_output").get<std::string>();
        if (j.contains("extracted") && !j.at("extracted").is_null()) {
            row.extracted = j.at("extracted").get<std::string>();
        }
        row.gold = j.at("gold").get<std::string>();
        row.correct = j.at("correct").get<bool>();
        return row;
    } catch (const json::exception& e) {
        throw DataError(context + ": bad prediction row: " + e.what());
    }
}

json ScoredEval::to_json() const {
    json rows_json = json::array();
    for (const PredictionRow& row : rows) {
        rows_json.push_back(row.to_json());
    }
    return json{{"rows", rows_json}, {"correct", correct}, {"total", total}, {"accuracy", accuracy}};
}

ScoredEval ScoredEval::from_json(const json& j) {
    ScoredEval eval;
    for (const json& row : j.at("rows")) {
        eval.rows.push_back(PredictionRow::from_json(row, "scored eval"));
    }
    eval.correct = j.at("correct").get<std::size_t>();
    eval.total = j.at("total").get<std::size_t>();
    eval.accuracy = j.at("accuracy").get<double>();
    return eval;
}

ScoredEval score_predictions(const std::vector<Prediction>& predictions,
                             const std::vector<McqExample>& examples) {
    if (examples.empty()) {
        throw DataError("score_predictions called with no examples");
    }
    std::map<std::string, const Prediction*> by_id;
    for (const Prediction& p : predictions) {
        if (!by_id.emplace(p.example_id, &p).second) {
            throw DataError("duplicate prediction for id " + p.example_id);
        }
    }
    ScoredEval eval;
    std::set<std::string> consumed;
    for (const McqExample& ex : examples) {
        auto it = by_id.find(ex.id);
        if (it == by_id.end()) {
            throw DataError("missing prediction for example " + ex.id);
        }
        consumed.insert(ex.id);
        PredictionRow row;
        row.id = ex.id;
        row.raw_output = it->second->raw_output;
        row.extracted = extract_answer(it->second->raw_output, ex.choices);
        row.gold = ex.answer_key;
        row.correct = row.extracted && *row.extracted == row.gold;
        eval.correct += row.correct ? 1 : 0;
        eval.rows.push_back(std::move(row));
    }
    for (const auto& [id, pred] : by_id) {
        if (consumed.find(id) == consumed.end()) {
            throw DataError("prediction for unknown example id " + id);
        }
    }
    eval.total = eval.rows.size();
    eval.accuracy = static_cast<double>(eval.correct) / static_cast<double>(eval.total);
    return eval;
}

void write_prediction_rows_jsonl(const ScoredEval& eval, const std::filesystem::path& path) {
    std::string body;
    for (const PredictionRow& row : eval.rows) {
        body += row.to_json().dump();
        body += '\n';
    }
    write_text_file_atomic(path, body);
}

namespace {

ReportRow* find_row(std::vector<ReportRow>& rows, const std::string& label,
                    const std::string& size_label) {
    for (ReportRow& row : rows) {
        if (row.label == label && row.size_label == size_label) {
            return &row;
        }
    }
    return nullptr;
}

}  // namespace

json ablation_cell_to_json(const AblationCell& cell) {
    return json{{"dataset_id", cell.dataset_id},
                {"fraction", cell.fraction},
                {"train_count", cell.train_count},
                {"regime", cell.regime},
                {"accuracy", cell.accuracy ? json(*cell.accuracy) : json(nullptr)},
                {"correct", cell.correct},
                {"total", cell.total},
                {"error", cell.error},
                {"run_id", cell.run_id},
                {"reused", cell.reused}};
}

AblationCell ablation_cell_from_json(const json& j) {
    try {
        AblationCell cell;
        cell.dataset_id = j.at("dataset_id").get<std::string>();
        cell.fraction = j.at("fraction").get<std::string>();
        cell.train_count = j.at("train_count").get<std::size_t>();
        cell.regime = j.at("regime").get<std::string>();
        if (!j.at("accuracy").is_null()) {
            cell.accuracy = j.at("accuracy").get<double>();
        }
        cell.correct = j.at("correct").get<std::size_t>();
        cell.total = j.at("total").get<std::size_t>();
        cell.error = j.at("error").get<std::string>();
        cell.run_id = j.at("run_id").get<std::string>();
        cell.reused = j.at("reused").get<bool>();
        return cell;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad ablation cell: ") + e.what());
    }
}

void EvalReport::add_reference_row(const std::string& label, const std::string& size_label,
                                   const std::map<std::string, double>& accuracy,
                                   const std::string& source_tag) {
    if (find_row(rows, label, size_label)) {
        throw DataError("report row '" + label + "' already exists");
    }
    ReportRow row;
    row.label = label;
    row.size_label = size_label;
    row.accuracy = accuracy;
    row.reference = true;
    row.source_tag = source_tag;
    rows.push_back(std::move(row));
}

void EvalReport::set_computed(const std::string& label, const std::string& size_label,
                              const std::string& dataset_id, double accuracy) {
    ReportRow* row = find_row(rows, label, size_label);
    if (row && row->reference) {
        throw DataError("report row '" + label +
                        "' holds published reference values; refusing to overwrite with a "
                        "computed result");
    }
    if (!row) {
        ReportRow fresh;
        fresh.label = label;
        fresh.size_label = size_label;
        rows.push_back(std::move(fresh));
        row = &rows.back();
    }
    row->accuracy[dataset_id] = accuracy;
}

json EvalReport::to_json() const {
    json rows_json = json::array();
    for (const ReportRow& row : rows) {
        rows_json.push_back(json{{"label", row.label},
                                 {"size_label", row.size_label},
                                 {"accuracy", row.accuracy},
                                 {"reference", row.reference},
                                 {"source_tag", row.source_tag}});
    }
    json cells = json::array();
    for (const AblationCell& cell : ablation) {
        cells.push_back(ablation_cell_to_json(cell));
    }
    json regimes = json::object();
    for (const auto& [key, eval] : regime_results) {
        regimes[key] = eval.to_json();
    }
    return json{{"kind", "eval_report"},
                {"schema_version", 1},
                {"rows", rows_json},
                {"ablation", cells},
                {"regime_results", regimes}};
}

EvalReport EvalReport::from_json(const json& j) {
    if (!j.is_object() || j.value("kind", "") != "eval_report") {
        throw DataError("not an eval report");
    }
    EvalReport report;
    for (const json& row_json : j.at("rows")) {
        ReportRow row;
        row.label = row_json.at("label").get<std::string>();
        row.size_label = row_json.at("size_label").get<std::string>();
        row.accuracy = row_json.at("accuracy").get<std::map<std::string, double>>();
        row.reference = row_json.at("reference").get<bool>();
        row.source_tag = row_json.at("source_tag").get<std::string>();
        report.rows.push_back(std::move(row));
    }
    for (const json& cell_json : j.at("ablation")) {
        report.ablation.push_back(ablation_cell_from_json(cell_json));
    }
    for (const auto& [key, value] : j.at("regime_results").items()) {
        report.regime_results[key] = ScoredEval::from_json(value);
    }
    return report;
}

std::vector<ReportRow> published_reference_rows() {
    auto make = [](const char* label, const char* size, double arc_e, double arc_c,
                   const char* tag) {
        ReportRow row;
        row.label = label;
        row.size_label = size;
        row.accuracy = {{"ARC-E", arc_e}, {"ARC-C", arc_c}};
        row.reference = true;
        row.source_tag = tag;
        return row;
    };
    return {
        make("OPT (50% sparsity)", "175B", 0.2803, 0.2560,
             "published sparse-model evaluation"),
        make("OPT (few-shot k=5)", "175B", 0.3740, 0.3110, "published few-shot evaluation"),
        make("BLOOM (few-shot k=5)", "176B", 0.4070, 0.3290, "published few-shot evaluation"),
    };
}

std::vector<AblationCell> ablate_data_size(const std::vector<McqExample>& dataset,
                                           const std::vector<RationaleRecord>& rationales,
                                           const PipelineConfig& base_config,
                                           const std::filesystem::path& run_root,
                                           const AblateOptions& options) {
    std::vector<AblationCell> grid;
    for (const std::string& fraction : options.fractions) {
        SubsetSpec sub = parse_fraction(fraction);
        sub.seed = base_config.subset.seed;
        validate_subset_spec(sub);
        std::string fraction_tag = std::to_string(sub.fraction_num) + "of" +
                                   std::to_string(sub.fraction_den);
        for (const std::string& regime : options.regimes) {
            AblationCell cell;
            cell.dataset_id = base_config.dataset_id;
            cell.fraction = sub.fraction_string();
            cell.regime = regime;
            try {
                PipelineConfig config = base_config;
                config.subset = sub;
                std::filesystem::path run_dir =
                    run_root / (base_config.dataset_id + "_" + fraction_tag + "_" + regime);
                if (regime != "baseline_ft" && regime != "one_stage" && regime != "scicot") {
                    throw ConfigError("unknown ablation regime '" + regime +
                                      "' (expected baseline_ft, one_stage or scicot)");
                }
                std::string expected_run_id = compute_run_id(regime, dataset, config);
                RunResult run;
                // A finished cell with the same inputs is reused rather than
                // retrained, so a repeated sweep is a no-op.
                if (std::filesystem::exists(run_dir / "manifest.json")) {
                    RunResult prior = load_run(run_dir);
                    if (prior.manifest.regime == regime &&
                        prior.manifest.run_id == expected_run_id) {
                        run = std::move(prior);
                        cell.reused = true;
                    }
                }
                if (!cell.reused) {
                    if (regime == "baseline_ft") {
                        run = run_baseline(dataset, config, run_dir);
                    } else if (regime == "one_stage") {
                        run = run_one_stage(dataset, rationales, config, run_dir);
                    } else {
                        run = run_scicot(dataset, rationales, config, run_dir);
                    }
                }
                PipelineConfig effective = PipelineConfig::from_json(run.manifest.config);
                std::string pred_rel = "predictions/" + effective.eval_split + ".jsonl";
                std::vector<Prediction> preds;
                auto prior_pred = run.manifest.artifacts.find(pred_rel);
                if (cell.reused && prior_pred != run.manifest.artifacts.end() &&
                    std::filesystem::exists(run_dir / pred_rel) &&
                    sha256_file_hex(run_dir / pred_rel) == prior_pred->second) {
                    preds = read_predictions_jsonl(run_dir / pred_rel);
                } else {
                    preds = predict_eval_split(run, dataset, options.predict_workers);
                }
                std::vector<McqExample> eval_examples;
                for (const McqExample& ex : dataset) {
                    if (split_name(ex.split) == effective.eval_split) {
                        eval_examples.push_back(ex);
                    }
                }
                ScoredEval scored = score_predictions(preds, eval_examples);
                cell.train_count = run.manifest.counts.at("train_examples").get<std::size_t>();
                cell.accuracy = scored.accuracy;
                cell.correct = scored.correct;
                cell.total = scored.total;
                cell.run_id = run.manifest.run_id;
            } catch (const std::exception& e) {
                cell.error = e.what();
                cell.reused = false;
            }
            grid.push_back(std::move(cell));
        }
    }
    return grid;
}

ReportFormat report_format_from_name(const std::string& name) {
    if (name == "markdown" || name == "md") return ReportFormat::markdown;
    if (name == "csv") return ReportFormat::csv;
    if (name == "json") return ReportFormat::json;
    throw ConfigError("unknown report format '" + name +
                      "' (expected markdown, csv or json)");
}

namespace {

std::string csv_field(const std::string& value) {
    bool needs_quotes = value.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quotes) {
        return value;
    }
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out += c;
        }
    }
    out += "\"";
    return out;
}

std::string csv_line(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += csv_field(fields[i]);
    }
    line += '\n';
    return line;
}

// Shortest representation that parses back to the identical double.
std::string exact_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw DataError(context + ": bad number '" + s + "'");
    }
}

std::size_t parse_count(const std::string& s, const std::string& context) {
    try {
        return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
        throw DataError(context + ": bad count '" + s + "'");
    }
}

// RFC 4180 records; quoted fields may span lines.
std::vector<std::vector<std::string>> parse_csv_records(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&]() {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&]() {
        if (field_started || !field.empty() || !record.empty()) {
            end_field();
            records.push_back(record);
            record.clear();
        }
    };
    while (i < text.size()) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                in_quotes = false;
                ++i;
                continue;
            }
            field += c;
            ++i;
            continue;
        }
        if (c == '"') {
            in_quotes = true;
            field_started = true;
            ++i;
            continue;
        }
        if (c == ',') {
            end_field();
            field_started = true;  // the next field exists even if empty
            ++i;
            continue;
        }
        if (c == '\r') {
            ++i;
            continue;
        }
        if (c == '\n') {
            end_record();
            ++i;
            continue;
        }
        field += c;
        field_started = true;
        ++i;
    }
    if (in_quotes) {
        throw DataError("report csv ends inside a quoted field");
    }
    end_record();
    return records;
}

std::string render_markdown(const EvalReport& report) {
    std::string out;
    out += "# Evaluation report\n\n";

    out += "## Results\n\n";
    std::set<std::string> dataset_set;
    for (const ReportRow& row : report.rows) {
        for (const auto& [dataset, acc] : row.accuracy) {
            dataset_set.insert(dataset);
        }
    }
    std::vector<std::string> datasets(dataset_set.begin(), dataset_set.end());
    out += "| Model | Size |";
    for (const std::string& d : datasets) {
        out += " " + d + " |";
    }
    out += " Source |\n";
    out += "| --- | --- |";
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        out += " --- |";
    }
    out += " --- |\n";
    for (const ReportRow& row : report.rows) {
        out += "| " + row.label + " | " + row.size_label + " |";
        for (const std::string& d : datasets) {
            auto it = row.accuracy.find(d);
            out += it == row.accuracy.end() ? " - |" : " " + format_percent(it->second) + " |";
        }
        out += row.reference ? " " + row.source_tag + " |\n" : " computed |\n";
    }
    out += "\n";

    out += "## Data-size ablation\n\n";
    out += "| Dataset | Fraction | Examples | Regime | Accuracy |\n";
    out += "| --- | --- | --- | --- | --- |\n";
    for (const AblationCell& cell : report.ablation) {
        out += "| " + cell.dataset_id + " | " + cell.fraction + " | " +
               std::to_string(cell.train_count) + " | " + cell.regime + " | ";
        if (cell.accuracy) {
            out += format_percent(*cell.accuracy);
        } else {
            out += "failed: " + cell.error;
        }
        out += " |\n";
    }
    out += "\n";

    if (!report.regime_results.empty()) {
        out += "## Run results\n\n";
        out += "| Run | Correct | Total | Accuracy |\n";
        out += "| --- | --- | --- | --- |\n";
        for (const auto& [key, eval] : report.regime_results) {
            out += "| " + key + " | " + std::to_string(eval.correct) + " | " +
                   std::to_string(eval.total) + " | " + format_percent(eval.accuracy) + " |\n";
        }
    }
    return out;
}

std::string render_csv(const EvalReport& report) {
    std::string out;
    for (const ReportRow& row : report.rows) {
        if (row.accuracy.empty()) {
            out += csv_line({"report_row", row.label, row.size_label, "", "",
                             row.reference ? "1" : "0", row.source_tag});
            continue;
        }
        for (const auto& [dataset, acc] : row.accuracy) {
            out += csv_line({"report_row", row.label, row.size_label, dataset, exact_double(acc),
                             row.reference ? "1" : "0", row.source_tag});
        }
    }
    for (const AblationCell& cell : report.ablation) {
        out += csv_line({"ablation_cell", cell.dataset_id, cell.fraction,
                         std::to_string(cell.train_count), cell.regime,
                         cell.accuracy ? exact_double(*cell.accuracy) : "",
                         std::to_string(cell.correct), std::to_string(cell.total), cell.error,
                         cell.run_id, cell.reused ? "1" : "0"});
    }
    for (const auto& [key, eval] : report.regime_results) {
        out += csv_line({"regime_result", key, std::to_string(eval.correct),
                         std::to_string(eval.total), exact_double(eval.accuracy)});
        for (const PredictionRow& row : eval.rows) {
            out += csv_line({"prediction_row", key, row.id, row.raw_output,
                             row.extracted ? "1" : "0", row.extracted.value_or(""), row.gold,
                             row.correct ? "1" : "0"});
        }
    }
    return out;
}

}  // namespace

std::string render_report(const EvalReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::markdown:
            return render_markdown(report);
        case ReportFormat::csv:
            return render_csv(report);
        case ReportFormat::json:
            return report.to_json().dump(2) + "\n";
    }
    throw ConfigError("unhandled report format");
}

EvalReport parse_report_csv(const std::string& text) {
    EvalReport report;
    std::size_t line_no = 0;
    for (const std::vector<std::string>& rec : parse_csv_records(text)) {
        ++line_no;
        std::string context = "report csv record " + std::to_string(line_no);
        if (rec.empty()) {
            continue;
        }
        const std::string& kind = rec[0];
        if (kind == "report_row") {
            if (rec.size() != 7) {
                throw DataError(context + ": report_row needs 7 fields, got " +
                                std::to_string(rec.size()));
            }
            ReportRow* row = find_row(report.rows, rec[1], rec[2]);
            if (!row) {
                ReportRow fresh;
                fresh.label = rec[1];
                fresh.size_label = rec[2];
                fresh.reference = rec[5] == "1";
                fresh.source_tag = rec[6];
                report.rows.push_back(std::move(fresh));
                row = &report.rows.back();
            }
            if (!rec[3].empty()) {
                row->accuracy[rec[3]] = parse_double(rec[4], context);
            }
        } else if (kind == "ablation_cell") {
            if (rec.size() != 11) {
                throw DataError(context + ": ablation_cell needs 11 fields, got " +
                                std::to_string(rec.size()));
            }
            AblationCell cell;
            cell.dataset_id = rec[1];
            cell.fraction = rec[2];
            cell.train_count = parse_count(rec[3], context);
            cell.regime = rec[4];
            if (!rec[5].empty()) {
                cell.accuracy = parse_double(rec[5], context);
            }
            cell.correct = parse_count(rec[6], context);
            cell.total = parse_count(rec[7], context);
            cell.error = rec[8];
            cell.run_id = rec[9];
            cell.reused = rec[10] == "1";
            report.ablation.push_back(std::move(cell));
        } else if (kind == "regime_result") {
            if (rec.size() != 5) {
                throw DataError(context + ": regime_result needs 5 fields, got " +
                                std::to_string(rec.size()));
            }
            ScoredEval eval;
            eval.correct = parse_count(rec[2], context);
            eval.total = parse_count(rec[3], context);
            eval.accuracy = parse_double(rec[4], context);
            report.regime_results[rec[1]] = std::move(eval);
        } else if (kind == "prediction_row") {
            if (rec.size() != 8) {
                throw DataError(context + ": prediction_row needs 8 fields, got " +
                                std::to_string(rec.size()));
            }
            auto it = report.regime_results.find(rec[1]);
            if (it == report.regime_results.end()) {
                throw DataError(context + ": prediction_row references unknown run '" + rec[1] +
                                "'");
            }
            PredictionRow row;
            row.id = rec[2];
            row.raw_output = rec[3];
            if (rec[4] == "1") {
                row.extracted = rec[5];
            }
            row.gold = rec[6];
            row.correct = rec[7] == "1";
            it->second.rows.push_back(std::move(row));
        } else {
            throw DataError(context + ": unknown record kind '" + kind + "'");
        }
    }
    return report;
}

}  // namespace scicot
