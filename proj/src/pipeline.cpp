#include "scicot/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include "scicot/markers.hpp"

namespace scicot {

namespace {

json subset_to_json(const SubsetSpec& s) {
    json j{{"fraction", s.fraction_string()}, {"seed", s.seed}, {"applies_to", s.applies_to}};
    if (s.target_count) {
        j["target_count"] = *s.target_count;
    }
    return j;
}

SubsetSpec subset_from_json(const json& j) {
    json_require_known_keys(j, {"fraction", "seed", "applies_to", "target_count"}, "subset");
    SubsetSpec s = parse_fraction(j.value("fraction", "1/1"));
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("applies_to")) s.applies_to = j.at("applies_to").get<std::string>();
    if (j.contains("target_count")) s.target_count = j.at("target_count").get<std::size_t>();
    validate_subset_spec(s);
    return s;
}

json decode_to_json(const GenerateOptions& d) {
    return json{{"strategy", d.strategy}, {"beam_width", d.beam_width}};
}

GenerateOptions decode_from_json(const json& j) {
    json_require_known_keys(j, {"strategy", "beam_width"}, "decode");
    GenerateOptions d;
    if (j.contains("strategy")) d.strategy = j.at("strategy").get<std::string>();
    if (j.contains("beam_width")) d.beam_width = j.at("beam_width").get<int>();
    return d;
}

constexpr const char* kManifestFile = "manifest.json";

class StageTimer {
  public:
    explicit StageTimer(json& sink) : sink_(sink) {}
    template <typename F>
    auto time(const std::string& name, F&& fn) {
        auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            sink_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
        } else {
            auto result = fn();
            sink_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
            return result;
        }
    }

  private:
    json& sink_;
};

std::vector<McqExample> split_of(const std::vector<McqExample>& dataset, const std::string& name) {
    std::vector<McqExample> out;
    for (const McqExample& ex : dataset) {
        if (split_name(ex.split) == name) {
            out.push_back(ex);
        }
    }
    return out;
}

std::vector<McqExample> select_train(const std::vector<McqExample>& dataset,
                                     const PipelineConfig& config) {
    std::vector<McqExample> train = split_of(dataset, "train");
    std::vector<McqExample> subset = subsample(train, config.subset);
    if (subset.empty()) {
        throw DataError("train subset is empty (split size " + std::to_string(train.size()) +
                        ", fraction " + config.subset.fraction_string() + ")");
    }
    return subset;
}

std::string ids_digest(const std::vector<McqExample>& examples) {
    std::string joined;
    for (const McqExample& ex : examples) {
        joined += ex.id;
        joined += '\n';
    }
    return sha256_hex(joined);
}

// Latest accepted record per example id, in store order.
std::map<std::string, RationaleRecord> accepted_by_id(const std::vector<RationaleRecord>& records,
                                                      RationaleSource source) {
    std::map<std::string, RationaleRecord> out;
    for (const RationaleRecord& r : records) {
        if (r.source == source && r.clean_status == CleanStatus::auto_cleaned) {
            out[r.example_id] = r;
        }
    }
    return out;
}

void require_coverage(const std::map<std::string, RationaleRecord>& accepted,
                      const std::vector<McqExample>& train, const std::string& what) {
    std::vector<std::string> missing;
    for (const McqExample& ex : train) {
        if (accepted.find(ex.id) == accepted.end()) {
            missing.push_back(ex.id);
        }
    }
    if (missing.empty()) {
        return;
    }
    std::string listed;
    std::size_t shown = std::min<std::size_t>(missing.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) {
        if (i) listed += ", ";
        listed += missing[i];
    }
    if (missing.size() > shown) {
        listed += " and " + std::to_string(missing.size() - shown) + " more";
    }
    throw DataError("no accepted " + what + " rationale for " + std::to_string(missing.size()) +
                    " of " + std::to_string(train.size()) + " train examples: " + listed);
}

void add_artifact(RunManifest& manifest, const std::filesystem::path& run_dir,
                  const std::filesystem::path& file) {
    manifest.artifacts[std::filesystem::relative(file, run_dir).generic_string()] =
        sha256_file_hex(file);
}

// Model metrics files carry wall-clock timings, so they stay out of the
// digest map; everything else under the model dir is content-addressed.
void add_model_artifacts(RunManifest& manifest, const std::filesystem::path& run_dir,
                         const ModelHandle& handle) {
    for (const char* name : {"config.json", "fingerprint.txt"}) {
        add_artifact(manifest, run_dir, handle.dir / name);
    }
    if (handle.backend == "builtin") {
        add_artifact(manifest, run_dir, handle.dir / "weights.bin");
        add_artifact(manifest, run_dir, handle.dir / "tokenizer.json");
    }
}

RunManifest base_manifest(const std::string& regime, const std::vector<McqExample>& dataset,
                          const PipelineConfig& config) {
    RunManifest m;
    m.run_id = compute_run_id(regime, dataset, config);
    m.regime = regime;
    m.dataset_id = config.dataset_id;
    m.config = config.to_json();
    m.template_hash = config.prompt.hash();
    m.counts = json::object();
    m.timings_seconds = json::object();
    m.created_at_unix = static_cast<std::int64_t>(unix_time_seconds());
    return m;
}

void prepare_run_dir(const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir / "pairs");
    std::filesystem::create_directories(run_dir / "rationales");
    std::filesystem::create_directories(run_dir / "models");
    std::filesystem::create_directories(run_dir / "predictions");
}

void record_train_counts(RunManifest& manifest, const std::vector<McqExample>& dataset,
                         const std::vector<McqExample>& train) {
    manifest.counts["train_split"] = split_of(dataset, "train").size();
    manifest.counts["train_examples"] = train.size();
    manifest.counts["train_ids_sha256"] = ids_digest(train);
}

// The accepted teacher records actually consumed, persisted in train order
// so the run replays from the manifest plus the raw dataset alone.
std::filesystem::path persist_used_rationales(
    const std::filesystem::path& run_dir, const std::vector<McqExample>& train,
    const std::map<std::string, RationaleRecord>& accepted) {
    std::vector<RationaleRecord> used;
    used.reserve(train.size());
    for (const McqExample& ex : train) {
        used.push_back(accepted.at(ex.id));
    }
    std::filesystem::path path = run_dir / "rationales" / "teacher_used.jsonl";
    write_store(used, path);
    return path;
}

}  // namespace

void PipelineConfig::validate() const {
    validate_subset_spec(subset);
    trainer.validate();
    if (stage2_source != "student" && stage2_source != "teacher") {
        throw ConfigError("stage2_source must be 'student' or 'teacher', got '" + stage2_source +
                          "'");
    }
    if (eval_split != "train" && eval_split != "dev" && eval_split != "test") {
        throw ConfigError("eval_split must be train, dev or test, got '" + eval_split + "'");
    }
    if (stage1_workers < 1) {
        throw ConfigError("stage1_workers must be at least 1");
    }
    if (decode.strategy != "greedy" && decode.strategy != "beam") {
        throw ConfigError("decode.strategy must be 'greedy' or 'beam', got '" + decode.strategy +
                          "'");
    }
    if (decode.strategy == "beam" && decode.beam_width <= 0) {
        throw ConfigError("decode.beam_width must be positive");
    }
}

json PipelineConfig::to_json() const {
    return json{{"dataset_id", dataset_id},
                {"subset", subset_to_json(subset)},
                {"trainer", trainer.to_json()},
                {"prompt", prompt.to_json()},
                {"cleaning", cleaning.to_json()},
                {"decode", decode_to_json(decode)},
                {"stage2_source", stage2_source},
                {"eval_split", eval_split},
                {"stage1_workers", stage1_workers}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    json_require_known_keys(j,
                            {"dataset_id", "subset", "trainer", "prompt", "cleaning", "decode",
                             "stage2_source", "eval_split", "stage1_workers"},
                            "pipeline config");
    PipelineConfig c;
    if (j.contains("dataset_id")) c.dataset_id = j.at("dataset_id").get<std::string>();
    if (j.contains("subset")) c.subset = subset_from_json(j.at("subset"));
    if (j.contains("trainer")) c.trainer = TrainerConfig::from_json(j.at("trainer"));
    if (j.contains("prompt")) c.prompt = PromptTemplate::from_json(j.at("prompt"));
    if (j.contains("cleaning")) c.cleaning = CleaningRules::from_json(j.at("cleaning"));
    if (j.contains("decode")) c.decode = decode_from_json(j.at("decode"));
    if (j.contains("stage2_source")) c.stage2_source = j.at("stage2_source").get<std::string>();
    if (j.contains("eval_split")) c.eval_split = j.at("eval_split").get<std::string>();
    if (j.contains("stage1_workers")) c.stage1_workers = j.at("stage1_workers").get<int>();
    c.validate();
    return c;
}

json RunManifest::to_json() const {
    return json{{"kind", "run_manifest"},
                {"schema_version", 1},
                {"run_id", run_id},
                {"regime", regime},
                {"dataset_id", dataset_id},
                {"config", config},
                {"template_hash", template_hash},
                {"model_fingerprints", model_fingerprints},
                {"artifacts", artifacts},
                {"counts", counts},
                {"timings_seconds", timings_seconds},
                {"created_at_unix", created_at_unix}};
}

RunManifest RunManifest::from_json(const json& j) {
    if (!j.is_object() || j.value("kind", "") != "run_manifest") {
        throw DataError("not a run manifest");
    }
    if (j.value("schema_version", 0) != 1) {
        throw DataError("run manifest schema_version " + j.value("schema_version", json(0)).dump() +
                        " is not supported (want 1)");
    }
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.regime = j.at("regime").get<std::string>();
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.config = j.at("config");
    m.template_hash = j.at("template_hash").get<std::string>();
    m.model_fingerprints = j.at("model_fingerprints").get<std::map<std::string, std::string>>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.counts = j.at("counts");
    m.timings_seconds = j.at("timings_seconds");
    m.created_at_unix = j.at("created_at_unix").get<std::int64_t>();
    return m;
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir) {
    write_text_file_atomic(run_dir / kManifestFile, manifest.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& run_dir) {
    std::filesystem::path path = run_dir / kManifestFile;
    try {
        return RunManifest::from_json(json::parse(read_text_file(path)));
    } catch (const json::exception& e) {
        throw DataError("run manifest is not valid JSON: " + path.string() + ": " + e.what());
    }
}

void validate_manifest(const std::filesystem::path& run_dir) {
    RunManifest m = read_manifest(run_dir);
    for (const auto& [rel, digest] : m.artifacts) {
        std::filesystem::path p = run_dir / rel;
        if (!std::filesystem::exists(p)) {
            throw DataError("manifest artifact missing on disk: " + p.string());
        }
        std::string actual = sha256_file_hex(p);
        if (actual != digest) {
            throw DataError("manifest artifact digest mismatch for " + rel + ": recorded " +
                            digest + ", found " + actual);
        }
    }
}

bool manifests_equal_modulo_timestamps(const RunManifest& a, const RunManifest& b) {
    json ja = a.to_json();
    json jb = b.to_json();
    for (json* j : {&ja, &jb}) {
        j->erase("timings_seconds");
        j->erase("created_at_unix");
    }
    return ja == jb;
}

std::string compute_run_id(const std::string& regime, const std::vector<McqExample>& dataset,
                           const PipelineConfig& config) {
    std::string dataset_dump;
    for (const McqExample& ex : dataset) {
        dataset_dump += example_to_json(ex).dump();
        dataset_dump += '\n';
    }
    json material{{"regime", regime},
                  {"dataset_sha256", sha256_hex(dataset_dump)},
                  {"config", config.to_json()}};
    return sha256_hex(material.dump());
}

RunResult run_baseline(const std::vector<McqExample>& dataset, const PipelineConfig& config,
                       const std::filesystem::path& run_dir) {
    config.validate();
    std::vector<McqExample> train_set = select_train(dataset, config);
    prepare_run_dir(run_dir);

    RunResult result;
    result.run_dir = run_dir;
    result.manifest = base_manifest("baseline_ft", dataset, config);
    StageTimer timer(result.manifest.timings_seconds);

    std::vector<TrainingPair> pairs;
    pairs.reserve(train_set.size());
    for (const McqExample& ex : train_set) {
        pairs.push_back(format_pair(ex, Regime::baseline_ft));
    }
    std::filesystem::path pairs_path = run_dir / "pairs" / "baseline_ft.jsonl";
    write_pairs_jsonl(pairs, pairs_path);

    result.model = timer.time("train", [&]() {
        return train(pairs, config.trainer, run_dir / "models" / "baseline_ft");
    });

    record_train_counts(result.manifest, dataset, train_set);
    result.manifest.counts["train_pairs"] = pairs.size();
    result.manifest.model_fingerprints["baseline_ft"] = result.model->fingerprint;
    add_artifact(result.manifest, run_dir, pairs_path);
    add_model_artifacts(result.manifest, run_dir, *result.model);
    write_manifest(result.manifest, run_dir);
    return result;
}

RunResult run_one_stage(const std::vector<McqExample>& dataset,
                        const std::vector<RationaleRecord>& rationales,
                        const PipelineConfig& config, const std::filesystem::path& run_dir) {
    config.validate();
    std::vector<McqExample> train_set = select_train(dataset, config);
    std::map<std::string, RationaleRecord> accepted =
        accepted_by_id(rationales, RationaleSource::teacher);
    require_coverage(accepted, train_set, "teacher");
    prepare_run_dir(run_dir);

    RunResult result;
    result.run_dir = run_dir;
    result.manifest = base_manifest("one_stage", dataset, config);
    StageTimer timer(result.manifest.timings_seconds);

    std::filesystem::path used_path = persist_used_rationales(run_dir, train_set, accepted);

    std::vector<TrainingPair> pairs;
    pairs.reserve(train_set.size());
    for (const McqExample& ex : train_set) {
        pairs.push_back(format_pair(ex, Regime::one_stage, accepted.at(ex.id)));
    }
    std::filesystem::path pairs_path = run_dir / "pairs" / "one_stage.jsonl";
    write_pairs_jsonl(pairs, pairs_path);

    result.model = timer.time("train", [&]() {
        return train(pairs, config.trainer, run_dir / "models" / "one_stage");
    });

    record_train_counts(result.manifest, dataset, train_set);
    result.manifest.counts["train_pairs"] = pairs.size();
    result.manifest.model_fingerprints["one_stage"] = result.model->fingerprint;
    add_artifact(result.manifest, run_dir, pairs_path);
    add_artifact(result.manifest, run_dir, used_path);
    add_model_artifacts(result.manifest, run_dir, *result.model);
    write_manifest(result.manifest, run_dir);
    return result;
}

RunResult run_scicot(const std::vector<McqExample>& dataset,
                     const std::vector<RationaleRecord>& rationales, const PipelineConfig& config,
                     const std::filesystem::path& run_dir) {
    config.validate();
    std::vector<McqExample> train_set = select_train(dataset, config);
    std::map<std::string, RationaleRecord> teacher_accepted =
        accepted_by_id(rationales, RationaleSource::teacher);
    require_coverage(teacher_accepted, train_set, "teacher");
    prepare_run_dir(run_dir);

    RunResult result;
    result.run_dir = run_dir;
    result.manifest = base_manifest("scicot", dataset, config);
    StageTimer timer(result.manifest.timings_seconds);

    std::filesystem::path used_path = persist_used_rationales(run_dir, train_set, teacher_accepted);

    // Stage 1: question -> teacher rationale.
    std::vector<TrainingPair> stage1_pairs;
    stage1_pairs.reserve(train_set.size());
    for (const McqExample& ex : train_set) {
        stage1_pairs.push_back(
            format_pair(ex, Regime::stage1_rationale, teacher_accepted.at(ex.id)));
    }
    std::filesystem::path stage1_pairs_path = run_dir / "pairs" / "stage1_rationale.jsonl";
    write_pairs_jsonl(stage1_pairs, stage1_pairs_path);
    result.stage1 = timer.time("train_stage1", [&]() {
        return train(stage1_pairs, config.trainer,
                                 run_dir / "models" / "stage1_rationale");
    });

    // Stage 1 inference over the train split: the student writes the
    // rationales that stage 2 will train on.
    std::vector<RationaleRecord> student(train_set.size());
    timer.time("generate_student_rationales", [&]() {
        std::atomic<std::size_t> cursor{0};
        auto worker = [&]() {
            while (true) {
                std::size_t i = cursor.fetch_add(1);
                if (i >= train_set.size()) {
                    return;
                }
                GenerateResult gen =
                    generate(*result.stage1, render_question_block(train_set[i]), config.decode);
                CleanOutcome outcome = clean_text(gen.text, config.cleaning);
                RationaleRecord rec;
                rec.example_id = train_set[i].id;
                rec.rationale_text = outcome.text;
                rec.source = RationaleSource::student_stage1;
                rec.run_id = result.manifest.run_id;
                rec.clean_status = outcome.status;
                rec.fired_rules = outcome.fired_rules;
                student[i] = rec;
            }
        };
        int workers = std::min<int>(config.stage1_workers, static_cast<int>(train_set.size()));
        if (workers <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) {
                pool.emplace_back(worker);
            }
            for (std::thread& t : pool) {
                t.join();
            }
        }
    });
    std::filesystem::path student_path = run_dir / "rationales" / "student_stage1.jsonl";
    write_store(student, student_path);

    // Stage 2: question + rationale -> answer. Default source is the stage-1
    // student generation; dropped examples leave training only, never eval.
    std::map<std::string, RationaleRecord> stage2_source_records;
    if (config.stage2_source == "student") {
        stage2_source_records = accepted_by_id(student, RationaleSource::student_stage1);
    } else {
        stage2_source_records = teacher_accepted;
    }
    std::vector<TrainingPair> stage2_pairs;
    std::vector<std::string> dropped_ids;
    for (const McqExample& ex : train_set) {
        auto it = stage2_source_records.find(ex.id);
        if (it == stage2_source_records.end()) {
            dropped_ids.push_back(ex.id);
            continue;
        }
        stage2_pairs.push_back(format_pair(ex, Regime::stage2_answer, it->second));
    }
    if (stage2_pairs.empty()) {
        throw DataError("every stage-1 generation was dropped by cleaning; nothing left to train "
                        "stage 2 on");
    }
    std::filesystem::path stage2_pairs_path = run_dir / "pairs" / "stage2_answer.jsonl";
    write_pairs_jsonl(stage2_pairs, stage2_pairs_path);
    result.stage2 = timer.time("train_stage2", [&]() {
        return train(stage2_pairs, config.trainer,
                                 run_dir / "models" / "stage2_answer");
    });

    record_train_counts(result.manifest, dataset, train_set);
    result.manifest.counts["stage1_pairs"] = stage1_pairs.size();
    result.manifest.counts["student_generated"] = student.size();
    result.manifest.counts["stage2_pairs"] = stage2_pairs.size();
    result.manifest.counts["dropped_stage1"] = dropped_ids.size();
    result.manifest.counts["dropped_stage1_ids"] = dropped_ids;
    result.manifest.model_fingerprints["stage1_rationale"] = result.stage1->fingerprint;
    result.manifest.model_fingerprints["stage2_answer"] = result.stage2->fingerprint;
    add_artifact(result.manifest, run_dir, stage1_pairs_path);
    add_artifact(result.manifest, run_dir, stage2_pairs_path);
    add_artifact(result.manifest, run_dir, student_path);
    add_artifact(result.manifest, run_dir, used_path);
    add_model_artifacts(result.manifest, run_dir, *result.stage1);
    add_model_artifacts(result.manifest, run_dir, *result.stage2);

    if (config.stage2_source == "student") {
        DataflowCheck check = verify_stage2_dataflow(run_dir);
        result.manifest.counts["stage2_dataflow_checked"] = check.checked;
    }
    write_manifest(result.manifest, run_dir);
    return result;
}

RunResult load_run(const std::filesystem::path& run_dir) {
    RunResult result;
    result.run_dir = run_dir;
    result.manifest = read_manifest(run_dir);
    if (result.manifest.regime == "scicot") {
        result.stage1 = load_handle(run_dir / "models" / "stage1_rationale");
        result.stage2 = load_handle(run_dir / "models" / "stage2_answer");
    } else {
        result.model = load_handle(run_dir / "models" / result.manifest.regime);
    }
    return result;
}

namespace {

Prediction predict_impl(const RunResult& run, const PipelineConfig& config,
                        const McqExample& example) {
    std::string question = render_question_block(example);
    Prediction pred;
    pred.example_id = example.id;
    if (run.manifest.regime == "baseline_ft") {
        pred.raw_output = generate(*run.model, question, config.decode).text;
    } else if (run.manifest.regime == "one_stage") {
        std::string out = generate(*run.model, question, config.decode).text;
        OneStageParse parsed = parse_one_stage(out);
        pred.rationale = parsed.rationale_text;
        pred.raw_output = parsed.answer_text.value_or("");
    } else if (run.manifest.regime == "scicot") {
        std::string raw_rationale =
            generate(*run.stage1, question, config.decode).text;
        // The stage-2 model trained on cleaned rationales, so eval inputs go
        // through the same cleaning; degraded generations still evaluate.
        CleanOutcome outcome = clean_text(raw_rationale, config.cleaning);
        pred.rationale = outcome.text;
        std::string stage2_input = question + "\n" + std::string(kRationaleMarker) + " " +
                                   outcome.text;
        pred.raw_output = generate(*run.stage2, stage2_input, config.decode).text;
    } else {
        throw DataError("run manifest has unknown regime '" + run.manifest.regime + "'");
    }
    return pred;
}

}  // namespace

Prediction predict(const RunResult& run, const McqExample& example) {
    return predict_impl(run, PipelineConfig::from_json(run.manifest.config), example);
}

std::vector<Prediction> predict_examples(const RunResult& run,
                                         const std::vector<McqExample>& examples, int workers) {
    PipelineConfig config = PipelineConfig::from_json(run.manifest.config);
    std::vector<Prediction> out(examples.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            std::size_t i = cursor.fetch_add(1);
            if (i >= examples.size()) {
                return;
            }
            out[i] = predict_impl(run, config, examples[i]);
        }
    };
    int n = std::min<int>(std::max(workers, 1), static_cast<int>(examples.size()));
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n; ++w) {
            pool.emplace_back(worker);
        }
        for (std::thread& t : pool) {
            t.join();
        }
    }
    return out;
}

void write_predictions_jsonl(const std::vector<Prediction>& predictions,
                             const std::filesystem::path& path) {
    std::string body;
    for (const Prediction& p : predictions) {
        json j{{"id", p.example_id}, {"raw_output", p.raw_output}};
        if (p.rationale) {
            j["rationale"] = *p.rationale;
        }
        body += j.dump();
        body += '\n';
    }
    write_text_file_atomic(path, body);
}

std::vector<Prediction> read_predictions_jsonl(const std::filesystem::path& path) {
    std::vector<Prediction> out;
    std::size_t line_no = 0;
    for (const std::string& line : read_lines(path)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("predictions file " + path.string() + " line " +
                            std::to_string(line_no) + " is not valid JSON: " + e.what());
        }
        Prediction p;
        p.example_id = j.at("id").get<std::string>();
        p.raw_output = j.at("raw_output").get<std::string>();
        if (j.contains("rationale")) {
            p.rationale = j.at("rationale").get<std::string>();
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Prediction> predict_eval_split(RunResult& run, const std::vector<McqExample>& dataset,
                                           int workers) {
    PipelineConfig config = PipelineConfig::from_json(run.manifest.config);
    std::vector<McqExample> eval_examples = split_of(dataset, config.eval_split);
    if (eval_examples.empty()) {
        throw DataError("eval split '" + config.eval_split + "' has no examples");
    }
    std::vector<Prediction> preds = predict_examples(run, eval_examples, workers);
    std::filesystem::path path = run.run_dir / "predictions" / (config.eval_split + ".jsonl");
    write_predictions_jsonl(preds, path);
    run.manifest.counts["eval_examples"] = eval_examples.size();
    add_artifact(run.manifest, run.run_dir, path);
    write_manifest(run.manifest, run.run_dir);
    return preds;
}

DataflowCheck verify_stage2_dataflow(const std::filesystem::path& run_dir) {
    std::vector<TrainingPair> pairs =
        read_pairs_jsonl(run_dir / "pairs" / "stage2_answer.jsonl");
    std::vector<RationaleRecord> records =
        read_store(run_dir / "rationales" / "student_stage1.jsonl");
    std::map<std::string, const RationaleRecord*> by_id;
    for (const RationaleRecord& r : records) {
        if (r.source == RationaleSource::student_stage1) {
            by_id[r.example_id] = &r;
        }
    }
    DataflowCheck check;
    for (const TrainingPair& pair : pairs) {
        ++check.checked;
        std::optional<std::string> span = extract_rationale_span(pair.input_text);
        if (!span) {
            throw DataError("stage-2 pair " + pair.example_id + " has no rationale span");
        }
        auto it = by_id.find(pair.example_id);
        if (it == by_id.end()) {
            throw DataError("stage-2 pair " + pair.example_id +
                            " has no stored stage-1 generation");
        }
        if (*span != it->second->rationale_text) {
            throw DataError("stage-2 input rationale differs from the stored stage-1 generation "
                            "for " +
                            pair.example_id);
        }
        ++check.matched;
    }
    return check;
}

}  // namespace scicot
