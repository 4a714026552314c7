#include "scicot/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cerrno>
#include <cstring>
#include <iostream>
#include <map>
#include <memory>
#include <utility>

#include "scicot/evalrun.hpp"
#include "scicot/synthetic.hpp"

namespace scicot {

namespace {

constexpr const char* kLockName = ".scicot_lock";

// One CLI process per output directory. The lock is advisory: a crashed
// process leaves it behind and the error message says how to recover.
class DirectoryLock {
  public:
    explicit DirectoryLock(const std::filesystem::path& dir) {
        std::filesystem::create_directories(dir);
        path_ = dir / kLockName;
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            if (errno == EEXIST) {
                throw ConfigError("directory '" + dir.string() +
                                  "' is locked by another process; if that process is gone, "
                                  "delete '" +
                                  path_.string() + "' and rerun");
            }
            throw DataError("cannot create lock file '" + path_.string() +
                            "': " + std::strerror(errno));
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        ssize_t n = ::write(fd_, pid.data(), pid.size());
        (void)n;
    }

    ~DirectoryLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            std::filesystem::remove(path_, ec);
        }
    }

    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

  private:
    std::filesystem::path path_;
    int fd_ = -1;
};

std::vector<std::string> split_csv_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    for (char c : text) {
        if (c == ',') {
            std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
            item.clear();
        } else {
            item += c;
        }
    }
    std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
    return out;
}

DecodeSettings teacher_decode_from_json(const json& j) {
    json_require_known_keys(j, {"temperature", "max_tokens", "n_samples"}, "teacher.decode");
    DecodeSettings d;
    if (j.contains("temperature")) d.temperature = j.at("temperature").get<double>();
    if (j.contains("max_tokens")) d.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("n_samples")) d.n_samples = j.at("n_samples").get<int>();
    return d;
}

}  // namespace

const std::vector<std::string>& run_regimes() {
    static const std::vector<std::string> kRegimes = {"baseline_ft", "one_stage", "scicot"};
    return kRegimes;
}

void require_run_regime(const std::string& name) {
    const auto& allowed = run_regimes();
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
        std::string list;
        for (const std::string& r : allowed) {
            if (!list.empty()) list += ", ";
            list += r;
        }
        throw ConfigError("unknown regime '" + name + "' (allowed: " + list + ")");
    }
}

json DatasetPaths::to_json() const {
    return json{{"id", id}, {"format", format}, {"train", train}, {"dev", dev}, {"test", test}};
}

DatasetPaths DatasetPaths::from_json(const json& j) {
    json_require_known_keys(j, {"id", "format", "train", "dev", "test"}, "dataset");
    DatasetPaths d;
    if (j.contains("id")) d.id = j.at("id").get<std::string>();
    if (j.contains("format")) d.format = j.at("format").get<std::string>();
    if (j.contains("train")) d.train = j.at("train").get<std::string>();
    if (j.contains("dev")) d.dev = j.at("dev").get<std::string>();
    if (j.contains("test")) d.test = j.at("test").get<std::string>();
    return d;
}

json TeacherSettings::to_json() const {
    return json{{"mock", mock},          {"mock_seed", mock_seed},
                {"endpoint", endpoint.to_json()}, {"decode", decode.to_json()},
                {"cache_dir", cache_dir}, {"concurrency", concurrency},
                {"max_attempts", max_attempts}};
}

TeacherSettings TeacherSettings::from_json(const json& j) {
    json_require_known_keys(
        j, {"mock", "mock_seed", "endpoint", "decode", "cache_dir", "concurrency", "max_attempts"},
        "teacher");
    TeacherSettings t;
    if (j.contains("mock")) t.mock = j.at("mock").get<bool>();
    if (j.contains("mock_seed")) t.mock_seed = j.at("mock_seed").get<std::uint64_t>();
    if (j.contains("endpoint")) t.endpoint = TeacherEndpoint::from_json(j.at("endpoint"));
    if (j.contains("decode")) t.decode = teacher_decode_from_json(j.at("decode"));
    if (j.contains("cache_dir")) t.cache_dir = j.at("cache_dir").get<std::string>();
    if (j.contains("concurrency")) t.concurrency = j.at("concurrency").get<int>();
    if (j.contains("max_attempts")) t.max_attempts = j.at("max_attempts").get<int>();
    return t;
}

void RunConfig::validate() const {
    if (dataset.id.empty()) {
        throw ConfigError("dataset.id must be non-empty");
    }
    format_from_name(dataset.format);
    require_run_regime(regime);
    if (regimes.empty()) {
        throw ConfigError("regimes must list at least one regime");
    }
    for (const std::string& r : regimes) {
        require_run_regime(r);
    }
    if (fractions.empty()) {
        throw ConfigError("fractions must list at least one fraction");
    }
    for (const std::string& f : fractions) {
        parse_fraction(f);
    }
    if (teacher.concurrency < 1) {
        throw ConfigError("teacher.concurrency must be at least 1");
    }
    if (teacher.max_attempts < 1) {
        throw ConfigError("teacher.max_attempts must be at least 1");
    }
    pipeline.validate();
}

json RunConfig::to_json() const {
    json pipe = pipeline.to_json();
    pipe.erase("dataset_id");  // mirrored from dataset.id, not stored twice
    return json{{"dataset", dataset.to_json()},
                {"teacher", teacher.to_json()},
                {"pipeline", pipe},
                {"regime", regime},
                {"fractions", fractions},
                {"regimes", regimes},
                {"output_dir", output_dir},
                {"rationales", rationales}};
}

RunConfig RunConfig::from_json(const json& j) {
    json_require_known_keys(j,
                            {"dataset", "teacher", "pipeline", "regime", "fractions", "regimes",
                             "output_dir", "rationales"},
                            "run config");
    RunConfig c;
    if (j.contains("dataset")) c.dataset = DatasetPaths::from_json(j.at("dataset"));
    if (j.contains("teacher")) c.teacher = TeacherSettings::from_json(j.at("teacher"));
    if (j.contains("pipeline")) {
        const json& p = j.at("pipeline");
        if (p.is_object() && p.contains("dataset_id")) {
            throw ConfigError("pipeline.dataset_id is derived from dataset.id; set dataset.id");
        }
        c.pipeline = PipelineConfig::from_json(p);
    }
    if (j.contains("regime")) c.regime = j.at("regime").get<std::string>();
    if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<std::string>>();
    if (j.contains("regimes")) c.regimes = j.at("regimes").get<std::vector<std::string>>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("rationales")) c.rationales = j.at("rationales").get<std::string>();
    c.pipeline.dataset_id = c.dataset.id;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string body = read_text_file(path);
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path.string() + "': " + e.what());
    }
    try {
        return RunConfig::from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path.string() + "': " + e.what());
    }
}

namespace {

// Every value a flag can override, shared across subcommands; only the
// parsed subcommand writes into it.
struct FlagOverrides {
    std::string dataset_id, format, train_path, dev_path, test_path;
    bool mock_teacher = false;
    std::uint64_t mock_seed = 0;
    std::string teacher_url, teacher_model, auth_env, cache_dir;
    int teacher_concurrency = 1;
    std::string backend, train_command, generate_command;
    std::uint64_t seed = 0;
    int epochs = 0;
    int batch_size = 0;
    double learning_rate = 0.0;
    std::string stage2_source, eval_split, strategy;
    int workers = 0;
    int beam_width = 0;
    std::string subset;
    std::uint64_t subset_seed = 0;
    std::int64_t target_count = -1;
    std::string regime, out_dir, rationales, fractions_csv, regimes_csv;
    std::string run_dir, raw_path;
    // report only
    std::vector<std::string> report_runs;
    std::string ablation_path, report_format = "markdown", report_out;
    bool no_references = false;
    // synth only
    std::uint64_t synth_seed = 7;
    int synth_train = 128, synth_dev = 8, synth_test = 48, synth_choices = 4;
    std::string synth_out = "data/synthetic";
};

struct OptSet {
    CLI::App* cmd = nullptr;
    std::map<std::string, CLI::Option*> by_name;

    template <typename T>
    void add(const std::string& name, T& slot, const std::string& desc) {
        by_name[name] = cmd->add_option(name, slot, desc);
    }
    void add_flag(const std::string& name, bool& slot, const std::string& desc) {
        by_name[name] = cmd->add_flag(name, slot, desc);
    }
    bool has(const std::string& name) const {
        auto it = by_name.find(name);
        return it != by_name.end() && it->second->count() > 0;
    }
};

void add_dataset_flags(OptSet& o, FlagOverrides& f) {
    o.add("--dataset-id", f.dataset_id, "dataset identifier used in outputs");
    o.add("--format", f.format, "dataset file format: jsonl or csv");
    o.add("--train", f.train_path, "train split file");
    o.add("--dev", f.dev_path, "dev split file");
    o.add("--test", f.test_path, "test split file");
}

void add_teacher_flags(OptSet& o, FlagOverrides& f) {
    o.add_flag("--mock-teacher", f.mock_teacher, "use the offline deterministic teacher");
    o.add("--mock-seed", f.mock_seed, "seed for the offline teacher");
    o.add("--teacher-url", f.teacher_url, "teacher endpoint base url");
    o.add("--teacher-model", f.teacher_model, "teacher model name");
    o.add("--auth-env", f.auth_env, "environment variable holding the teacher token");
    o.add("--cache-dir", f.cache_dir, "teacher response cache directory");
    o.add("--teacher-concurrency", f.teacher_concurrency, "parallel teacher requests");
}

void add_trainer_flags(OptSet& o, FlagOverrides& f) {
    o.add("--backend", f.backend, "training backend: builtin or external");
    o.add("--train-command", f.train_command, "external backend training command");
    o.add("--generate-command", f.generate_command, "external backend generation command");
    o.add("--seed", f.seed, "trainer seed");
    o.add("--epochs", f.epochs, "training epochs");
    o.add("--batch-size", f.batch_size, "training batch size");
    o.add("--lr", f.learning_rate, "learning rate");
}

void add_pipeline_flags(OptSet& o, FlagOverrides& f) {
    o.add("--stage2-source", f.stage2_source, "stage-2 rationale source: student or teacher");
    o.add("--eval-split", f.eval_split, "evaluation split: dev or test");
    o.add("--strategy", f.strategy, "decoding strategy: greedy or beam");
    o.add("--beam-width", f.beam_width, "beam width for beam decoding");
    o.add("--workers", f.workers, "worker threads for generation");
}

void add_subset_flags(OptSet& o, FlagOverrides& f) {
    o.add("--subset", f.subset, "train fraction: 1/8, 1/4, 1/2 or 1/1");
    o.add("--subset-seed", f.subset_seed, "subset sampling seed");
    o.add("--target-count", f.target_count, "exact subset size override (-1 clears)");
}

void apply_overrides(RunConfig& cfg, const FlagOverrides& f, const OptSet& o) {
    if (o.has("--dataset-id")) cfg.dataset.id = f.dataset_id;
    if (o.has("--format")) cfg.dataset.format = f.format;
    if (o.has("--train")) cfg.dataset.train = f.train_path;
    if (o.has("--dev")) cfg.dataset.dev = f.dev_path;
    if (o.has("--test")) cfg.dataset.test = f.test_path;

    if (o.has("--mock-teacher")) cfg.teacher.mock = f.mock_teacher;
    if (o.has("--mock-seed")) cfg.teacher.mock_seed = f.mock_seed;
    if (o.has("--teacher-url")) cfg.teacher.endpoint.base_url = f.teacher_url;
    if (o.has("--teacher-model")) cfg.teacher.endpoint.model = f.teacher_model;
    if (o.has("--auth-env")) cfg.teacher.endpoint.auth_env = f.auth_env;
    if (o.has("--cache-dir")) cfg.teacher.cache_dir = f.cache_dir;
    if (o.has("--teacher-concurrency")) cfg.teacher.concurrency = f.teacher_concurrency;

    if (o.has("--backend")) cfg.pipeline.trainer.backend = f.backend;
    if (o.has("--train-command")) cfg.pipeline.trainer.external.train_command = f.train_command;
    if (o.has("--generate-command")) {
        cfg.pipeline.trainer.external.generate_command = f.generate_command;
    }
    if (o.has("--seed")) cfg.pipeline.trainer.seed = f.seed;
    if (o.has("--epochs")) cfg.pipeline.trainer.epochs = f.epochs;
    if (o.has("--batch-size")) cfg.pipeline.trainer.batch_size = f.batch_size;
    if (o.has("--lr")) cfg.pipeline.trainer.learning_rate = f.learning_rate;

    if (o.has("--stage2-source")) cfg.pipeline.stage2_source = f.stage2_source;
    if (o.has("--eval-split")) cfg.pipeline.eval_split = f.eval_split;
    if (o.has("--strategy")) cfg.pipeline.decode.strategy = f.strategy;
    if (o.has("--beam-width")) cfg.pipeline.decode.beam_width = f.beam_width;
    if (o.has("--workers")) cfg.pipeline.stage1_workers = f.workers;

    if (o.has("--subset")) {
        SubsetSpec parsed = parse_fraction(f.subset);
        cfg.pipeline.subset.fraction_num = parsed.fraction_num;
        cfg.pipeline.subset.fraction_den = parsed.fraction_den;
    }
    if (o.has("--subset-seed")) cfg.pipeline.subset.seed = f.subset_seed;
    if (o.has("--target-count")) {
        if (f.target_count < 0) {
            cfg.pipeline.subset.target_count.reset();
        } else {
            cfg.pipeline.subset.target_count = static_cast<std::size_t>(f.target_count);
        }
    }

    if (o.has("--regime")) cfg.regime = f.regime;
    if (o.has("--out")) cfg.output_dir = f.out_dir;
    if (o.has("--rationales")) cfg.rationales = f.rationales;
    if (o.has("--fractions")) cfg.fractions = split_csv_list(f.fractions_csv);
    if (o.has("--regimes")) cfg.regimes = split_csv_list(f.regimes_csv);

    cfg.pipeline.dataset_id = cfg.dataset.id;
    cfg.validate();
}

void print_kv(const std::vector<std::pair<std::string, std::string>>& rows) {
    for (const auto& [key, value] : rows) {
        std::cout << key << ": " << value << "\n";
    }
}

void emit(bool json_mode, const json& payload,
          const std::vector<std::pair<std::string, std::string>>& human) {
    if (json_mode) {
        std::cout << payload.dump(2) << "\n";
    } else {
        print_kv(human);
    }
}

std::filesystem::path require_out_dir(const RunConfig& cfg, const std::string& command) {
    if (cfg.output_dir.empty()) {
        throw ConfigError(command + " needs an output directory (--out or output_dir)");
    }
    return {cfg.output_dir};
}

std::vector<McqExample> load_all_splits(const DatasetPaths& d, const std::string& command) {
    if (d.train.empty()) {
        throw ConfigError(command + " needs a train split (--train or dataset.train)");
    }
    DatasetFormat fmt = format_from_name(d.format);
    std::vector<McqExample> all = load_dataset(d.train, fmt, Split::train);
    if (!d.dev.empty()) {
        std::vector<McqExample> dev = load_dataset(d.dev, fmt, Split::dev);
        all.insert(all.end(), dev.begin(), dev.end());
    }
    if (!d.test.empty()) {
        std::vector<McqExample> test = load_dataset(d.test, fmt, Split::test);
        all.insert(all.end(), test.begin(), test.end());
    }
    return all;
}

std::vector<McqExample> split_of(const std::vector<McqExample>& all, Split split) {
    std::vector<McqExample> out;
    for (const McqExample& ex : all) {
        if (ex.split == split) out.push_back(ex);
    }
    return out;
}

std::unique_ptr<TeacherClient> make_teacher_client(const RunConfig& cfg) {
    if (cfg.teacher.mock) {
        return std::make_unique<MockTeacher>(cfg.teacher.mock_seed);
    }
    if (cfg.teacher.endpoint.base_url.empty()) {
        throw ConfigError(
            "no teacher configured: pass --mock-teacher or set teacher.endpoint.base_url");
    }
    return std::make_unique<HttpTeacherClient>(cfg.teacher.endpoint);
}

// Rationale records for the train split: a cleaned store when a path is
// configured, otherwise generated on demand by the offline teacher.
std::vector<RationaleRecord> resolve_rationales(const RunConfig& cfg,
                                                const std::vector<McqExample>& dataset) {
    if (!cfg.rationales.empty()) {
        return read_store(cfg.rationales);
    }
    if (!cfg.teacher.mock) {
        throw ConfigError("regime '" + cfg.regime +
                          "' needs teacher rationales: pass --rationales <store> or "
                          "--mock-teacher");
    }
    std::vector<McqExample> train_set = split_of(dataset, Split::train);
    MockTeacher client(cfg.teacher.mock_seed);
    std::optional<ResponseCache> cache;
    ResponseCache* cache_ptr = nullptr;
    if (!cfg.teacher.cache_dir.empty()) {
        cache.emplace(cfg.teacher.cache_dir);
        cache_ptr = &*cache;
    }
    BatchOptions options;
    options.concurrency = cfg.teacher.concurrency;
    options.retry.max_attempts = cfg.teacher.max_attempts;
    options.decode = cfg.teacher.decode;
    std::vector<TeacherResponse> responses =
        batch_generate(train_set, cfg.pipeline.prompt, client, cache_ptr, options);
    std::vector<RationaleRecord> records;
    records.reserve(responses.size());
    for (const TeacherResponse& r : responses) {
        records.push_back(clean(r, cfg.pipeline.cleaning));
    }
    return records;
}

// The full effective configuration becomes a hashed run artifact so a run
// directory records every setting that produced it.
void attach_cli_config(RunResult& run, const RunConfig& cfg) {
    std::string body = cfg.to_json().dump(2) + "\n";
    write_text_file_atomic(run.run_dir / "cli_config.json", body);
    run.manifest.artifacts["cli_config.json"] = sha256_hex(body);
    write_manifest(run.manifest, run.run_dir);
}

int cmd_ingest(const RunConfig& cfg, bool json_mode) {
    std::filesystem::path out = require_out_dir(cfg, "ingest");
    DatasetFormat fmt = format_from_name(cfg.dataset.format);
    DirectoryLock lock(out);

    struct InputFile {
        std::string path;
        Split split;
    };
    std::vector<InputFile> inputs;
    if (!cfg.dataset.train.empty()) inputs.push_back({cfg.dataset.train, Split::train});
    if (!cfg.dataset.dev.empty()) inputs.push_back({cfg.dataset.dev, Split::dev});
    if (!cfg.dataset.test.empty()) inputs.push_back({cfg.dataset.test, Split::test});
    if (inputs.empty()) {
        throw ConfigError("ingest needs at least one of --train/--dev/--test");
    }

    std::vector<McqExample> all;
    json outputs = json::array();
    std::vector<std::pair<std::string, std::string>> human;
    for (const InputFile& in : inputs) {
        std::vector<McqExample> examples = load_dataset(in.path, fmt, in.split);
        std::string body;
        for (const McqExample& ex : examples) {
            body += example_to_json(ex).dump();
            body += '\n';
        }
        std::filesystem::path dest =
            out / (cfg.dataset.id + "_" + split_name(in.split) + ".jsonl");
        bool skipped = std::filesystem::exists(dest) && read_text_file(dest) == body;
        if (!skipped) {
            write_text_file_atomic(dest, body);
        }
        outputs.push_back(json{{"path", dest.string()},
                               {"split", split_name(in.split)},
                               {"examples", examples.size()},
                               {"sha256", sha256_hex(body)},
                               {"skipped", skipped}});
        human.emplace_back(split_name(in.split),
                           dest.string() + " (" + std::to_string(examples.size()) + " examples" +
                               (skipped ? ", unchanged)" : ")"));
        all.insert(all.end(), examples.begin(), examples.end());
    }
    DatasetStats stats = dataset_stats(all);
    std::string stats_body = stats.to_json().dump(2) + "\n";
    std::filesystem::path stats_path = out / "stats.json";
    bool stats_skipped =
        std::filesystem::exists(stats_path) && read_text_file(stats_path) == stats_body;
    if (!stats_skipped) {
        write_text_file_atomic(stats_path, stats_body);
    }
    human.emplace_back("stats", stats_path.string());
    human.emplace_back("total_examples", std::to_string(stats.total));
    emit(json_mode,
         json{{"command", "ingest"}, {"outputs", outputs}, {"stats", stats.to_json()}}, human);
    return 0;
}

int cmd_gen_rationales(const RunConfig& cfg, bool json_mode) {
    std::filesystem::path out = require_out_dir(cfg, "gen-rationales");
    DirectoryLock lock(out);
    std::vector<McqExample> dataset = load_all_splits(cfg.dataset, "gen-rationales");
    std::vector<McqExample> train_set = split_of(dataset, Split::train);

    std::unique_ptr<TeacherClient> client = make_teacher_client(cfg);
    std::filesystem::path cache_dir =
        cfg.teacher.cache_dir.empty() ? out / "cache" : std::filesystem::path(cfg.teacher.cache_dir);
    ResponseCache cache(cache_dir);
    BatchOptions options;
    options.concurrency = cfg.teacher.concurrency;
    options.retry.max_attempts = cfg.teacher.max_attempts;
    options.decode = cfg.teacher.decode;
    std::vector<TeacherResponse> responses =
        batch_generate(train_set, cfg.pipeline.prompt, *client, &cache, options);

    std::size_t ok = 0;
    std::string first_error;
    std::string body;
    for (const TeacherResponse& r : responses) {
        if (r.ok()) {
            ++ok;
        } else if (first_error.empty()) {
            first_error = r.error;
        }
        body += r.to_json().dump();
        body += '\n';
    }
    if (ok == 0 && !responses.empty()) {
        throw BackendError("all " + std::to_string(responses.size()) +
                           " teacher requests failed; first error: " + first_error);
    }
    std::filesystem::path raw_path = out / "teacher_raw.jsonl";
    write_text_file_atomic(raw_path, body);

    json payload{{"command", "gen-rationales"},
                 {"output", raw_path.string()},
                 {"ok", ok},
                 {"failed", responses.size() - ok},
                 {"requests", client->request_count()},
                 {"cache_dir", cache_dir.string()}};
    emit(json_mode, payload,
         {{"output", raw_path.string()},
          {"ok", std::to_string(ok)},
          {"failed", std::to_string(responses.size() - ok)},
          {"requests", std::to_string(client->request_count())},
          {"cache_dir", cache_dir.string()}});
    return 0;
}

int cmd_clean(const RunConfig& cfg, const FlagOverrides& f, const OptSet& o, bool json_mode) {
    std::filesystem::path out = require_out_dir(cfg, "clean");
    DirectoryLock lock(out);
    std::filesystem::path raw_path =
        o.has("--raw") ? std::filesystem::path(f.raw_path) : out / "teacher_raw.jsonl";
    if (!std::filesystem::exists(raw_path)) {
        throw DataError("raw teacher responses not found at '" + raw_path.string() +
                        "'; run gen-rationales first or pass --raw");
    }
    std::vector<RationaleRecord> records;
    std::size_t line_no = 0;
    for (const std::string& line : read_lines(raw_path)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(raw_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(clean(TeacherResponse::from_json(j), cfg.pipeline.cleaning));
    }
    std::filesystem::path store_path = out / "teacher_clean.jsonl";
    write_store(records, store_path);

    std::map<std::string, std::size_t> status_counts;
    for (const RationaleRecord& r : records) {
        ++status_counts[clean_status_name(r.clean_status)];
    }
    std::vector<std::string> duplicates = duplicate_text_warnings(records);
    json payload{{"command", "clean"},
                 {"output", store_path.string()},
                 {"records", records.size()},
                 {"status_counts", status_counts},
                 {"duplicate_warnings", duplicates}};
    std::vector<std::pair<std::string, std::string>> human{
        {"output", store_path.string()}, {"records", std::to_string(records.size())}};
    for (const auto& [status, count] : status_counts) {
        human.emplace_back(status, std::to_string(count));
    }
    if (!cfg.dataset.train.empty()) {
        std::vector<McqExample> dataset = load_all_splits(cfg.dataset, "clean");
        CoverageReport coverage = coverage_report(records, split_of(dataset, Split::train));
        payload["coverage"] = coverage.to_json();
        human.emplace_back("coverage", std::to_string(coverage.covered) + "/" +
                                           std::to_string(coverage.total));
    }
    for (const std::string& warning : duplicates) {
        human.emplace_back("warning", warning);
    }
    emit(json_mode, payload, human);
    return 0;
}

int cmd_train(const RunConfig& cfg, bool json_mode) {
    std::filesystem::path run_dir = require_out_dir(cfg, "train");
    std::vector<McqExample> dataset = load_all_splits(cfg.dataset, "train");
    DirectoryLock lock(run_dir);

    std::string expected_run_id = compute_run_id(cfg.regime, dataset, cfg.pipeline);
    bool skipped = false;
    RunResult run;
    if (std::filesystem::exists(run_dir / "manifest.json")) {
        RunResult prior = load_run(run_dir);
        if (prior.manifest.regime == cfg.regime && prior.manifest.run_id == expected_run_id) {
            run = std::move(prior);
            skipped = true;
        }
    }
    if (!skipped) {
        if (cfg.regime == "baseline_ft") {
            run = run_baseline(dataset, cfg.pipeline, run_dir);
        } else {
            std::vector<RationaleRecord> rationales = resolve_rationales(cfg, dataset);
            if (cfg.regime == "one_stage") {
                run = run_one_stage(dataset, rationales, cfg.pipeline, run_dir);
            } else {
                run = run_scicot(dataset, rationales, cfg.pipeline, run_dir);
            }
        }
        attach_cli_config(run, cfg);
    }

    json payload{{"command", "train"},
                 {"run_dir", run_dir.string()},
                 {"run_id", run.manifest.run_id},
                 {"regime", run.manifest.regime},
                 {"skipped", skipped},
                 {"fingerprints", run.manifest.model_fingerprints},
                 {"counts", run.manifest.counts}};
    std::vector<std::pair<std::string, std::string>> human{
        {"run_dir", run_dir.string()},
        {"run_id", run.manifest.run_id},
        {"regime", run.manifest.regime},
        {"skipped", skipped ? "true" : "false"}};
    for (const auto& [name, fp] : run.manifest.model_fingerprints) {
        human.emplace_back(name, fp);
    }
    emit(json_mode, payload, human);
    return 0;
}

std::filesystem::path resolve_run_dir(const RunConfig& cfg, const FlagOverrides& f,
                                      const OptSet& o, const std::string& command) {
    if (o.has("--run")) {
        return {f.run_dir};
    }
    if (!cfg.output_dir.empty()) {
        return {cfg.output_dir};
    }
    throw ConfigError(command + " needs a run directory (--run, --out or output_dir)");
}

int cmd_infer(const RunConfig& cfg, const FlagOverrides& f, const OptSet& o, bool json_mode) {
    std::filesystem::path run_dir = resolve_run_dir(cfg, f, o, "infer");
    std::vector<McqExample> dataset = load_all_splits(cfg.dataset, "infer");
    DirectoryLock lock(run_dir);
    RunResult run = load_run(run_dir);
    PipelineConfig effective = PipelineConfig::from_json(run.manifest.config);
    std::string rel = "predictions/" + effective.eval_split + ".jsonl";

    bool skipped = false;
    std::vector<Prediction> predictions;
    auto prior = run.manifest.artifacts.find(rel);
    if (prior != run.manifest.artifacts.end() && std::filesystem::exists(run_dir / rel) &&
        sha256_file_hex(run_dir / rel) == prior->second) {
        predictions = read_predictions_jsonl(run_dir / rel);
        skipped = true;
    } else {
        predictions = predict_eval_split(run, dataset, cfg.pipeline.stage1_workers);
    }

    json payload{{"command", "infer"},
                 {"run_dir", run_dir.string()},
                 {"predictions", (run_dir / rel).string()},
                 {"split", effective.eval_split},
                 {"examples", predictions.size()},
                 {"skipped", skipped}};
    emit(json_mode, payload,
         {{"run_dir", run_dir.string()},
          {"predictions", (run_dir / rel).string()},
          {"split", effective.eval_split},
          {"examples", std::to_string(predictions.size())},
          {"skipped", skipped ? "true" : "false"}});
    return 0;
}

int cmd_eval(const RunConfig& cfg, const FlagOverrides& f, const OptSet& o, bool json_mode) {
    std::filesystem::path run_dir = resolve_run_dir(cfg, f, o, "eval");
    std::vector<McqExample> dataset = load_all_splits(cfg.dataset, "eval");
    DirectoryLock lock(run_dir);
    RunManifest manifest = read_manifest(run_dir);
    PipelineConfig effective = PipelineConfig::from_json(manifest.config);
    std::string split = effective.eval_split;

    std::filesystem::path pred_path = run_dir / "predictions" / (split + ".jsonl");
    if (!std::filesystem::exists(pred_path)) {
        throw DataError("no predictions for split '" + split + "' under '" + run_dir.string() +
                        "'; run infer first");
    }
    std::vector<Prediction> predictions = read_predictions_jsonl(pred_path);
    std::vector<McqExample> eval_examples = split_of(dataset, split_from_name(split));
    ScoredEval scored = score_predictions(predictions, eval_examples);

    std::string scored_rel = "predictions/" + split + "_scored.jsonl";
    write_prediction_rows_jsonl(scored, run_dir / scored_rel);
    json summary{{"kind", "eval_summary"}, {"schema_version", 1},
                 {"split", split},        {"correct", scored.correct},
                 {"total", scored.total}, {"accuracy", scored.accuracy},
                 {"scored_rows", scored_rel}};
    write_text_file_atomic(run_dir / "eval_summary.json", summary.dump(2) + "\n");

    json payload = summary;
    payload["command"] = "eval";
    payload["run_dir"] = run_dir.string();
    emit(json_mode, payload,
         {{"run_dir", run_dir.string()},
          {"split", split},
          {"accuracy", format_percent(scored.accuracy)},
          {"correct", std::to_string(scored.correct) + "/" + std::to_string(scored.total)},
          {"scored_rows", (run_dir / scored_rel).string()}});
    return 0;
}

int cmd_ablate(const RunConfig& cfg, bool json_mode) {
    std::filesystem::path out = require_out_dir(cfg, "ablate");
    std::vector<McqExample> dataset = load_all_splits(cfg.dataset, "ablate");
    DirectoryLock lock(out);

    bool needs_rationales = false;
    for (const std::string& regime : cfg.regimes) {
        if (regime != "baseline_ft") needs_rationales = true;
    }
    RunConfig rationale_cfg = cfg;
    rationale_cfg.regime = cfg.regimes.front();
    std::vector<RationaleRecord> rationales;
    if (needs_rationales) {
        for (const std::string& regime : cfg.regimes) {
            if (regime != "baseline_ft") {
                rationale_cfg.regime = regime;
                break;
            }
        }
        rationales = resolve_rationales(rationale_cfg, dataset);
    }

    AblateOptions options;
    options.fractions = cfg.fractions;
    options.regimes = cfg.regimes;
    options.predict_workers = cfg.pipeline.stage1_workers;
    std::vector<AblationCell> grid =
        ablate_data_size(dataset, rationales, cfg.pipeline, out, options);

    json cells = json::array();
    std::size_t reused = 0, failed = 0;
    for (const AblationCell& cell : grid) {
        cells.push_back(ablation_cell_to_json(cell));
        if (cell.reused) ++reused;
        if (!cell.error.empty()) ++failed;
    }
    json grid_doc{{"kind", "ablation_grid"},
                  {"schema_version", 1},
                  {"dataset_id", cfg.dataset.id},
                  {"cells", cells}};
    std::filesystem::path grid_path = out / "ablation.json";
    write_text_file_atomic(grid_path, grid_doc.dump(2) + "\n");

    json payload{{"command", "ablate"}, {"output", grid_path.string()},
                 {"cells", cells},      {"reused_cells", reused},
                 {"failed_cells", failed}};
    std::vector<std::pair<std::string, std::string>> human{{"output", grid_path.string()}};
    for (const AblationCell& cell : grid) {
        std::string value;
        if (cell.accuracy) {
            value = format_percent(*cell.accuracy) + " (" + std::to_string(cell.correct) + "/" +
                    std::to_string(cell.total) + ")";
        } else {
            value = "failed: " + cell.error;
        }
        if (cell.reused) value += " [reused]";
        human.emplace_back(cell.fraction + " " + cell.regime + " (" +
                               std::to_string(cell.train_count) + " examples)",
                           value);
    }
    human.emplace_back("reused_cells", std::to_string(reused));
    human.emplace_back("failed_cells", std::to_string(failed));
    emit(json_mode, payload, human);
    return 0;
}

int cmd_report(const FlagOverrides& f, const OptSet& o, bool json_mode) {
    EvalReport report;
    if (!f.no_references) {
        report.rows = published_reference_rows();
    }
    if (o.has("--ablation")) {
        json grid_doc;
        try {
            grid_doc = json::parse(read_text_file(f.ablation_path));
        } catch (const json::exception& e) {
            throw DataError("ablation grid '" + f.ablation_path + "': " + e.what());
        }
        if (!grid_doc.is_object() || grid_doc.value("kind", "") != "ablation_grid") {
            throw DataError("'" + f.ablation_path + "' is not an ablation grid");
        }
        for (const json& cell : grid_doc.at("cells")) {
            report.ablation.push_back(ablation_cell_from_json(cell));
        }
    }
    for (const std::string& dir_text : f.report_runs) {
        std::filesystem::path dir(dir_text);
        RunManifest manifest = read_manifest(dir);
        std::filesystem::path summary_path = dir / "eval_summary.json";
        if (!std::filesystem::exists(summary_path)) {
            throw DataError("no eval_summary.json under '" + dir_text + "'; run eval first");
        }
        json summary;
        try {
            summary = json::parse(read_text_file(summary_path));
        } catch (const json::exception& e) {
            throw DataError(summary_path.string() + ": " + e.what());
        }
        PipelineConfig effective = PipelineConfig::from_json(manifest.config);
        std::string size_label =
            effective.trainer.backend == "builtin"
                ? "builtin-d" + std::to_string(effective.trainer.model.d_model)
                : "external";
        report.set_computed(manifest.regime, size_label, manifest.dataset_id,
                            summary.at("accuracy").get<double>());

        ScoredEval eval;
        eval.correct = summary.at("correct").get<std::size_t>();
        eval.total = summary.at("total").get<std::size_t>();
        eval.accuracy = summary.at("accuracy").get<double>();
        std::filesystem::path rows_path = dir / summary.at("scored_rows").get<std::string>();
        std::size_t line_no = 0;
        for (const std::string& line : read_lines(rows_path)) {
            ++line_no;
            if (trim(line).empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw DataError(rows_path.string() + ":" + std::to_string(line_no) + ": " +
                                e.what());
            }
            eval.rows.push_back(PredictionRow::from_json(
                j, rows_path.string() + ":" + std::to_string(line_no)));
        }
        std::string key = dir.lexically_normal().filename().string();
        if (key.empty() || report.regime_results.count(key)) {
            key = dir_text;
        }
        report.regime_results[key] = std::move(eval);
    }

    std::string format_name = f.report_format;
    if (json_mode && !o.has("--report-format")) {
        format_name = "json";
    }
    std::string document = render_report(report, report_format_from_name(format_name));
    if (o.has("--out-file")) {
        write_text_file_atomic(f.report_out, document);
        emit(json_mode, json{{"command", "report"}, {"output", f.report_out}},
             {{"output", f.report_out}});
    } else {
        std::cout << document;
    }
    return 0;
}

int cmd_synth(const FlagOverrides& f, bool json_mode) {
    SyntheticSpec spec;
    spec.seed = f.synth_seed;
    spec.train_count = f.synth_train;
    spec.dev_count = f.synth_dev;
    spec.test_count = f.synth_test;
    spec.choices_per_example = f.synth_choices;
    spec.validate();
    std::filesystem::path out(f.synth_out);
    std::filesystem::create_directories(out);
    write_synthetic_corpus(out, spec);

    json files = json::array();
    std::vector<std::pair<std::string, std::string>> human;
    for (const char* name :
         {"synthetic_train.jsonl", "synthetic_dev.jsonl", "synthetic_test.jsonl"}) {
        std::filesystem::path path = out / name;
        std::string digest = sha256_file_hex(path);
        files.push_back(json{{"path", path.string()}, {"sha256", digest}});
        human.emplace_back(name, digest);
    }
    emit(json_mode, json{{"command", "synth"}, {"files", files}}, human);
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Two-stage rationale distillation pipeline for multiple-choice QA"};
    app.require_subcommand(1);

    std::string config_path;
    bool json_mode = false;
    app.add_option("--config", config_path, "structured run configuration file");
    app.add_flag("--json", json_mode, "machine-readable JSON on stdout");

    FlagOverrides f;
    std::map<std::string, OptSet> command_opts;
    auto make_command = [&](const char* name, const char* desc) -> OptSet& {
        CLI::App* cmd = app.add_subcommand(name, desc);
        cmd->fallthrough();
        OptSet& o = command_opts[name];
        o.cmd = cmd;
        return o;
    };

    OptSet& ingest = make_command("ingest", "normalize dataset files and report statistics");
    add_dataset_flags(ingest, f);
    ingest.add("--out", f.out_dir, "output directory");

    OptSet& gen = make_command("gen-rationales", "request teacher rationales for the train split");
    add_dataset_flags(gen, f);
    add_teacher_flags(gen, f);
    gen.add("--out", f.out_dir, "output directory");

    OptSet& cln = make_command("clean", "clean raw teacher responses into a rationale store");
    add_dataset_flags(cln, f);
    cln.add("--raw", f.raw_path, "raw teacher responses (default <out>/teacher_raw.jsonl)");
    cln.add("--out", f.out_dir, "output directory");

    OptSet& trn = make_command("train", "run one training regime end to end");
    add_dataset_flags(trn, f);
    add_teacher_flags(trn, f);
    add_trainer_flags(trn, f);
    add_pipeline_flags(trn, f);
    add_subset_flags(trn, f);
    trn.add("--regime", f.regime, "baseline_ft, one_stage or scicot");
    trn.add("--rationales", f.rationales, "cleaned teacher rationale store");
    trn.add("--out", f.out_dir, "run directory");

    OptSet& inf = make_command("infer", "generate predictions for the run's eval split");
    add_dataset_flags(inf, f);
    add_pipeline_flags(inf, f);
    inf.add("--run", f.run_dir, "run directory (default --out/output_dir)");
    inf.add("--out", f.out_dir, "run directory");

    OptSet& evl = make_command("eval", "score predictions against gold answers");
    add_dataset_flags(evl, f);
    evl.add("--run", f.run_dir, "run directory (default --out/output_dir)");
    evl.add("--out", f.out_dir, "run directory");

    OptSet& abl = make_command("ablate", "sweep train-set fractions across regimes");
    add_dataset_flags(abl, f);
    add_teacher_flags(abl, f);
    add_trainer_flags(abl, f);
    add_pipeline_flags(abl, f);
    abl.add("--fractions", f.fractions_csv, "comma-separated fractions (default 1/8,1/4,1/2,1/1)");
    abl.add("--regimes", f.regimes_csv, "comma-separated regimes (default baseline_ft,scicot)");
    abl.add("--rationales", f.rationales, "cleaned teacher rationale store");
    abl.add("--out", f.out_dir, "sweep output directory");

    OptSet& rep = make_command("report", "render results tables from runs and ablation grids");
    rep.add("--run", f.report_runs, "evaluated run directory (repeatable)");
    rep.add("--ablation", f.ablation_path, "ablation grid json from the ablate command");
    rep.add("--report-format", f.report_format, "markdown, csv or json");
    rep.add("--out-file", f.report_out, "write the document here instead of stdout");
    rep.add_flag("--no-references", f.no_references, "omit the published reference rows");

    OptSet& syn = make_command("synth", "regenerate the bundled synthetic corpus");
    syn.add("--out", f.synth_out, "output directory");
    syn.add("--seed", f.synth_seed, "corpus seed");
    syn.add("--train-count", f.synth_train, "train examples");
    syn.add("--dev-count", f.synth_dev, "dev examples");
    syn.add("--test-count", f.synth_test, "test examples");
    syn.add("--choices", f.synth_choices, "choices per example");

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp&) {
            std::cout << app.help();
            return 0;
        } catch (const CLI::CallForAllHelp&) {
            std::cout << app.help("", CLI::AppFormatMode::All);
            return 0;
        } catch (const CLI::ParseError& e) {
            throw ConfigError(std::string("argument error: ") + e.what());
        }

        CLI::App* parsed = app.get_subcommands().front();
        const std::string name = parsed->get_name();
        const OptSet& opts = command_opts.at(name);

        if (name == "synth") {
            return cmd_synth(f, json_mode);
        }
        if (name == "report") {
            return cmd_report(f, opts, json_mode);
        }

        RunConfig cfg;
        if (!config_path.empty()) {
            cfg = load_run_config(config_path);
        }
        apply_overrides(cfg, f, opts);

        if (name == "ingest") return cmd_ingest(cfg, json_mode);
        if (name == "gen-rationales") return cmd_gen_rationales(cfg, json_mode);
        if (name == "clean") return cmd_clean(cfg, f, opts, json_mode);
        if (name == "train") return cmd_train(cfg, json_mode);
        if (name == "infer") return cmd_infer(cfg, f, opts, json_mode);
        if (name == "eval") return cmd_eval(cfg, f, opts, json_mode);
        if (name == "ablate") return cmd_ablate(cfg, json_mode);
        throw ConfigError("unknown command '" + name + "'");
    } catch (const ConfigError& e) {
        std::cerr << json{{"error", {{"kind", "config"}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << json{{"error", {{"kind", "data"}, {"message", e.what()}}}}.dump() << "\n";
        return 2;
    } catch (const BackendError& e) {
        std::cerr << json{{"error", {{"kind", "backend"}, {"message", e.what()}}}}.dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 1;
    }
}

}  // namespace scicot
