#include "scicot/trainer.hpp"

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <numeric>

namespace scicot {

json AdamSettings::to_json() const {
    return json{{"beta1", beta1},
                {"beta2", beta2},
                {"eps", eps},
                {"weight_decay", weight_decay}};
}

AdamSettings AdamSettings::from_json(const json& j) {
    json_require_known_keys(j, {"beta1", "beta2", "eps", "weight_decay"}, "adam");
    AdamSettings a;
    if (j.contains("beta1")) a.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) a.beta2 = j.at("beta2").get<double>();
    if (j.contains("eps")) a.eps = j.at("eps").get<double>();
    if (j.contains("weight_decay")) a.weight_decay = j.at("weight_decay").get<double>();
    return a;
}

json ExternalBackendSettings::to_json() const {
    return json{{"train_command", train_command}, {"generate_command", generate_command}};
}

ExternalBackendSettings ExternalBackendSettings::from_json(const json& j) {
    json_require_known_keys(j, {"train_command", "generate_command"}, "external");
    ExternalBackendSettings e;
    if (j.contains("train_command")) e.train_command = j.at("train_command").get<std::string>();
    if (j.contains("generate_command")) {
        e.generate_command = j.at("generate_command").get<std::string>();
    }
    return e;
}

void TrainerConfig::validate() const {
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (input_dropout < 0.0 || input_dropout >= 1.0) {
        throw ConfigError("input_dropout must be in [0, 1)");
    }
    if (max_input_tokens <= 0) throw ConfigError("max_input_tokens must be positive");
    if (max_target_tokens <= 0) throw ConfigError("max_target_tokens must be positive");
    if (backend != "builtin" && backend != "external") {
        throw ConfigError("unknown trainer backend '" + backend +
                          "' (expected 'builtin' or 'external')");
    }
    if (tokenizer != "whitespace") {
        throw ConfigError("unknown tokenizer '" + tokenizer + "' (expected 'whitespace')");
    }
    if (model.d_model <= 0 || model.n_heads <= 0 || model.n_layers <= 0 || model.d_ff <= 0) {
        throw ConfigError("model dims must be positive");
    }
    if (model.d_model % model.n_heads != 0) {
        throw ConfigError("d_model must be divisible by n_heads");
    }
    if (backend == "external" && external.train_command.empty()) {
        throw ConfigError("external backend requires external.train_command");
    }
}

json TrainerConfig::to_json() const {
    return json{{"seed", seed},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"clip_norm", clip_norm},
                {"input_dropout", input_dropout},
                {"max_input_tokens", max_input_tokens},
                {"max_target_tokens", max_target_tokens},
                {"backend", backend},
                {"tokenizer", tokenizer},
                {"model", model.to_json()},
                {"adam", adam.to_json()},
                {"external", external.to_json()}};
}

TrainerConfig TrainerConfig::from_json(const json& j) {
    json_require_known_keys(j,
                       {"seed", "epochs", "batch_size", "learning_rate", "clip_norm",
                        "input_dropout", "max_input_tokens", "max_target_tokens", "backend",
                        "tokenizer", "model", "adam", "external"},
                       "trainer config");
    TrainerConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
    if (j.contains("input_dropout")) c.input_dropout = j.at("input_dropout").get<double>();
    if (j.contains("max_input_tokens")) c.max_input_tokens = j.at("max_input_tokens").get<int>();
    if (j.contains("max_target_tokens")) c.max_target_tokens = j.at("max_target_tokens").get<int>();
    if (j.contains("backend")) c.backend = j.at("backend").get<std::string>();
    if (j.contains("tokenizer")) c.tokenizer = j.at("tokenizer").get<std::string>();
    if (j.contains("model")) c.model = ModelDims::from_json(j.at("model"));
    if (j.contains("adam")) c.adam = AdamSettings::from_json(j.at("adam"));
    if (j.contains("external")) c.external = ExternalBackendSettings::from_json(j.at("external"));
    c.validate();
    return c;
}

json TrainMetrics::to_json() const {
    return json{{"epoch_mean_loss", epoch_mean_loss},
                {"truncated_inputs", truncated_inputs},
                {"truncated_targets", truncated_targets},
                {"floored_positions", floored_positions},
                {"example_count", example_count},
                {"train_seconds", train_seconds}};
}

TrainMetrics TrainMetrics::from_json(const json& j) {
    TrainMetrics m;
    m.epoch_mean_loss = j.at("epoch_mean_loss").get<std::vector<double>>();
    m.truncated_inputs = j.at("truncated_inputs").get<std::size_t>();
    m.truncated_targets = j.at("truncated_targets").get<std::size_t>();
    m.floored_positions = j.at("floored_positions").get<std::size_t>();
    m.example_count = j.at("example_count").get<std::size_t>();
    m.train_seconds = j.at("train_seconds").get<double>();
    return m;
}

std::string compute_fingerprint(const TrainerConfig& config, Regime regime,
                                const std::vector<TrainingPair>& pairs) {
    json data = json::array();
    for (const TrainingPair& p : pairs) {
        data.push_back(json::array(
            {p.example_id, sha256_hex(p.input_text), sha256_hex(p.target_text)}));
    }
    json material{{"config", config.to_json()},
                  {"regime", regime_name(regime)},
                  {"pairs", data}};
    return sha256_hex(material.dump());
}

namespace {

constexpr const char* kHandleConfigFile = "config.json";
constexpr const char* kHandleFingerprintFile = "fingerprint.txt";
constexpr const char* kHandleMetricsFile = "metrics.json";
constexpr const char* kHandleWeightsFile = "weights.bin";
constexpr const char* kHandleTokenizerFile = "tokenizer.json";
constexpr const char* kHandleServiceFile = "service.json";

Regime check_pairs(const std::vector<TrainingPair>& pairs) {
    if (pairs.empty()) {
        throw DataError("refusing to train on an empty pair list");
    }
    Regime regime = pairs.front().regime;
    for (const TrainingPair& p : pairs) {
        if (p.regime != regime) {
            throw DataError("training pairs mix regimes '" + regime_name(regime) + "' and '" +
                            regime_name(p.regime) + "' (example " + p.example_id + ")");
        }
    }
    return regime;
}

void persist_handle_meta(const std::filesystem::path& dir, const TrainerConfig& config,
                         Regime regime, const std::string& fingerprint,
                         const std::string& data_digest, int vocab_size,
                         const TrainMetrics& metrics) {
    json meta{{"kind", "model_handle"},
              {"schema_version", 1},
              {"trainer_config", config.to_json()},
              {"regime", regime_name(regime)},
              {"data_digest", data_digest},
              {"fingerprint", fingerprint},
              {"vocab_size", vocab_size}};
    if (config.backend == "builtin") {
        meta["weights_sha256"] = sha256_file_hex(dir / kHandleWeightsFile);
        meta["tokenizer_sha256"] = sha256_file_hex(dir / kHandleTokenizerFile);
    }
    write_text_file_atomic(dir / kHandleConfigFile, meta.dump(2) + "\n");
    write_text_file_atomic(dir / kHandleFingerprintFile, fingerprint + "\n");
    write_text_file_atomic(dir / kHandleMetricsFile, metrics.to_json().dump(2) + "\n");
}

std::string pairs_data_digest(const std::vector<TrainingPair>& pairs) {
    json data = json::array();
    for (const TrainingPair& p : pairs) {
        data.push_back(json::array(
            {p.example_id, sha256_hex(p.input_text), sha256_hex(p.target_text)}));
    }
    return sha256_hex(data.dump());
}

ModelHandle builtin_train(const std::vector<TrainingPair>& pairs, const TrainerConfig& config,
                          const std::filesystem::path& out_dir, Regime regime) {
    auto t0 = std::chrono::steady_clock::now();

    std::vector<std::string> texts;
    texts.reserve(pairs.size() * 2);
    for (const TrainingPair& p : pairs) {
        texts.push_back(p.input_text);
        texts.push_back(p.target_text);
    }
    WhitespaceTokenizer tok = WhitespaceTokenizer::build(texts);

    TrainMetrics metrics;
    metrics.example_count = pairs.size();
    std::vector<std::vector<int>> inputs(pairs.size());
    std::vector<std::vector<int>> targets(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        inputs[i] = tok.encode(pairs[i].input_text);
        targets[i] = tok.encode(pairs[i].target_text);
        if (static_cast<int>(inputs[i].size()) > config.max_input_tokens) {
            inputs[i].resize(static_cast<std::size_t>(config.max_input_tokens));
            ++metrics.truncated_inputs;
        }
        if (static_cast<int>(targets[i].size()) > config.max_target_tokens) {
            targets[i].resize(static_cast<std::size_t>(config.max_target_tokens));
            ++metrics.truncated_targets;
        }
    }

    Seq2SeqModel model(config.model, tok.vocab_size(), config.max_input_tokens,
                       config.max_target_tokens, config.seed);
    // Separate streams for batch order and token masking so neither couples
    // to weight init or to each other.
    DeterministicRng order_rng(config.seed ^ 0xda3e39cb94b95bdbULL);
    DeterministicRng drop_rng(config.seed ^ 0x9e6c63d0863d52d5ULL);

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<int> masked;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_sum = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            std::size_t batch_end = std::min(order.size(), pos + static_cast<std::size_t>(config.batch_size));
            double scale = 1.0 / static_cast<double>(batch_end - pos);
            model.zero_grads();
            for (std::size_t b = pos; b < batch_end; ++b) {
                const std::vector<int>* in = &inputs[order[b]];
                if (config.input_dropout > 0.0) {
                    masked = *in;
                    for (int& id : masked) {
                        if (drop_rng.uniform() < config.input_dropout) id = 0;
                    }
                    in = &masked;
                }
                CrossEntropyValue v =
                    model.example_loss(*in, targets[order[b]], scale, /*record=*/true);
                epoch_sum += v.value;
            }
            model.adam_step(config.learning_rate, config.adam.beta1, config.adam.beta2,
                            config.adam.eps, config.clip_norm, config.adam.weight_decay);
            pos = batch_end;
        }
        metrics.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(order.size()));
    }
    metrics.floored_positions = model.floored_positions;

    std::filesystem::create_directories(out_dir);
    tok.save(out_dir / kHandleTokenizerFile);
    model.save_weights(out_dir / kHandleWeightsFile);

    auto t1 = std::chrono::steady_clock::now();
    metrics.train_seconds = std::chrono::duration<double>(t1 - t0).count();

    ModelHandle handle;
    handle.dir = out_dir;
    handle.regime = regime;
    handle.backend = config.backend;
    handle.fingerprint = compute_fingerprint(config, regime, pairs);
    handle.metrics = metrics;
    persist_handle_meta(out_dir, config, regime, handle.fingerprint, pairs_data_digest(pairs),
                        tok.vocab_size(), metrics);
    return handle;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    out += "'";
    return out;
}

int run_shell(const std::string& command) {
    int status = std::system(command.c_str());
    if (status == -1) {
        throw BackendError("failed to launch shell for external backend command");
    }
    return status;
}

ModelHandle external_train(const std::vector<TrainingPair>& pairs, const TrainerConfig& config,
                           const std::filesystem::path& out_dir, Regime regime) {
    auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(out_dir);
    std::filesystem::path pairs_path = out_dir / "pairs.jsonl";
    write_pairs_jsonl(pairs, pairs_path);

    std::string command = config.external.train_command + " " + shell_quote(pairs_path.string()) +
                          " " + shell_quote(out_dir.string());
    int status = run_shell(command);
    if (status != 0) {
        throw BackendError("external train command exited with status " + std::to_string(status));
    }

    std::filesystem::path service_path = out_dir / kHandleServiceFile;
    if (!std::filesystem::exists(service_path)) {
        if (config.external.generate_command.empty()) {
            throw BackendError("external train command left no " +
                               std::string(kHandleServiceFile) +
                               " and no external.generate_command is configured");
        }
        json service{{"generate_command", config.external.generate_command}};
        write_text_file_atomic(service_path, service.dump(2) + "\n");
    }

    TrainMetrics metrics;
    metrics.example_count = pairs.size();
    auto t1 = std::chrono::steady_clock::now();
    metrics.train_seconds = std::chrono::duration<double>(t1 - t0).count();

    ModelHandle handle;
    handle.dir = out_dir;
    handle.regime = regime;
    handle.backend = config.backend;
    handle.fingerprint = compute_fingerprint(config, regime, pairs);
    handle.metrics = metrics;
    persist_handle_meta(out_dir, config, regime, handle.fingerprint, pairs_data_digest(pairs), 0,
                        metrics);
    return handle;
}

// Loaded builtin models are cached per (dir, fingerprint); generation only
// reads model state, so one runtime may serve concurrent callers.
struct BuiltinRuntime {
    WhitespaceTokenizer tok = WhitespaceTokenizer::build({});
    std::unique_ptr<Seq2SeqModel> model;
    int max_input_tokens = 0;
};

std::mutex g_runtime_mutex;
std::map<std::string, std::shared_ptr<BuiltinRuntime>> g_runtime_cache;

json read_handle_meta(const std::filesystem::path& dir) {
    std::filesystem::path path = dir / kHandleConfigFile;
    json meta;
    try {
        meta = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw DataError("model handle config is not valid JSON: " + path.string() + ": " +
                        e.what());
    }
    if (!meta.is_object() || meta.value("kind", "") != "model_handle") {
        throw DataError("not a model handle directory: " + dir.string());
    }
    if (meta.value("schema_version", 0) != 1) {
        throw DataError("model handle schema_version " +
                        meta.value("schema_version", json(0)).dump() + " is not supported (want 1)");
    }
    return meta;
}

std::shared_ptr<BuiltinRuntime> builtin_runtime(const ModelHandle& handle) {
    std::string key = handle.dir.string() + "#" + handle.fingerprint;
    {
        std::lock_guard<std::mutex> lock(g_runtime_mutex);
        auto it = g_runtime_cache.find(key);
        if (it != g_runtime_cache.end()) {
            return it->second;
        }
    }
    json meta = read_handle_meta(handle.dir);
    std::string stored = trim(read_text_file(handle.dir / kHandleFingerprintFile));
    if (stored != handle.fingerprint || meta.at("fingerprint").get<std::string>() != stored) {
        throw DataError("model handle fingerprint mismatch under " + handle.dir.string() +
                        "; the handle is stale or the directory was modified");
    }
    TrainerConfig config = TrainerConfig::from_json(meta.at("trainer_config"));
    int vocab_size = meta.at("vocab_size").get<int>();

    auto runtime = std::make_shared<BuiltinRuntime>();
    runtime->tok = WhitespaceTokenizer::load(handle.dir / kHandleTokenizerFile);
    if (runtime->tok.vocab_size() != vocab_size) {
        throw DataError("tokenizer vocab size does not match model handle under " +
                        handle.dir.string());
    }
    runtime->model = std::make_unique<Seq2SeqModel>(config.model, vocab_size,
                                                    config.max_input_tokens,
                                                    config.max_target_tokens, config.seed);
    runtime->model->load_weights(handle.dir / kHandleWeightsFile);
    runtime->max_input_tokens = config.max_input_tokens;

    std::lock_guard<std::mutex> lock(g_runtime_mutex);
    auto [it, inserted] = g_runtime_cache.emplace(key, std::move(runtime));
    return it->second;
}

GenerateResult external_generate(const ModelHandle& handle, const std::string& input) {
    json service;
    try {
        service = json::parse(read_text_file(handle.dir / kHandleServiceFile));
    } catch (const json::exception& e) {
        throw BackendError("external service descriptor is not valid JSON: " +
                           (handle.dir / kHandleServiceFile).string() + ": " + e.what());
    }
    std::string command = service.value("generate_command", "");
    if (command.empty()) {
        throw BackendError("external service descriptor has no generate_command");
    }
    static std::atomic<std::uint64_t> counter{0};
    std::string tag = std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    std::filesystem::path in_path = handle.dir / ("gen_in." + tag + ".txt");
    std::filesystem::path out_path = handle.dir / ("gen_out." + tag + ".txt");
    write_text_file(in_path, input);
    std::string full = command + " < " + shell_quote(in_path.string()) + " > " +
                       shell_quote(out_path.string());
    int status = run_shell(full);
    GenerateResult result;
    if (status == 0) {
        result.text = trim(read_text_file(out_path));
    }
    std::error_code ec;
    std::filesystem::remove(in_path, ec);
    std::filesystem::remove(out_path, ec);
    if (status != 0) {
        throw BackendError("external generate command exited with status " +
                           std::to_string(status));
    }
    return result;
}

}  // namespace

ModelHandle train(const std::vector<TrainingPair>& pairs, const TrainerConfig& config,
                  const std::filesystem::path& out_dir) {
    config.validate();
    Regime regime = check_pairs(pairs);
    if (config.backend == "builtin") {
        return builtin_train(pairs, config, out_dir, regime);
    }
    return external_train(pairs, config, out_dir, regime);
}

ModelHandle load_handle(const std::filesystem::path& dir) {
    json meta = read_handle_meta(dir);
    ModelHandle handle;
    handle.dir = dir;
    handle.regime = regime_from_name(meta.at("regime").get<std::string>());
    handle.backend = meta.at("trainer_config").at("backend").get<std::string>();
    handle.fingerprint = trim(read_text_file(dir / kHandleFingerprintFile));
    if (meta.at("fingerprint").get<std::string>() != handle.fingerprint) {
        throw DataError("fingerprint.txt disagrees with config.json under " + dir.string());
    }
    if (handle.backend == "builtin") {
        if (sha256_file_hex(dir / kHandleWeightsFile) !=
            meta.at("weights_sha256").get<std::string>()) {
            throw DataError("weights file changed since training under " + dir.string());
        }
        if (sha256_file_hex(dir / kHandleTokenizerFile) !=
            meta.at("tokenizer_sha256").get<std::string>()) {
            throw DataError("tokenizer file changed since training under " + dir.string());
        }
    }
    try {
        handle.metrics = TrainMetrics::from_json(json::parse(read_text_file(dir / kHandleMetricsFile)));
    } catch (const json::exception& e) {
        throw DataError("model handle metrics are not valid JSON under " + dir.string() + ": " +
                        e.what());
    }
    return handle;
}

GenerateResult generate(const ModelHandle& handle, const std::string& input,
                        const GenerateOptions& options) {
    if (trim(input).empty()) {
        throw DataError("generate called with an empty input");
    }
    if (options.strategy != "greedy" && options.strategy != "beam") {
        throw ConfigError("unknown decode strategy '" + options.strategy +
                          "' (expected 'greedy' or 'beam')");
    }
    if (options.strategy == "beam" && options.beam_width <= 0) {
        throw ConfigError("beam_width must be positive");
    }
    if (handle.backend == "external") {
        return external_generate(handle, input);
    }
    std::shared_ptr<BuiltinRuntime> runtime = builtin_runtime(handle);
    std::vector<int> ids = runtime->tok.encode(input);
    GenerateResult result;
    if (static_cast<int>(ids.size()) > runtime->max_input_tokens) {
        ids.resize(static_cast<std::size_t>(runtime->max_input_tokens));
        result.input_truncated = true;
    }
    std::vector<int> out_ids = options.strategy == "beam"
                                   ? runtime->model->generate_beam(ids, options.beam_width)
                                   : runtime->model->generate_greedy(ids);
    result.text = runtime->tok.decode(out_ids);
    return result;
}

}  // namespace scicot
