#include "scicot/teacher.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <thread>
#include <unordered_map>

#include "scicot/markers.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace scicot {

namespace {

size_t count_occurrences(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return 0;
    size_t count = 0;
    size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

std::string section_name(PromptSection s) {
    switch (s) {
        case PromptSection::preamble: return "preamble";
        case PromptSection::question: return "question";
        case PromptSection::answer: return "answer";
        case PromptSection::step: return "step";
        case PromptSection::uniqueness: return "uniqueness";
    }
    return "preamble";
}

PromptSection section_from_name(const std::string& name) {
    for (PromptSection s : {PromptSection::preamble, PromptSection::question, PromptSection::answer,
                            PromptSection::step, PromptSection::uniqueness}) {
        if (section_name(s) == name) return s;
    }
    throw ConfigError("unknown prompt section '" + name + "'");
}

}  // namespace

json PromptTemplate::to_json() const {
    json layout_json = json::array();
    for (PromptSection s : layout) layout_json.push_back(section_name(s));
    return json{{"preamble", preamble},
                {"answer_clause", answer_clause},
                {"step_clause", step_clause},
                {"uniqueness_clause", uniqueness_clause},
                {"layout", layout_json}};
}

PromptTemplate PromptTemplate::from_json(const json& j) {
    PromptTemplate t;
    if (j.contains("preamble")) t.preamble = j["preamble"].get<std::string>();
    if (j.contains("answer_clause")) t.answer_clause = j["answer_clause"].get<std::string>();
    if (j.contains("step_clause")) t.step_clause = j["step_clause"].get<std::string>();
    if (j.contains("uniqueness_clause")) t.uniqueness_clause = j["uniqueness_clause"].get<std::string>();
    if (j.contains("layout")) {
        t.layout.clear();
        for (const auto& name : j["layout"]) {
            t.layout.push_back(section_from_name(name.get<std::string>()));
        }
    }
    return t;
}

std::string PromptTemplate::hash() const { return sha256_hex(to_json().dump()); }

std::string build_rationale_prompt(const McqExample& ex, const PromptTemplate& tmpl) {
    validate_example(ex, "build_rationale_prompt(" + ex.id + ")");
    const std::string slot = "{answer}";
    size_t slot_pos = tmpl.answer_clause.find(slot);
    if (slot_pos == std::string::npos) {
        throw ConfigError("prompt template answer_clause is missing the {answer} slot");
    }
    std::string answer_clause = tmpl.answer_clause;
    answer_clause.replace(slot_pos, slot.size(), answer_surface_form(ex));

    std::vector<std::string> parts;
    for (PromptSection s : tmpl.layout) {
        switch (s) {
            case PromptSection::preamble:
                if (!tmpl.preamble.empty()) parts.push_back(tmpl.preamble);
                break;
            case PromptSection::question: parts.push_back(render_question_block(ex)); break;
            case PromptSection::answer: parts.push_back(answer_clause); break;
            case PromptSection::step: parts.push_back(tmpl.step_clause + "."); break;
            case PromptSection::uniqueness:
                if (!tmpl.uniqueness_clause.empty()) parts.push_back(tmpl.uniqueness_clause);
                break;
        }
    }
    std::string prompt;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) prompt += "\n";
        prompt += parts[i];
    }

    // Template invariants: stem, every choice text and the gold answer are
    // present; the step clause appears exactly once.
    if (prompt.find(ex.stem) == std::string::npos) {
        throw DataError("rendered prompt lost the question stem (example " + ex.id + ")");
    }
    for (const auto& c : ex.choices) {
        if (prompt.find(c.text) == std::string::npos) {
            throw DataError("rendered prompt lost choice '" + c.label + "' (example " + ex.id + ")");
        }
    }
    if (prompt.find(answer_surface_form(ex)) == std::string::npos) {
        throw DataError("rendered prompt lost the gold answer (example " + ex.id + ")");
    }
    if (count_occurrences(prompt, tmpl.step_clause) != 1) {
        throw DataError("rendered prompt must contain the step clause exactly once (example " +
                        ex.id + ")");
    }
    return prompt;
}

json DecodeSettings::to_json() const {
    return json{{"temperature", temperature}, {"max_tokens", max_tokens}, {"n_samples", n_samples}};
}

json TeacherResponse::to_json() const {
    return json{{"example_id", example_id}, {"raw_text", raw_text},   {"teacher_id", teacher_id},
                {"prompt_hash", prompt_hash}, {"timestamp", timestamp}, {"attempt", attempt},
                {"error", error}};
}

TeacherResponse TeacherResponse::from_json(const json& j) {
    TeacherResponse r;
    r.example_id = j.at("example_id").get<std::string>();
    r.raw_text = j.at("raw_text").get<std::string>();
    r.teacher_id = j.at("teacher_id").get<std::string>();
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.timestamp = j.at("timestamp").get<double>();
    r.attempt = j.at("attempt").get<int>();
    r.error = j.value("error", "");
    return r;
}

bool is_retryable(TeacherErrorKind kind) {
    return kind == TeacherErrorKind::rate_limit || kind == TeacherErrorKind::timeout ||
           kind == TeacherErrorKind::network;
}

json TeacherEndpoint::to_json() const {
    return json{{"base_url", base_url},
                {"model", model},
                {"auth_env", auth_env},
                {"timeout_seconds", timeout_seconds},
                {"max_context_tokens", max_context_tokens}};
}

TeacherEndpoint TeacherEndpoint::from_json(const json& j) {
    TeacherEndpoint e;
    e.base_url = j.at("base_url").get<std::string>();
    e.model = j.at("model").get<std::string>();
    e.auth_env = j.value("auth_env", e.auth_env);
    e.timeout_seconds = j.value("timeout_seconds", e.timeout_seconds);
    e.max_context_tokens = j.value("max_context_tokens", e.max_context_tokens);
    return e;
}

HttpTeacherClient::HttpTeacherClient(TeacherEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.base_url.empty()) {
        throw ConfigError("teacher endpoint base_url is empty");
    }
}

std::string HttpTeacherClient::teacher_id() const {
    return endpoint_.base_url + "#" + endpoint_.model;
}

TeacherResult HttpTeacherClient::complete(const std::string& prompt, const DecodeSettings& decode) {
    requests_.fetch_add(1);
    const char* token = std::getenv(endpoint_.auth_env.c_str());
    if (token == nullptr || *token == '\0') {
        return {"", TeacherErrorKind::auth,
                "auth token environment variable '" + endpoint_.auth_env + "' is not set"};
    }

    json body = {
        {"model", endpoint_.model},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
        {"temperature", decode.temperature},
        {"max_tokens", decode.max_tokens},
        {"n", decode.n_samples},
    };

    httplib::Client cli(endpoint_.base_url);
    cli.set_connection_timeout(std::chrono::duration<double>(endpoint_.timeout_seconds));
    cli.set_read_timeout(std::chrono::duration<double>(endpoint_.timeout_seconds));
    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + token}};
    auto res = cli.Post("/chat/completions", headers, body.dump(), "application/json");

    if (!res) {
        auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
            err == httplib::Error::Write) {
            return {"", TeacherErrorKind::timeout, "request timed out"};
        }
        return {"", TeacherErrorKind::network, "connection failed: " + httplib::to_string(err)};
    }
    if (res->status == 401 || res->status == 403) {
        return {"", TeacherErrorKind::auth, "authentication rejected (" + std::to_string(res->status) + ")"};
    }
    if (res->status == 429) {
        return {"", TeacherErrorKind::rate_limit, "rate limited (429)"};
    }
    if (res->status == 408) {
        return {"", TeacherErrorKind::timeout, "request timeout (408)"};
    }
    if (res->status >= 500) {
        return {"", TeacherErrorKind::network, "server error (" + std::to_string(res->status) + ")"};
    }
    if (res->status != 200) {
        return {"", TeacherErrorKind::network,
                "unexpected status " + std::to_string(res->status) + ": " + res->body};
    }
    try {
        json parsed = json::parse(res->body);
        std::string text = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
        return {text, TeacherErrorKind::none, ""};
    } catch (const json::exception& e) {
        return {"", TeacherErrorKind::network, std::string("malformed completion payload: ") + e.what()};
    }
}

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words = {
        "the",  "a",    "an",   "of",   "in",   "on",    "is",    "are",  "was",  "and",
        "or",   "to",   "for",  "with", "which", "what",  "that",  "this", "it",   "its",
        "does", "do",   "by",   "from", "as",    "at",    "be",    "most", "best", "into",
        "when", "where", "how",  "why",  "who",   "will",  "can",   "has",  "have", "than",
        "under", "over", "about"};
    return words;
}

std::string strip_edge_punct(const std::string& word) {
    size_t b = 0;
    size_t e = word.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(word[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(word[e - 1]))) --e;
    return word.substr(b, e - b);
}

// Two distinctive stem words: longest first, ties by position. Falls back to
// whatever the stem offers when it is all short or stop words.
std::vector<std::string> pick_keywords(const std::string& stem) {
    std::vector<std::string> candidates;
    for (const auto& raw : split_whitespace(stem)) {
        std::string w = strip_edge_punct(raw);
        if (w.size() < 4) continue;
        if (stopwords().count(to_lower(w))) continue;
        if (std::find(candidates.begin(), candidates.end(), w) == candidates.end()) {
            candidates.push_back(w);
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });
    if (candidates.size() > 2) candidates.resize(2);
    while (candidates.size() < 2) candidates.push_back("question");
    return candidates;
}

struct ParsedPrompt {
    std::string stem;
    std::vector<std::pair<std::string, std::string>> options;  // label -> text
    std::string gold_text;
};

// Recovers stem, options and the gold choice from a rendered prompt. The
// gold choice is the one whose "X) text" surface form appears outside the
// options line, which the template invariants guarantee.
ParsedPrompt parse_prompt(const std::string& prompt) {
    ParsedPrompt out;
    size_t qpos = prompt.find(kQuestionMarker);
    if (qpos != std::string::npos) {
        size_t start = qpos + std::string(kQuestionMarker).size();
        size_t end = prompt.find('\n', start);
        out.stem = trim(prompt.substr(start, end == std::string::npos ? std::string::npos : end - start));
    }
    size_t opos = prompt.find(kOptionsMarker);
    std::string options_line;
    if (opos != std::string::npos) {
        size_t start = opos + std::string(kOptionsMarker).size();
        size_t end = prompt.find('\n', start);
        options_line = prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
    }
    // Option boundaries look like " X) " with X in A..E.
    std::vector<std::pair<size_t, char>> boundaries;
    for (size_t i = 0; i + 1 < options_line.size(); ++i) {
        char c = options_line[i];
        if (c >= 'A' && c <= 'E' && options_line[i + 1] == ')' &&
            (i == 0 || options_line[i - 1] == ' ')) {
            boundaries.push_back({i, c});
        }
    }
    for (size_t k = 0; k < boundaries.size(); ++k) {
        size_t text_start = boundaries[k].first + 2;
        size_t text_end = (k + 1 < boundaries.size()) ? boundaries[k + 1].first : options_line.size();
        std::string text = trim(options_line.substr(text_start, text_end - text_start));
        out.options.push_back({std::string(1, boundaries[k].second), text});
    }
    std::string rest = prompt;
    if (opos != std::string::npos) {
        size_t line_end = prompt.find('\n', opos);
        rest = prompt.substr(0, opos) +
               (line_end == std::string::npos ? "" : prompt.substr(line_end + 1));
    }
    for (const auto& [label, text] : out.options) {
        if (rest.find(label + ") " + text) != std::string::npos) {
            out.gold_text = text;
            break;
        }
    }
    return out;
}

}  // namespace

TeacherResult MockTeacher::complete(const std::string& prompt, const DecodeSettings& decode) {
    (void)decode;
    requests_.fetch_add(1);
    ParsedPrompt parsed = parse_prompt(prompt);
    if (parsed.gold_text.empty()) {
        // Not a prompt this mock understands; still answer deterministically.
        parsed.gold_text = "the first option";
    }
    std::vector<std::string> keywords = pick_keywords(parsed.stem);

    static const std::vector<std::string> verbs = {"points to", "refers to", "maps to"};
    std::uint64_t pick = std::stoull(
        sha256_hex(prompt + "#" + std::to_string(seed_)).substr(0, 8), nullptr, 16);
    const std::string& verb = verbs[pick % verbs.size()];

    // One short sentence: both stem keywords plus the gold choice text. The
    // gold text stays an unpunctuated token so downstream matching is exact.
    std::string text = "Under " + keywords[1] + ", " + keywords[0] + " " + verb + " " +
                       parsed.gold_text + " here.";
    return {text, TeacherErrorKind::none, ""};
}

Sleeper real_sleeper() {
    return [](double seconds) {
        if (seconds > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
        }
    };
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::string ResponseCache::key(const std::string& teacher_id, const std::string& prompt,
                               const DecodeSettings& decode) {
    json material = {{"teacher_id", teacher_id}, {"prompt", prompt}, {"decode", decode.to_json()}};
    return sha256_hex(material.dump());
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<TeacherResponse> ResponseCache::lookup(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto path = path_for(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    try {
        return TeacherResponse::from_json(json::parse(read_text_file(path)));
    } catch (const std::exception&) {
        return std::nullopt;  // a torn record is treated as a miss
    }
}

void ResponseCache::store(const std::string& key, const TeacherResponse& response) {
    std::lock_guard<std::mutex> lock(mutex_);
    write_text_file_atomic(path_for(key), response.to_json().dump());
}

TeacherResponse generate(const std::string& prompt, TeacherClient& client,
                         const DecodeSettings& decode, const std::string& example_id,
                         const RetryPolicy& retry, const Sleeper& sleep) {
    TeacherResponse response;
    response.example_id = example_id;
    response.teacher_id = client.teacher_id();
    response.prompt_hash = sha256_hex(prompt);

    std::size_t limit = client.max_context_tokens();
    if (limit > 0 && split_whitespace(prompt).size() > limit) {
        response.timestamp = unix_time_seconds();
        response.attempt = 0;
        response.error = "prompt exceeds context limit of " + std::to_string(limit) +
                         " tokens (pre-flight length check)";
        return response;
    }

    std::string last_error;
    for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
        TeacherResult result = client.complete(prompt, decode);
        response.attempt = attempt;
        response.timestamp = unix_time_seconds();
        if (result.error == TeacherErrorKind::none) {
            response.raw_text = result.text;
            response.error.clear();
            return response;
        }
        last_error = result.message;
        if (!is_retryable(result.error)) {
            response.error = result.message;
            return response;
        }
        if (attempt < retry.max_attempts) {
            double delay = retry.base_delay_seconds * std::pow(2.0, attempt - 1);
            sleep(std::min(delay, retry.max_delay_seconds));
        }
    }
    response.error = "retries exhausted after " + std::to_string(retry.max_attempts) +
                     " attempts: " + last_error;
    return response;
}

std::vector<TeacherResponse> batch_generate(const std::vector<McqExample>& examples,
                                            const PromptTemplate& tmpl, TeacherClient& client,
                                            ResponseCache* cache, const BatchOptions& options) {
    if (options.concurrency < 1) {
        throw ConfigError("batch_generate concurrency must be >= 1");
    }
    struct Job {
        std::string key;
        std::string prompt;
        std::vector<size_t> example_indices;
    };
    std::vector<Job> jobs;
    std::unordered_map<std::string, size_t> key_to_job;
    std::vector<std::string> prompts(examples.size());
    for (size_t i = 0; i < examples.size(); ++i) {
        prompts[i] = build_rationale_prompt(examples[i], tmpl);
        std::string key = ResponseCache::key(client.teacher_id(), prompts[i], options.decode);
        auto [it, inserted] = key_to_job.try_emplace(key, jobs.size());
        if (inserted) {
            jobs.push_back(Job{key, prompts[i], {}});
        }
        jobs[it->second].example_indices.push_back(i);
    }

    std::vector<TeacherResponse> responses(examples.size());
    std::mutex rate_mutex;
    auto next_allowed = std::chrono::steady_clock::now();

    std::atomic<size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            size_t j = cursor.fetch_add(1);
            if (j >= jobs.size()) break;
            const Job& job = jobs[j];

            std::optional<TeacherResponse> hit =
                cache ? cache->lookup(job.key) : std::nullopt;
            TeacherResponse base;
            if (hit) {
                base = *hit;
            } else {
                if (options.min_request_interval_seconds > 0) {
                    double wait = 0;
                    {
                        std::lock_guard<std::mutex> lock(rate_mutex);
                        auto now = std::chrono::steady_clock::now();
                        if (next_allowed > now) {
                            wait = std::chrono::duration<double>(next_allowed - now).count();
                        }
                        auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(options.min_request_interval_seconds));
                        next_allowed = std::max(next_allowed, now) + interval;
                    }
                    options.sleep(wait);
                }
                base = generate(job.prompt, client, options.decode,
                                examples[job.example_indices.front()].id, options.retry,
                                options.sleep);
                if (base.ok() && cache) {
                    cache->store(job.key, base);
                }
            }
            for (size_t idx : job.example_indices) {
                TeacherResponse r = base;
                r.example_id = examples[idx].id;
                responses[idx] = std::move(r);
            }
        }
    };

    size_t n_threads = std::min<size_t>(options.concurrency, std::max<size_t>(jobs.size(), 1));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return responses;
}

}  // namespace scicot
