#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "scicot/common.hpp"
#include "scicot/corpus.hpp"

namespace scicot {

enum class PromptSection { preamble, question, answer, step, uniqueness };

// The rationale-elicitation prompt: a preamble, the question with its
// options, a clause embedding the gold answer, the fixed step clause and a
// clause asking for a question-specific rationale.
struct PromptTemplate {
    std::string preamble =
        "You are a science teacher writing a clear explanation for the question below.";
    std::string answer_clause = "The correct answer is {answer}.";  // {answer} slot required
    std::string step_clause = "Let's think step by step";
    std::string uniqueness_clause =
        "Write an explanation specific to this question; do not reuse generic wording.";
    std::vector<PromptSection> layout = {PromptSection::preamble, PromptSection::question,
                                         PromptSection::answer, PromptSection::step,
                                         PromptSection::uniqueness};

    json to_json() const;
    static PromptTemplate from_json(const json& j);
    std::string hash() const;
};

// Deterministic render; throws ConfigError if the template is missing the
// {answer} slot, DataError if the result violates the template invariants.
std::string build_rationale_prompt(const McqExample& ex, const PromptTemplate& tmpl);

struct DecodeSettings {
    double temperature = 0.0;
    int max_tokens = 512;
    int n_samples = 1;

    json to_json() const;
};

struct TeacherResponse {
    std::string example_id;
    std::string raw_text;  // empty only when the attempt failed
    std::string teacher_id;
    std::string prompt_hash;
    double timestamp = 0.0;
    int attempt = 0;
    std::string error;  // empty on success

    bool ok() const { return error.empty(); }
    json to_json() const;
    static TeacherResponse from_json(const json& j);
};

enum class TeacherErrorKind { none, auth, rate_limit, timeout, length, network };

bool is_retryable(TeacherErrorKind kind);

struct TeacherResult {
    std::string text;
    TeacherErrorKind error = TeacherErrorKind::none;
    std::string message;
};

// One completion endpoint. Implementations must be safe to call from
// multiple threads.
class TeacherClient {
  public:
    virtual ~TeacherClient() = default;
    virtual TeacherResult complete(const std::string& prompt, const DecodeSettings& decode) = 0;
    virtual std::string teacher_id() const = 0;
    // Context window in whitespace tokens; 0 disables the pre-flight check.
    virtual std::size_t max_context_tokens() const { return 0; }
    std::size_t request_count() const { return requests_.load(); }

  protected:
    std::atomic<std::size_t> requests_{0};
};

struct TeacherEndpoint {
    std::string base_url;               // e.g. https://api.example.com/v1
    std::string model;                  // model name sent on the wire
    std::string auth_env = "SCICOT_TEACHER_TOKEN";
    double timeout_seconds = 60.0;
    std::size_t max_context_tokens = 3000;

    json to_json() const;
    static TeacherEndpoint from_json(const json& j);
};

// Chat-completion style JSON POST client; see README for the wire schema.
class HttpTeacherClient : public TeacherClient {
  public:
    explicit HttpTeacherClient(TeacherEndpoint endpoint);
    TeacherResult complete(const std::string& prompt, const DecodeSettings& decode) override;
    std::string teacher_id() const override;
    std::size_t max_context_tokens() const override { return endpoint_.max_context_tokens; }

  private:
    TeacherEndpoint endpoint_;
};

// Offline teacher: a pure function of (prompt, seed). Emits a templated
// rationale naming the gold choice text and two stem keywords.
class MockTeacher : public TeacherClient {
  public:
    explicit MockTeacher(std::uint64_t seed = 0) : seed_(seed) {}
    TeacherResult complete(const std::string& prompt, const DecodeSettings& decode) override;
    std::string teacher_id() const override { return "mock-teacher"; }

  private:
    std::uint64_t seed_;
};

struct RetryPolicy {
    int max_attempts = 4;
    double base_delay_seconds = 0.5;
    double max_delay_seconds = 8.0;
};

using Sleeper = std::function<void(double seconds)>;
Sleeper real_sleeper();

// Content-addressed cache of successful responses, safe for concurrent use.
// Key = sha256(teacher_id, prompt, decode settings); failures are not cached.
class ResponseCache {
  public:
    explicit ResponseCache(std::filesystem::path dir);
    static std::string key(const std::string& teacher_id, const std::string& prompt,
                           const DecodeSettings& decode);
    std::optional<TeacherResponse> lookup(const std::string& key) const;
    void store(const std::string& key, const TeacherResponse& response);
    const std::filesystem::path& dir() const { return dir_; }

  private:
    std::filesystem::path path_for(const std::string& key) const;
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

// Single request with retry/backoff. Pre-flight length check fails without
// touching the network; auth failures are not retried.
TeacherResponse generate(const std::string& prompt, TeacherClient& client,
                         const DecodeSettings& decode, const std::string& example_id = "",
                         const RetryPolicy& retry = {}, const Sleeper& sleep = real_sleeper());

struct BatchOptions {
    int concurrency = 1;
    RetryPolicy retry;
    DecodeSettings decode;
    Sleeper sleep = real_sleeper();
    double min_request_interval_seconds = 0.0;  // crude rate limit; 0 = off
};

// One response per example, output order matching input order. Cache hits
// skip the client entirely; identical prompts are fetched at most once per
// process; a failing example never aborts the batch.
std::vector<TeacherResponse> batch_generate(const std::vector<McqExample>& examples,
                                            const PromptTemplate& tmpl, TeacherClient& client,
                                            ResponseCache* cache, const BatchOptions& options);

}  // namespace scicot
