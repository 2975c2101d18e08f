#pragma once

#include "ehrnip/core_model.hpp"
#include "ehrnip/prompt_composer.hpp"

#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace ehrnip {

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kJudgeTemperature = 0.0;

struct ChatRequest {
    ComposedPrompt prompt;
    std::string model_name;
    double temperature = kGenerationTemperature;
    int max_output_tokens = 512;

    bool operator==(const ChatRequest&) const = default;
};

struct ChatResult {
    std::string text;
    long prompt_token_count = 0;
    long output_token_count = 0;
    long latency_ms = 0;

    bool operator==(const ChatResult&) const = default;
};

struct BackendConfig {
    std::string endpoint_url = "https://api.openai.com/v1";
    std::string api_key_env_name = "EHRNIP_API_KEY";
    int max_retries = 3;
    int retry_backoff_ms = 1000;
    int requests_per_minute = 60;
    int request_timeout_ms = 60000;

    /// Throws ConfigError when a value is out of range.
    void validate() const;
};

/// A chat-completion provider. Implementations must allow concurrent calls.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Throws ProviderError, AuthError or TimeoutError.
    virtual ChatResult complete(const ChatRequest& request) = 0;
};

/// Time source used by the retry and rate-limit logic; tests swap in a fake.
class Clock {
public:
    using time_point = std::chrono::steady_clock::time_point;
    virtual ~Clock() = default;
    virtual time_point now() = 0;
    virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock final : public Clock {
public:
    time_point now() override { return std::chrono::steady_clock::now(); }
    void sleep_for(std::chrono::milliseconds d) override;
};

/// Virtual time: sleep_for advances now() and records the requested duration.
class FakeClock final : public Clock {
public:
    time_point now() override;
    void sleep_for(std::chrono::milliseconds d) override;
    std::vector<std::chrono::milliseconds> sleeps() const;

private:
    mutable std::mutex mu_;
    time_point now_{};
    std::vector<std::chrono::milliseconds> sleeps_;
};

/// Sliding-window limiter: at most `limit` acquisitions in any `window`.
class RateLimiter {
public:
    RateLimiter(int limit, std::chrono::milliseconds window, std::shared_ptr<Clock> clock);

    /// Blocks (through the clock) until a slot is free, then takes it.
    /// Returns the time the slot was taken.
    Clock::time_point acquire();

private:
    int limit_;
    std::chrono::milliseconds window_;
    std::shared_ptr<Clock> clock_;
    std::mutex mu_;
    std::deque<Clock::time_point> taken_;
};

/// Adds rate limiting and exponential-backoff retries on 429/5xx and
/// timeouts around another backend. 401/403 fail immediately.
class RetryingBackend final : public ChatBackend {
public:
    RetryingBackend(std::shared_ptr<ChatBackend> inner, BackendConfig config,
                    std::shared_ptr<Clock> clock = std::make_shared<SystemClock>(),
                    std::chrono::milliseconds rate_window = std::chrono::minutes(1));

    ChatResult complete(const ChatRequest& request) override;

private:
    std::shared_ptr<ChatBackend> inner_;
    BackendConfig config_;
    std::shared_ptr<Clock> clock_;
    RateLimiter limiter_;
};

/// One scripted provider behaviour.
struct ScriptStep {
    enum class Kind { Reply, Fail, Timeout };
    Kind kind = Kind::Reply;
    std::string text;
    int status = 200;

    static ScriptStep reply(std::string text) { return {Kind::Reply, std::move(text), 200}; }
    static ScriptStep fail(int status, std::string body = "scripted failure") {
        return {Kind::Fail, std::move(body), status};
    }
    static ScriptStep timeout() { return {Kind::Timeout, {}, 0}; }
};

/// Deterministic offline provider. Either replays a fixed queue of steps in
/// call order, or asks a responder function for each request. Every request
/// is kept in a call log.
class ScriptedBackend final : public ChatBackend {
public:
    using Responder = std::function<ScriptStep(const ChatRequest&)>;

    explicit ScriptedBackend(std::vector<ScriptStep> script);
    explicit ScriptedBackend(Responder responder);

    ChatResult complete(const ChatRequest& request) override;

    std::vector<ChatRequest> call_log() const;
    std::size_t call_count() const;

private:
    mutable std::mutex mu_;
    std::deque<ScriptStep> script_;
    Responder responder_;
    std::vector<ChatRequest> log_;
};

/// Offline stand-in for a real model: plays the mock patient, the assistant
/// and the judge by recognising which fixed template the prompt carries.
/// Output depends only on the prompt, so parallel runs stay reproducible.
ScriptStep simulated_reply(const ChatRequest& request, std::string_view judge_reply);

/// The judge example dictionary shipped in the evaluation prompt.
inline constexpr std::string_view kExampleJudgeReply =
    R"({"Relevance": 4, "Factuality": 5, "Sufficiency": 4, "Concision": 3, "Fluent": 5})";

/// Extracts the "question" (QA) or "content" (Explanation) string. Tries a
/// strict JSON parse, then balanced {...} blocks, then a key/quoted-string
/// scan. Result is trimmed and non-empty; throws PatientParseError otherwise.
std::string parse_patient_output(std::string_view raw, TaskKind task);

/// Same ladder for the five rubric keys. Values are coerced to integers and
/// clamped to [0, 5]. Throws JudgeParseError naming a missing key.
CriteriaScores parse_judge_output(std::string_view raw);

/// Line appended to the last user message when a structured reply had to be
/// requested a second time.
std::string_view format_reminder(TaskKind task);
std::string_view judge_format_reminder();

/// Calls the backend and parses the reply; on a parse failure re-asks once
/// with the reminder appended. The second parse failure propagates. `raw`
/// receives the text of the last reply.
template <typename Parse>
auto complete_structured(ChatBackend& backend, ChatRequest request, std::string_view reminder,
                         Parse&& parse, std::string* raw = nullptr) -> decltype(parse(""));

/// True when `s` is well-formed UTF-8.
bool valid_utf8(std::string_view s) noexcept;

}  // namespace ehrnip

#include "ehrnip/model_backend_inl.hpp"
