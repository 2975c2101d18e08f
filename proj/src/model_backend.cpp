#include "ehrnip/model_backend.hpp"

#include "ehrnip/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <thread>

namespace ehrnip {

using nlohmann::json;

void BackendConfig::validate() const {
    if (endpoint_url.empty()) throw ConfigError("backend endpoint_url must not be empty");
    if (api_key_env_name.empty()) throw ConfigError("backend api_key_env must not be empty");
    if (max_retries < 0) throw ConfigError("backend max_retries must be >= 0");
    if (retry_backoff_ms <= 0) throw ConfigError("backend retry_backoff_ms must be > 0");
    if (requests_per_minute <= 0) throw ConfigError("backend requests_per_minute must be > 0");
    if (request_timeout_ms <= 0) throw ConfigError("backend request_timeout_ms must be > 0");
}

// ---------------------------------------------------------------------------
// Clocks and rate limiting

void SystemClock::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

Clock::time_point FakeClock::now() {
    std::lock_guard lock(mu_);
    return now_;
}

void FakeClock::sleep_for(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
    sleeps_.push_back(d);
}

std::vector<std::chrono::milliseconds> FakeClock::sleeps() const {
    std::lock_guard lock(mu_);
    return sleeps_;
}

RateLimiter::RateLimiter(int limit, std::chrono::milliseconds window,
                         std::shared_ptr<Clock> clock)
    : limit_(limit), window_(window), clock_(std::move(clock)) {
    if (limit_ <= 0) throw ConfigError("rate limit must be > 0");
}

Clock::time_point RateLimiter::acquire() {
    for (;;) {
        std::chrono::milliseconds wait{};
        {
            std::lock_guard lock(mu_);
            const auto now = clock_->now();
            while (!taken_.empty() && taken_.front() + window_ <= now) taken_.pop_front();
            if (static_cast<int>(taken_.size()) < limit_) {
                taken_.push_back(now);
                return now;
            }
            wait = std::chrono::ceil<std::chrono::milliseconds>(taken_.front() + window_ - now);
        }
        clock_->sleep_for(std::max(wait, std::chrono::milliseconds(1)));
    }
}

RetryingBackend::RetryingBackend(std::shared_ptr<ChatBackend> inner, BackendConfig config,
                                 std::shared_ptr<Clock> clock,
                                 std::chrono::milliseconds rate_window)
    : inner_(std::move(inner)),
      config_(std::move(config)),
      clock_(std::move(clock)),
      limiter_(config_.requests_per_minute, rate_window, clock_) {
    config_.validate();
}

ChatResult RetryingBackend::complete(const ChatRequest& request) {
    for (int attempt = 1;; ++attempt) {
        limiter_.acquire();
        try {
            return inner_->complete(request);
        } catch (const AuthError&) {
            throw;
        } catch (const ProviderError& e) {
            if (!e.retryable()) throw ProviderError(e.status(), e.body(), attempt);
            if (attempt > config_.max_retries) throw ProviderError(e.status(), e.body(), attempt);
        } catch (const TimeoutError& e) {
            if (attempt > config_.max_retries) {
                throw TimeoutError(std::string(e.what()) + " after " + std::to_string(attempt) +
                                   " attempts");
            }
        }
        const auto backoff =
            std::chrono::milliseconds(static_cast<long long>(config_.retry_backoff_ms)
                                      << std::min(attempt - 1, 20));
        clock_->sleep_for(backoff);
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

namespace {

long rough_token_count(std::string_view s) {
    long n = 0;
    bool in_word = false;
    for (unsigned char c : s) {
        const bool space = std::isspace(c) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<ScriptStep> script)
    : script_(script.begin(), script.end()) {}

ScriptedBackend::ScriptedBackend(Responder responder) : responder_(std::move(responder)) {}

ChatResult ScriptedBackend::complete(const ChatRequest& request) {
    ScriptStep step;
    {
        std::lock_guard lock(mu_);
        log_.push_back(request);
        if (responder_) {
            step = responder_(request);
        } else if (script_.empty()) {
            step = ScriptStep::fail(500, "script exhausted");
        } else {
            step = std::move(script_.front());
            script_.pop_front();
        }
    }
    switch (step.kind) {
        case ScriptStep::Kind::Timeout: throw TimeoutError("scripted timeout");
        case ScriptStep::Kind::Fail:
            if (step.status == 401 || step.status == 403) throw AuthError(step.status, step.text);
            throw ProviderError(step.status, step.text);
        case ScriptStep::Kind::Reply: break;
    }
    ChatResult result;
    result.prompt_token_count = rough_token_count(request.prompt.flatten());
    result.output_token_count = rough_token_count(step.text);
    result.text = std::move(step.text);
    return result;
}

std::vector<ChatRequest> ScriptedBackend::call_log() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::size_t ScriptedBackend::call_count() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

// ---------------------------------------------------------------------------
// Simulated agents

namespace {

std::string_view trim(std::string_view s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            if (!trim(current).empty()) out.emplace_back(trim(current));
            current.clear();
            continue;
        }
        current.push_back(c);
        const bool terminal = c == '.' || c == '?' || c == '!';
        const bool at_break = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
        if (terminal && at_break) {
            if (!trim(current).empty()) out.emplace_back(trim(current));
            current.clear();
        }
    }
    if (!trim(current).empty()) out.emplace_back(trim(current));
    return out;
}

}  // namespace

ScriptStep simulated_reply(const ChatRequest& request, std::string_view judge_reply) {
    const auto& prompt = request.prompt;
    if (prompt.system_text.starts_with("We have Q&A conversations")) {
        return ScriptStep::reply(std::string(judge_reply));
    }
    if (prompt.messages.empty()) return ScriptStep::reply("I need more context.");

    const std::string_view last = prompt.messages.back().text;
    constexpr std::string_view kNoteMarker = "Medical Notes:\n";
    const auto marker = prompt.system_text.find(kNoteMarker);
    const std::string_view note = marker == std::string::npos
                                      ? std::string_view(prompt.system_text)
                                      : std::string_view(prompt.system_text).substr(marker + kNoteMarker.size());

    if (last.find("as a patient") != std::string_view::npos ||
        last.find("as the a patient") != std::string_view::npos) {
        auto sentences = split_sentences(note);
        if (sentences.empty()) sentences.emplace_back(trim(note));
        const auto round = static_cast<std::size_t>(std::count_if(
            prompt.messages.begin(), prompt.messages.end(),
            [](const ChatMessage& m) { return m.role == MessageRole::User; }));
        const auto& sentence = sentences[(round - 1) % sentences.size()];
        const bool qa = last.find("patient and ask ") != std::string_view::npos;
        if (qa) {
            return ScriptStep::reply(encode_patient_output(
                TaskKind::QA, "What does this part of my note mean for me: " + sentence));
        }
        return ScriptStep::reply(encode_patient_output(TaskKind::Explanation, sentence));
    }

    // Assistant: the request sits on the line after the template's lead line.
    std::string_view body = last;
    if (const auto nl = body.find('\n'); nl != std::string_view::npos) body.remove_prefix(nl + 1);
    if (const auto nl = body.find('\n'); nl != std::string_view::npos) body = body.substr(0, nl);
    std::string reply = "In plain words, this is about: ";
    reply.append(trim(body));
    reply.append(" Please ask your care team if anything is still unclear.");
    return ScriptStep::reply(std::move(reply));
}

// ---------------------------------------------------------------------------
// Output parsing

bool valid_utf8(std::string_view s) noexcept {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        int extra = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= s.size()) return false;
        for (int k = 1; k <= extra; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
        if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += extra + 1;
    }
    return true;
}

namespace {

/// Top-level balanced {...} spans, honouring JSON string quoting.
std::vector<std::string_view> balanced_blocks(std::string_view text) {
    std::vector<std::string_view> blocks;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '{') {
            ++i;
            continue;
        }
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t j = i;
        for (; j < text.size(); ++j) {
            const char c = text[j];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) break;
        }
        if (j >= text.size()) break;  // unbalanced tail
        blocks.push_back(text.substr(i, j - i + 1));
        i = j + 1;
    }
    return blocks;
}

json parse_object(std::string_view text) {
    auto j = json::parse(text.begin(), text.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) return json();
    return j;
}

std::optional<std::string> string_field(const json& obj, std::string_view key) {
    if (!obj.is_object()) return std::nullopt;
    const auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) return std::nullopt;
    const auto value = trim(it->get_ref<const std::string&>());
    if (value.empty()) return std::nullopt;
    return std::string(value);
}

/// Position just past `"key"` or `'key'` followed by optional spaces and a
/// colon, searching from `from`; npos when absent.
std::size_t find_key_colon(std::string_view text, std::string_view key, std::size_t from) {
    for (std::size_t pos = text.find(key, from); pos != std::string_view::npos;
         pos = text.find(key, pos + 1)) {
        if (pos == 0 || pos + key.size() >= text.size()) continue;
        const char open = text[pos - 1];
        const char close = text[pos + key.size()];
        if ((open != '"' && open != '\'') || close != open) continue;
        std::size_t k = pos + key.size() + 1;
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k < text.size() && text[k] == ':') return k + 1;
    }
    return std::string_view::npos;
}

std::optional<std::string> scan_quoted_value(std::string_view text, std::string_view key) {
    for (std::size_t from = 0;;) {
        auto k = find_key_colon(text, key, from);
        if (k == std::string_view::npos) return std::nullopt;
        from = k;
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k >= text.size() || (text[k] != '"' && text[k] != '\'')) continue;
        const char quote = text[k];
        std::size_t end = k + 1;
        bool escaped = false;
        for (; end < text.size(); ++end) {
            if (escaped) escaped = false;
            else if (text[end] == '\\') escaped = true;
            else if (text[end] == quote) break;
        }
        if (end >= text.size()) continue;
        const auto inner = text.substr(k + 1, end - k - 1);
        std::string value;
        if (quote == '"') {
            auto decoded = json::parse("\"" + std::string(inner) + "\"", nullptr, false);
            if (decoded.is_discarded() || !decoded.is_string()) continue;
            value = decoded.get<std::string>();
        } else {
            value.reserve(inner.size());
            for (std::size_t i = 0; i < inner.size(); ++i) {
                if (inner[i] == '\\' && i + 1 < inner.size()) ++i;
                value.push_back(inner[i]);
            }
        }
        const auto trimmed = trim(value);
        if (!trimmed.empty() && valid_utf8(trimmed)) return std::string(trimmed);
    }
}

std::optional<long long> coerce_int(const json& v) {
    if (v.is_number_unsigned()) {
        return static_cast<long long>(std::min<std::uint64_t>(v.get<std::uint64_t>(), 1000000000));
    }
    if (v.is_number_integer()) return v.get<long long>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (!std::isfinite(d)) return std::nullopt;
        return std::llround(std::clamp(d, -1e9, 1e9));
    }
    if (v.is_string()) {
        const auto parsed = json::parse(v.get<std::string>(), nullptr, false);
        if (parsed.is_number()) return coerce_int(parsed);
    }
    return std::nullopt;
}

std::optional<long long> scan_number(std::string_view text, std::string_view key) {
    for (std::size_t from = 0;;) {
        auto k = find_key_colon(text, key, from);
        if (k == std::string_view::npos) return std::nullopt;
        from = k;
        while (k < text.size() && (std::isspace(static_cast<unsigned char>(text[k])) ||
                                   text[k] == '"' || text[k] == '\'')) {
            ++k;
        }
        std::size_t end = k;
        if (end < text.size() && (text[end] == '-' || text[end] == '+')) ++end;
        const auto digits_start = end;
        while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
        if (end == digits_start) continue;
        if (end < text.size() && text[end] == '.') {
            ++end;
            while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
        }
        const std::string number(text.substr(k, end - k));
        const double d = std::strtod(number.c_str(), nullptr);
        if (std::isfinite(d)) return std::llround(std::clamp(d, -1e9, 1e9));
    }
}

struct JudgeFields {
    std::optional<long long> values[5];

    std::optional<std::string_view> first_missing() const {
        for (int i = 0; i < 5; ++i) {
            if (!values[i]) return kCriteriaKeys[i];
        }
        return std::nullopt;
    }
};

JudgeFields judge_fields(const json& obj) {
    JudgeFields f;
    if (!obj.is_object()) return f;
    for (int i = 0; i < 5; ++i) {
        const auto it = obj.find(kCriteriaKeys[i]);
        if (it != obj.end()) f.values[i] = coerce_int(*it);
    }
    return f;
}

}  // namespace

std::string parse_patient_output(std::string_view raw, TaskKind task) {
    const std::string_view key = task == TaskKind::QA ? "question" : "content";
    if (auto v = string_field(parse_object(trim(raw)), key)) return *v;
    for (auto block : balanced_blocks(raw)) {
        if (auto v = string_field(parse_object(block), key)) return *v;
    }
    if (auto v = scan_quoted_value(raw, key)) return *v;
    throw PatientParseError(std::string(raw), 3);
}

CriteriaScores parse_judge_output(std::string_view raw) {
    const auto to_scores = [](const JudgeFields& f) {
        return make_scores(*f.values[0], *f.values[1], *f.values[2], *f.values[3], *f.values[4]);
    };
    auto fields = judge_fields(parse_object(trim(raw)));
    if (!fields.first_missing()) return to_scores(fields);
    for (auto block : balanced_blocks(raw)) {
        auto candidate = judge_fields(parse_object(block));
        if (!candidate.first_missing()) return to_scores(candidate);
    }
    JudgeFields scanned;
    for (int i = 0; i < 5; ++i) scanned.values[i] = scan_number(raw, kCriteriaKeys[i]);
    if (auto missing = scanned.first_missing()) {
        throw JudgeParseError(std::string(raw), std::string(*missing));
    }
    return to_scores(scanned);
}

std::string_view format_reminder(TaskKind task) {
    return task == TaskKind::QA
               ? R"(Reminder: reply only with a dictionary of the form {"question": <your question>}.)"
               : R"(Reminder: reply only with a dictionary of the form {"content": <the selected sentence>}.)";
}

std::string_view judge_format_reminder() {
    return R"(Reminder: reply only with a dictionary of the form {"Relevance": <0-5>, "Factuality": <0-5>, "Sufficiency": <0-5>, "Concision": <0-5>, "Fluent": <0-5>}.)";
}

}  // namespace ehrnip
