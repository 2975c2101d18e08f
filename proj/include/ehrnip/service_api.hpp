#pragma once

#include "ehrnip/core_model.hpp"
#include "ehrnip/model_backend.hpp"
#include "ehrnip/prompt_composer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ehrnip {

inline constexpr std::string_view kInteractiveEngineLabel = "human-interactive";

struct ServiceConfig {
    std::chrono::seconds ttl{2 * 60 * 60};
    std::string generator_model = "gpt-3.5-turbo";
    double temperature = kGenerationTemperature;
    int max_output_tokens = 512;
    /// Exports go to <store_dir>/instances-interactive-<task>-human-interactive.jsonl
    /// and the session notes to <store_dir>/notes-interactive.jsonl.
    std::filesystem::path store_dir = ".";

    void validate() const;
};

struct ServiceResponse {
    int status = 200;
    nlohmann::ordered_json body;
};

struct Session {
    std::string session_id;
    EhrNote note;
    TaskKind task = TaskKind::QA;
    /// Fixed at creation.
    std::string system_prompt;
    std::vector<DialogueRound> rounds;
    Timestamp created_at{};
    Timestamp expires_at{};
    int exports = 0;
};

nlohmann::ordered_json session_to_json(const Session& session);

/// In-memory interactive sessions where a human takes the patient's seat.
/// Sessions are independent; turns within one session run one at a time.
class SessionService {
public:
    using TimeSource = std::function<Timestamp()>;
    using IdSource = std::function<std::string()>;

    SessionService(std::shared_ptr<ChatBackend> backend, ServiceConfig config,
                   TemplateRegistry registry, TimeSource clock = utc_now,
                   IdSource ids = {});

    /// {note_text, task} -> 201 {session_id}
    ServiceResponse create_session(const nlohmann::json& body);
    /// {payload} -> 200 {response_text, round_index}
    ServiceResponse turn(const std::string& session_id, const nlohmann::json& body);
    ServiceResponse get_session(const std::string& session_id) const;
    /// -> 200 {instance_id, rounds, path}
    ServiceResponse export_session(const std::string& session_id);

    /// Routes a raw request. Unparseable bodies give 400, unknown routes 404.
    ServiceResponse handle(std::string_view method, std::string_view path,
                           std::string_view body);

    /// Copy of a session's current state, if it exists.
    std::optional<Session> snapshot(const std::string& session_id) const;

    /// Drops sessions that expired more than one TTL ago; returns how many.
    std::size_t prune();

    const TemplateRegistry& registry() const noexcept { return registry_; }

private:
    struct Entry {
        mutable std::mutex mutex;
        Session session;
    };

    std::shared_ptr<Entry> find(const std::string& session_id) const;

    std::shared_ptr<ChatBackend> backend_;
    ServiceConfig config_;
    TemplateRegistry registry_;
    TimeSource clock_;
    IdSource ids_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::mutex export_mutex_;
};

ServiceResponse error_response(int status, std::string_view error, std::string_view detail);

struct ServerOptions {
    std::string bind_address = "127.0.0.1";
    /// 0 picks a free port.
    int port = 8080;
    std::optional<std::filesystem::path> static_dir;
};

/// HTTP binding for SessionService.
class SessionServer {
public:
    SessionServer(SessionService& service, ServerOptions options);
    ~SessionServer();

    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    /// Binds and serves on a background thread; returns the bound port.
    /// Throws IoError when the address cannot be bound.
    int start();
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ehrnip
