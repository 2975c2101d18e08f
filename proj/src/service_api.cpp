#include "ehrnip/service_api.hpp"

#include "ehrnip/dataset_store.hpp"
#include "ehrnip/errors.hpp"
#include "ehrnip/pipeline_engine.hpp"

#include <openssl/rand.h>

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace ehrnip {

using nlohmann::json;
using nlohmann::ordered_json;

void ServiceConfig::validate() const {
    if (ttl.count() <= 0) throw ConfigError("service ttl must be > 0 seconds");
    if (generator_model.empty()) throw ConfigError("service generator model must be set");
    if (max_output_tokens < 1) throw ConfigError("max_output_tokens must be >= 1");
}

ServiceResponse error_response(int status, std::string_view error, std::string_view detail) {
    ordered_json body;
    body["error"] = error;
    body["detail"] = detail;
    return {status, std::move(body)};
}

namespace {

std::string random_session_id() {
    unsigned char bytes[16];
    if (RAND_bytes(bytes, sizeof bytes) != 1) throw Error("RAND_bytes failed");
    std::string out;
    out.reserve(32);
    char hex[3];
    for (unsigned char b : bytes) {
        std::snprintf(hex, sizeof hex, "%02x", b);
        out += hex;
    }
    return out;
}

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::optional<std::string> string_field(const json& body, const char* key) {
    if (!body.is_object()) return std::nullopt;
    const auto it = body.find(key);
    if (it == body.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
}

InteractionInstance session_instance(const Session& s) {
    InteractionInstance inst;
    inst.note_id = s.note.id;
    inst.corpus = Corpus::Interactive;
    inst.task = s.task;
    inst.engine_label = std::string(kInteractiveEngineLabel);
    inst.rounds = s.rounds;
    inst.created_at = s.created_at;
    inst.instance_id = make_instance_id(inst.corpus, inst.note_id, inst.task, inst.engine_label);
    return inst;
}

}  // namespace

ordered_json session_to_json(const Session& s) {
    ordered_json j;
    j["session_id"] = s.session_id;
    j["note"] = note_to_json(s.note);
    j["task"] = to_string(s.task);
    j["created_at"] = format_timestamp(s.created_at);
    j["expires_at"] = format_timestamp(s.expires_at);
    j["rounds"] = instance_to_json(session_instance(s))["rounds"];
    return j;
}

SessionService::SessionService(std::shared_ptr<ChatBackend> backend, ServiceConfig config,
                               TemplateRegistry registry, TimeSource clock, IdSource ids)
    : backend_(std::move(backend)),
      config_(std::move(config)),
      registry_(std::move(registry)),
      clock_(std::move(clock)),
      ids_(ids ? std::move(ids) : IdSource(random_session_id)) {
    if (!backend_) throw ConfigError("session service needs a backend");
    config_.validate();
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

ServiceResponse SessionService::create_session(const json& body) {
    const auto note_text = string_field(body, "note_text");
    if (!note_text || blank(*note_text)) {
        return error_response(400, "bad_request", "note_text must be a non-empty string");
    }
    const auto task_name = string_field(body, "task");
    const auto task = task_name ? task_from_string(*task_name) : std::nullopt;
    if (!task) return error_response(400, "bad_request", "task must be \"qa\" or \"explanation\"");

    auto entry = std::make_shared<Entry>();
    Session& s = entry->session;
    s.task = *task;
    s.created_at = clock_();
    s.expires_at = s.created_at + config_.ttl;

    prune();
    std::unique_lock lock(sessions_mutex_);
    do {
        s.session_id = ids_();
    } while (sessions_.contains(s.session_id));
    s.note = {"session-" + s.session_id, Corpus::Interactive, *note_text};
    s.system_prompt = render_system_prompt(s.note, registry_);
    sessions_.emplace(s.session_id, entry);

    ordered_json out;
    out["session_id"] = s.session_id;
    return {201, std::move(out)};
}

ServiceResponse SessionService::turn(const std::string& session_id, const json& body) {
    const auto entry = find(session_id);
    if (!entry) return error_response(404, "not_found", "unknown session " + session_id);

    std::lock_guard lock(entry->mutex);
    Session& s = entry->session;
    if (clock_() >= s.expires_at) {
        return error_response(410, "expired", "session " + session_id + " has expired");
    }
    const auto payload = string_field(body, "payload");
    if (!payload || blank(*payload)) {
        return error_response(422, "unprocessable", "payload must be a non-empty string");
    }

    const int k = static_cast<int>(s.rounds.size()) + 1;
    DialogueRound round;
    round.request = {s.task, *payload, k};
    for (const auto& prior : s.rounds) {
        if (prior.request.payload == *payload) {
            round.warnings.emplace_back(warning::kDuplicateRequest);
            break;
        }
    }
    if (s.task == TaskKind::Explanation && !selection_in_note(*payload, s.note.text)) {
        round.warnings.emplace_back(warning::kSelectionNotInNote);
    }

    ChatRequest request{compose_assistant_prompt(s.note, s.rounds, round.request, registry_),
                        config_.generator_model, config_.temperature, config_.max_output_tokens};
    ChatResult result;
    try {
        result = backend_->complete(request);
    } catch (const ProviderError& e) {
        auto r = error_response(502, "ProviderError", e.what());
        r.body["status"] = e.status();
        r.body["attempts"] = e.attempts();
        return r;
    } catch (const TimeoutError& e) {
        return error_response(502, "TimeoutError", e.what());
    }
    if (blank(result.text)) return error_response(502, "ProviderError", "empty completion");

    round.response = {result.text, k};
    s.rounds.push_back(std::move(round));

    ordered_json out;
    out["response_text"] = result.text;
    out["round_index"] = k;
    out["warnings"] = s.rounds.back().warnings;
    return {200, std::move(out)};
}

ServiceResponse SessionService::get_session(const std::string& session_id) const {
    const auto s = snapshot(session_id);
    if (!s) return error_response(404, "not_found", "unknown session " + session_id);
    return {200, session_to_json(*s)};
}

ServiceResponse SessionService::export_session(const std::string& session_id) {
    const auto entry = find(session_id);
    if (!entry) return error_response(404, "not_found", "unknown session " + session_id);

    std::lock_guard lock(entry->mutex);
    Session& s = entry->session;
    if (s.rounds.empty()) {
        return error_response(409, "conflict", "session has no rounds to export");
    }
    auto instance = session_instance(s);
    // Repeated exports of a growing session stay distinguishable.
    if (s.exports > 0) instance.instance_id += ":" + std::to_string(s.exports + 1);

    const auto instances_path = config_.store_dir / instances_file_name(
                                                        instance.corpus, instance.task,
                                                        instance.engine_label);
    const auto notes_path = config_.store_dir / "notes-interactive.jsonl";
    try {
        std::lock_guard file_lock(export_mutex_);
        if (s.exports == 0) append_notes(notes_path, std::span(&s.note, 1));
        append_instances(instances_path, std::span(&instance, 1));
    } catch (const IoError& e) {
        return error_response(500, "IoError", e.what());
    }
    ++s.exports;

    ordered_json out;
    out["instance_id"] = instance.instance_id;
    out["rounds"] = instance.rounds.size();
    out["path"] = instances_path.string();
    return {200, std::move(out)};
}

std::optional<Session> SessionService::snapshot(const std::string& session_id) const {
    const auto entry = find(session_id);
    if (!entry) return std::nullopt;
    std::lock_guard lock(entry->mutex);
    return entry->session;
}

std::size_t SessionService::prune() {
    const auto now = clock_();
    std::unique_lock lock(sessions_mutex_);
    return std::erase_if(sessions_, [&](const auto& kv) {
        std::lock_guard entry_lock(kv.second->mutex);
        return now >= kv.second->session.expires_at + config_.ttl;
    });
}

ServiceResponse SessionService::handle(std::string_view method, std::string_view path,
                                       std::string_view body) {
    constexpr std::string_view prefix = "/sessions";
    if (!path.starts_with(prefix)) return error_response(404, "not_found", "no such route");
    auto rest = path.substr(prefix.size());

    json parsed;
    if (method == "POST") {
        parsed = body.empty() ? json::object() : json::parse(body, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object()) {
            return error_response(400, "bad_request", "body must be a JSON object");
        }
    }

    if (rest.empty() || rest == "/") {
        if (method == "POST") return create_session(parsed);
        return error_response(405, "method_not_allowed", "use POST /sessions");
    }
    if (rest.front() != '/') return error_response(404, "not_found", "no such route");
    rest.remove_prefix(1);
    const auto slash = rest.find('/');
    const std::string id(rest.substr(0, slash));
    const auto action = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash);

    if (action.empty()) {
        if (method == "GET") return get_session(id);
        return error_response(405, "method_not_allowed", "use GET /sessions/{id}");
    }
    if (action == "/turn" || action == "/export") {
        if (method != "POST") return error_response(405, "method_not_allowed", "use POST");
        return action == "/turn" ? turn(id, parsed) : export_session(id);
    }
    return error_response(404, "not_found", "no such route");
}

}  // namespace ehrnip
