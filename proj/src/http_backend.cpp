#include "ehrnip/http_backend.hpp"

#include "ehrnip/errors.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>

namespace ehrnip {

using nlohmann::json;

json to_wire_json(const ChatRequest& request) {
    json messages = json::array();
    if (!request.prompt.system_text.empty()) {
        messages.push_back({{"role", "system"}, {"content", request.prompt.system_text}});
    }
    for (const auto& m : request.prompt.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.text}});
    }
    return {{"model", request.model_name},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
}

ChatResult from_wire_json(const json& body) {
    try {
        ChatResult result;
        const auto& content = body.at("choices").at(0).at("message").at("content");
        result.text = content.is_null() ? std::string() : content.get<std::string>();
        if (const auto usage = body.find("usage"); usage != body.end() && usage->is_object()) {
            result.prompt_token_count = usage->value("prompt_tokens", 0L);
            result.output_token_count = usage->value("completion_tokens", 0L);
        }
        return result;
    } catch (const json::exception& e) {
        throw ProviderError(200, std::string("malformed completion body: ") + e.what());
    }
}

HttpChatBackend::HttpChatBackend(BackendConfig config, std::string api_key)
    : config_(std::move(config)), api_key_(std::move(api_key)) {
    config_.validate();
    const auto scheme_end = config_.endpoint_url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint_url needs a scheme: " + config_.endpoint_url);
    }
    const auto path_start = config_.endpoint_url.find('/', scheme_end + 3);
    base_url_ = config_.endpoint_url.substr(0, path_start);
    if (path_start != std::string::npos) path_prefix_ = config_.endpoint_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

HttpChatBackend::~HttpChatBackend() = default;

ChatResult HttpChatBackend::complete(const ChatRequest& request) {
    // httplib clients are not safe to share between threads.
    httplib::Client client(base_url_);
    const auto timeout = std::chrono::milliseconds(config_.request_timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    if (!api_key_.empty()) client.set_bearer_token_auth(api_key_);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path_prefix_ + "/chat/completions", to_wire_json(request).dump(),
                           "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::Write ||
            err == httplib::Error::ConnectionTimeout) {
            throw TimeoutError("request timed out: " + httplib::to_string(err));
        }
        throw ProviderError(503, "transport error: " + httplib::to_string(err));
    }
    if (res->status == 401 || res->status == 403) throw AuthError(res->status, res->body);
    if (res->status < 200 || res->status >= 300) throw ProviderError(res->status, res->body);

    const auto body = json::parse(res->body, nullptr, false);
    if (body.is_discarded()) throw ProviderError(res->status, "completion body is not JSON");
    auto result = from_wire_json(body);
    result.latency_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                              std::chrono::steady_clock::now() - started)
                                              .count());
    return result;
}

std::shared_ptr<ChatBackend> make_http_backend(const BackendConfig& config) {
    config.validate();
    const char* key = std::getenv(config.api_key_env_name.c_str());
    if (key == nullptr || *key == '\0') {
        throw ConfigError("environment variable " + config.api_key_env_name + " is not set");
    }
    auto transport = std::make_shared<HttpChatBackend>(config, key);
    return std::make_shared<RetryingBackend>(std::move(transport), config);
}

}  // namespace ehrnip
