#pragma once

#include "ehrnip/model_backend.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>

namespace ehrnip {

/// Request body for POST {endpoint}/chat/completions.
nlohmann::json to_wire_json(const ChatRequest& request);

/// Reads choices[0].message.content and usage.{prompt,completion}_tokens.
/// Throws ProviderError when the body does not have that shape.
ChatResult from_wire_json(const nlohmann::json& body);

/// One attempt per call against a chat-completions endpoint. Wrap it in a
/// RetryingBackend for retries and rate limiting.
class HttpChatBackend final : public ChatBackend {
public:
    HttpChatBackend(BackendConfig config, std::string api_key);
    ~HttpChatBackend() override;

    ChatResult complete(const ChatRequest& request) override;

private:
    BackendConfig config_;
    std::string api_key_;
    std::string base_url_;
    std::string path_prefix_;
};

/// HttpChatBackend behind a RetryingBackend, keyed from the environment
/// variable named in the config. Throws ConfigError when it is unset.
std::shared_ptr<ChatBackend> make_http_backend(const BackendConfig& config);

}  // namespace ehrnip
