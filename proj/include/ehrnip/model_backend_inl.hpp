#pragma once

#include "ehrnip/errors.hpp"

namespace ehrnip {

template <typename Parse>
auto complete_structured(ChatBackend& backend, ChatRequest request, std::string_view reminder,
                         Parse&& parse, std::string* raw) -> decltype(parse("")) {
    auto result = backend.complete(request);
    if (raw) *raw = result.text;
    try {
        return parse(result.text);
    } catch (const PatientParseError&) {
    } catch (const JudgeParseError&) {
    }
    if (!request.prompt.messages.empty()) {
        request.prompt.messages.back().text.append("\n").append(reminder);
    }
    result = backend.complete(request);
    if (raw) *raw = result.text;
    return parse(result.text);
}

}  // namespace ehrnip
