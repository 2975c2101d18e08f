#pragma once

#include "ehrnip/core_model.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ehrnip {

enum class RoleSlot { System, User };
enum class MessageRole { User, Assistant };

std::string_view to_string(MessageRole role);

struct PromptTemplate {
    std::string template_id;
    RoleSlot role_slot = RoleSlot::User;
    std::string body;
    /// Names (without braces) that must each occur exactly once in body.
    std::vector<std::string> placeholders;

    bool operator==(const PromptTemplate&) const = default;
};

/// Single-pass "{name}" substitution. Braced text whose name is not in
/// `values` is copied through untouched, and substituted values are never
/// rescanned.
std::string substitute(std::string_view body,
                       std::span<const std::pair<std::string_view, std::string_view>> values);

namespace template_id {
inline constexpr std::string_view kSystem = "system";
inline constexpr std::string_view kPatientInitialQa = "patient_initial_qa";
inline constexpr std::string_view kPatientFollowupQa = "patient_followup_qa";
inline constexpr std::string_view kPatientInitialExplanation = "patient_initial_explanation";
inline constexpr std::string_view kPatientFollowupExplanation = "patient_followup_explanation";
inline constexpr std::string_view kAssistantInitialQa = "assistant_initial_qa";
inline constexpr std::string_view kAssistantFollowupQa = "assistant_followup_qa";
inline constexpr std::string_view kAssistantInitialExplanation = "assistant_initial_explanation";
inline constexpr std::string_view kAssistantFollowupExplanation = "assistant_followup_explanation";
inline constexpr std::string_view kJudgeSystem = "judge_system";
inline constexpr std::string_view kJudgeUser1 = "judge_user_1";
inline constexpr std::string_view kJudgeUser2 = "judge_user_2";

inline constexpr std::string_view kAll[12] = {
    kSystem,
    kPatientInitialQa,
    kPatientFollowupQa,
    kPatientInitialExplanation,
    kPatientFollowupExplanation,
    kAssistantInitialQa,
    kAssistantFollowupQa,
    kAssistantInitialExplanation,
    kAssistantFollowupExplanation,
    kJudgeSystem,
    kJudgeUser1,
    kJudgeUser2,
};
}  // namespace template_id

/// The fixed prompt texts. Always holds exactly the twelve ids in
/// template_id::kAll, each with its placeholders present exactly once.
class TemplateRegistry {
public:
    /// Compiled-in templates. `normalized` fixes the two known typos
    /// ("the a patient", "annother"); the default keeps the texts byte-exact.
    static TemplateRegistry builtin(bool normalized = false);

    /// Reads `<id>.txt` for every id plus a `MANIFEST` in sha256sum format
    /// and verifies every digest. Throws ConfigError on any mismatch.
    static TemplateRegistry load_directory(const std::filesystem::path& dir);

    /// Validates and wraps an arbitrary template set (used for stub templates).
    static TemplateRegistry from_templates(std::vector<PromptTemplate> templates);

    const PromptTemplate& get(std::string_view id) const;
    const std::map<std::string, PromptTemplate, std::less<>>& templates() const noexcept {
        return templates_;
    }

    /// sha256sum-style manifest text for the current bodies.
    std::string manifest_text() const;
    /// SHA-256 (hex) of manifest_text().
    std::string checksum() const;

    /// Writes `<id>.txt` files and `MANIFEST` into dir.
    void write_directory(const std::filesystem::path& dir) const;

private:
    std::map<std::string, PromptTemplate, std::less<>> templates_;
};

std::string sha256_hex(std::string_view data);

struct ChatMessage {
    MessageRole role = MessageRole::User;
    std::string text;

    bool operator==(const ChatMessage&) const = default;
};

struct ComposedPrompt {
    std::string system_text;
    std::vector<ChatMessage> messages;

    /// System text followed by every message text, no separators.
    std::string flatten() const;
    /// True when messages alternate User/Assistant starting with User.
    bool alternates() const;

    bool operator==(const ComposedPrompt&) const = default;
};

/// One agent-and-task instantiation of the fixed tokens. `system` carries
/// {note}, `initial` and `followup` carry {request}, and `response_frame`
/// wraps a prior model response via {response}.
struct ChainTemplates {
    std::string system;
    std::string initial;
    std::string response_frame = "{response}";
    std::string followup;
};

ChainTemplates assistant_chain(const TemplateRegistry& registry, TaskKind task);

std::string render_system_prompt(const EhrNote& note, const TemplateRegistry& registry);

ComposedPrompt compose_initial(const EhrNote& note, const PatientRequest& request,
                               const ChainTemplates& chain);
ComposedPrompt compose_initial(const EhrNote& note, const PatientRequest& request,
                               const TemplateRegistry& registry);

ComposedPrompt compose_followup(const ComposedPrompt& previous,
                                const AssistantResponse& previous_response,
                                const PatientRequest& request, const ChainTemplates& chain);
ComposedPrompt compose_followup(const ComposedPrompt& previous,
                                const AssistantResponse& previous_response,
                                const PatientRequest& request, const TemplateRegistry& registry);

/// The assistant-side prompt for round prior_rounds.size()+1, rebuilt from
/// stored rounds. Shared by the batch pipeline and the interactive service.
ComposedPrompt compose_assistant_prompt(const EhrNote& note,
                                        std::span<const DialogueRound> prior_rounds,
                                        const PatientRequest& request,
                                        const TemplateRegistry& registry);

/// Canonical dictionary form of a patient output, e.g. {"question": "..."}.
std::string encode_patient_output(TaskKind task, std::string_view payload);

/// The mock-patient prompt for round prior_rounds.size()+1.
ComposedPrompt compose_patient_prompt(const EhrNote& note, TaskKind task,
                                      std::span<const DialogueRound> prior_rounds,
                                      const TemplateRegistry& registry);

}  // namespace ehrnip
