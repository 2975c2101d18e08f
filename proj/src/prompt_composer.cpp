#include "ehrnip/prompt_composer.hpp"

#include "ehrnip/errors.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ehrnip {

namespace {

// Line breaks follow the published layout; trailing spaces are dropped.
constexpr std::string_view kSystemBody =
    "Reference Content Including\n"
    "Medical Notes:\n"
    "{note}";

constexpr std::string_view kPatientInitialQaBody =
    "Try to mock as the a patient and ask one question that the patient may not understand.\n"
    "Return the output as a dictionary object, adhering to the following structure:\n"
    "{\"question\": <mock question content that patient may ask>}\n"
    "Provide your response solely in the dictionary without any additional text.";

constexpr std::string_view kPatientFollowupQaBody =
    "Here is the answer for the question that mentioned above:\n"
    "{response}\n"
    "Try to mock as the a patient and ask a new question that the patient may not understand.\n"
    "Return the output as a dictionary object with the same format above.";

constexpr std::string_view kPatientInitialExplanationBody =
    "Try to mock as the a patient and select one sentence from the medical note that the "
    "patient may not understand.\n"
    "Return the output as a dictionary object, adhering to the following structure:\n"
    "{\"content\": <origin content that patient may not understand>}\n"
    "Provide your response solely in the dictionary without any additional text.";

constexpr std::string_view kPatientFollowupExplanationBody =
    "Here is the explanation for the content that mentioned above:\n"
    "{response}\n"
    "Try to mock as the a patient and select a new sentence from the medical note that the "
    "patient may not understand.\n"
    "Return the output as a dictionary object with the same format above.";

constexpr std::string_view kCarefulLine =
    "Your answers should be very careful to ensure that the questions asked by the patient do "
    "not conflict with the medical note. Mark answers you are not sure about.";

constexpr std::string_view kAnswerLine =
    "Answer the question based on the reference content and use concise language that people "
    "are easy to understand.";

constexpr std::string_view kExplainLine =
    "Explain the content for the patient based on the reference content and use concise "
    "language that people are easy to understand.";

constexpr std::string_view kJudgeSystemBody =
    "We have Q&A conversations and content Explanations based on the given medical note.\n"
    "A Q&A conversation includes a question asked by the patient and an answer answered by the "
    "assistant. An explanation includes a selected content represent part of medical note that "
    "hard to be understood by the patient and its explanation provided by the assistant.\n"
    "Give a feedback of the performance of assistant in each conversation or explanation follow "
    "the criteria:\n"
    "\n"
    "Relevance:\n"
    "1. An answer that fully focus on the question, without off topic result worth 5 points. "
    "Eg. A question about ERCP may not have direct relevance to vitamin B12. If an answer is "
    "explaining ERCP, it should not mention vitamin B12 if the patient didn't asked.\n"
    "2. Each irrelevant sentence results a deduction of 1 point.\n"
    "Factuality:\n"
    "1. Everything mentioned in the answer consistent with objective and correct medical "
    "knowledge worth 5 points.\n"
    "2. Each wrong medical knowledge in the answer results a deduction of at least 1 point "
    "(Score according to the impact of the error, A failure that won't influence the patient to "
    "understand his or her own illness result a deduction of 1 point, while errors that may "
    "mislead are penalized more than 1 point based on their severity).\n"
    "Sufficiency:\n"
    "1. An sufficient answer should cover all patient's confusion mentioned in the question. "
    "All points has been answered with logic worth 5 points.\n"
    "2. Each missed point result a deduction of 1 point.\n"
    "Concision:\n"
    "1. A concise and clear syntax and vocabulary, devoid of unnecessary conversation and "
    "filler words like \"I'm happy to help,\" worth 5 points.\n"
    "2. Each redundant sentence in the answer results a deduction of 1 point.\n"
    "Fluent:\n"
    "Is the language fluent and easy to understand? Nothing vague or hard to understand worth 5 "
    "points. Scoring according to the actual situation of your own reading process.\n"
    "\n"
    "Try not give full credits, full credits means perfect. If you found any incompleteness, "
    "make a deduction.\n"
    "\n"
    "Generate the result in a dictionary format as the following example:\n"
    "{\"Relevance\": 4, \"Factuality\": 5, \"Sufficiency\": 4, \"Concision\": 3, \"Fluent\": 5}\n"
    "\n"
    "Provide your response solely in the dictionary without any additional text.";

constexpr std::string_view kJudgeUser1Body =
    "Here is the medical note:\n"
    "{note}\n"
    "Here is the first conversation (explanation), try to be strict:\n"
    "{conversation}";

constexpr std::string_view kJudgeUser2Body =
    "Here is another conversation (explanation) based on the given medical note, try to be "
    "strict:\n"
    "{conversation}";

std::string assistant_body(std::string_view lead, std::string_view instruction) {
    std::string body(lead);
    body.append("\n{request}\n").append(instruction).append("\n").append(kCarefulLine);
    return body;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos;
         pos = hay.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

void validate_template(const PromptTemplate& t) {
    if (t.template_id.empty()) throw ConfigError("template with empty id");
    for (const auto& name : t.placeholders) {
        const auto n = count_occurrences(t.body, "{" + name + "}");
        if (n != 1) {
            throw ConfigError("template '" + t.template_id + "' must contain {" + name +
                              "} exactly once (found " + std::to_string(n) + ")");
        }
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read template file " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string_view initial_id(TaskKind task, bool patient) {
    if (patient) {
        return task == TaskKind::QA ? template_id::kPatientInitialQa
                                    : template_id::kPatientInitialExplanation;
    }
    return task == TaskKind::QA ? template_id::kAssistantInitialQa
                                : template_id::kAssistantInitialExplanation;
}

std::string_view followup_id(TaskKind task, bool patient) {
    if (patient) {
        return task == TaskKind::QA ? template_id::kPatientFollowupQa
                                    : template_id::kPatientFollowupExplanation;
    }
    return task == TaskKind::QA ? template_id::kAssistantFollowupQa
                                : template_id::kAssistantFollowupExplanation;
}

std::string fill(std::string_view body, std::string_view name, std::string_view value) {
    const std::pair<std::string_view, std::string_view> kv[] = {{name, value}};
    return substitute(body, kv);
}

}  // namespace

std::string_view to_string(MessageRole role) {
    return role == MessageRole::User ? "user" : "assistant";
}

std::string substitute(std::string_view body,
                       std::span<const std::pair<std::string_view, std::string_view>> values) {
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{') {
            const auto close = body.find('}', i + 1);
            if (close != std::string_view::npos) {
                const auto name = body.substr(i + 1, close - i - 1);
                const auto it = std::find_if(values.begin(), values.end(),
                                             [&](const auto& kv) { return kv.first == name; });
                if (it != values.end()) {
                    out.append(it->second);
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(body[i]);
        ++i;
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[digest[i] >> 4]);
        hex.push_back(kHex[digest[i] & 0xF]);
    }
    return hex;
}

TemplateRegistry TemplateRegistry::builtin(bool normalized) {
    using namespace template_id;
    std::vector<PromptTemplate> ts = {
        {std::string(kSystem), RoleSlot::System, std::string(kSystemBody), {"note"}},
        {std::string(kPatientInitialQa), RoleSlot::User, std::string(kPatientInitialQaBody), {}},
        {std::string(kPatientFollowupQa), RoleSlot::User, std::string(kPatientFollowupQaBody),
         {"response"}},
        {std::string(kPatientInitialExplanation), RoleSlot::User,
         std::string(kPatientInitialExplanationBody), {}},
        {std::string(kPatientFollowupExplanation), RoleSlot::User,
         std::string(kPatientFollowupExplanationBody), {"response"}},
        {std::string(kAssistantInitialQa), RoleSlot::User,
         assistant_body("Here is the question:", kAnswerLine), {"request"}},
        {std::string(kAssistantFollowupQa), RoleSlot::User,
         assistant_body("Here is another question:", kAnswerLine), {"request"}},
        {std::string(kAssistantInitialExplanation), RoleSlot::User,
         assistant_body("Here is the origin content from the medical note:", kExplainLine),
         {"request"}},
        {std::string(kAssistantFollowupExplanation), RoleSlot::User,
         assistant_body("Here is annother origin content from the medical note:", kExplainLine),
         {"request"}},
        {std::string(kJudgeSystem), RoleSlot::System, std::string(kJudgeSystemBody), {}},
        {std::string(kJudgeUser1), RoleSlot::User, std::string(kJudgeUser1Body),
         {"note", "conversation"}},
        {std::string(kJudgeUser2), RoleSlot::User, std::string(kJudgeUser2Body),
         {"conversation"}},
    };
    if (normalized) {
        for (auto& t : ts) {
            replace_all(t.body, "mock as the a patient", "mock as a patient");
            replace_all(t.body, "annother", "another");
        }
    }
    return from_templates(std::move(ts));
}

TemplateRegistry TemplateRegistry::from_templates(std::vector<PromptTemplate> templates) {
    TemplateRegistry reg;
    for (auto& t : templates) {
        validate_template(t);
        const std::string id = t.template_id;
        if (!reg.templates_.emplace(id, std::move(t)).second) {
            throw ConfigError("duplicate template id '" + id + "'");
        }
    }
    for (auto id : template_id::kAll) {
        if (!reg.templates_.contains(id)) {
            throw ConfigError("template registry is missing '" + std::string(id) + "'");
        }
    }
    if (reg.templates_.size() != std::size(template_id::kAll)) {
        throw ConfigError("template registry has unexpected extra templates");
    }
    return reg;
}

TemplateRegistry TemplateRegistry::load_directory(const std::filesystem::path& dir) {
    // Roles and placeholders are fixed by id; only bodies come from disk.
    const auto shape = builtin();
    std::map<std::string, std::string> expected_digest;
    {
        std::istringstream manifest(read_file(dir / "MANIFEST"));
        std::string line;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            const auto sep = line.find("  ");
            if (sep == std::string::npos) throw ConfigError("malformed MANIFEST line: " + line);
            expected_digest[line.substr(sep + 2)] = line.substr(0, sep);
        }
    }

    std::vector<PromptTemplate> loaded;
    for (auto id : template_id::kAll) {
        const std::string file = std::string(id) + ".txt";
        const auto it = expected_digest.find(file);
        if (it == expected_digest.end()) throw ConfigError("MANIFEST has no entry for " + file);
        auto body = read_file(dir / file);
        if (sha256_hex(body) != it->second) {
            throw ConfigError("checksum mismatch for template " + file);
        }
        auto t = shape.get(id);
        t.body = std::move(body);
        loaded.push_back(std::move(t));
    }
    return from_templates(std::move(loaded));
}

const PromptTemplate& TemplateRegistry::get(std::string_view id) const {
    const auto it = templates_.find(id);
    if (it == templates_.end()) throw ConfigError("unknown template '" + std::string(id) + "'");
    return it->second;
}

std::string TemplateRegistry::manifest_text() const {
    std::string text;
    for (auto id : template_id::kAll) {
        text.append(sha256_hex(get(id).body)).append("  ").append(id).append(".txt\n");
    }
    return text;
}

std::string TemplateRegistry::checksum() const { return sha256_hex(manifest_text()); }

void TemplateRegistry::write_directory(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [id, t] : templates_) {
        std::ofstream out(dir / (id + ".txt"), std::ios::binary);
        out << t.body;
        if (!out) throw IoError("cannot write template " + id);
    }
    std::ofstream out(dir / "MANIFEST", std::ios::binary);
    out << manifest_text();
    if (!out) throw IoError("cannot write MANIFEST");
}

std::string ComposedPrompt::flatten() const {
    std::string out = system_text;
    for (const auto& m : messages) out += m.text;
    return out;
}

bool ComposedPrompt::alternates() const {
    for (std::size_t i = 0; i < messages.size(); ++i) {
        const auto want = i % 2 == 0 ? MessageRole::User : MessageRole::Assistant;
        if (messages[i].role != want) return false;
    }
    return true;
}

ChainTemplates assistant_chain(const TemplateRegistry& registry, TaskKind task) {
    ChainTemplates chain;
    chain.system = registry.get(template_id::kSystem).body;
    chain.initial = registry.get(initial_id(task, false)).body;
    chain.followup = registry.get(followup_id(task, false)).body;
    return chain;
}

std::string render_system_prompt(const EhrNote& note, const TemplateRegistry& registry) {
    return fill(registry.get(template_id::kSystem).body, "note", note.text);
}

ComposedPrompt compose_initial(const EhrNote& note, const PatientRequest& request,
                               const ChainTemplates& chain) {
    if (request.round_index != 1) {
        throw RoundIndexError("compose_initial needs round_index 1, got " +
                              std::to_string(request.round_index));
    }
    ComposedPrompt p;
    p.system_text = fill(chain.system, "note", note.text);
    p.messages.push_back({MessageRole::User, fill(chain.initial, "request", request.payload)});
    return p;
}

ComposedPrompt compose_initial(const EhrNote& note, const PatientRequest& request,
                               const TemplateRegistry& registry) {
    return compose_initial(note, request, assistant_chain(registry, request.kind));
}

ComposedPrompt compose_followup(const ComposedPrompt& previous,
                                const AssistantResponse& previous_response,
                                const PatientRequest& request, const ChainTemplates& chain) {
    if (request.round_index < 2) {
        throw RoundIndexError("compose_followup needs round_index >= 2, got " +
                              std::to_string(request.round_index));
    }
    if (previous_response.round_index != request.round_index - 1) {
        throw RoundIndexError("previous response is round " +
                              std::to_string(previous_response.round_index) + ", expected " +
                              std::to_string(request.round_index - 1));
    }
    const auto expected_messages = static_cast<std::size_t>(2 * request.round_index - 3);
    if (previous.messages.size() != expected_messages) {
        throw RoundIndexError("previous prompt holds " + std::to_string(previous.messages.size()) +
                              " messages, expected " + std::to_string(expected_messages));
    }
    ComposedPrompt p = previous;
    p.messages.push_back(
        {MessageRole::Assistant, fill(chain.response_frame, "response", previous_response.text)});
    p.messages.push_back({MessageRole::User, fill(chain.followup, "request", request.payload)});
    return p;
}

ComposedPrompt compose_followup(const ComposedPrompt& previous,
                                const AssistantResponse& previous_response,
                                const PatientRequest& request, const TemplateRegistry& registry) {
    return compose_followup(previous, previous_response, request,
                            assistant_chain(registry, request.kind));
}

ComposedPrompt compose_assistant_prompt(const EhrNote& note,
                                        std::span<const DialogueRound> prior_rounds,
                                        const PatientRequest& request,
                                        const TemplateRegistry& registry) {
    const auto chain = assistant_chain(registry, request.kind);
    if (static_cast<std::size_t>(request.round_index) != prior_rounds.size() + 1) {
        throw RoundIndexError("request round " + std::to_string(request.round_index) +
                              " does not follow " + std::to_string(prior_rounds.size()) +
                              " prior rounds");
    }
    if (prior_rounds.empty()) return compose_initial(note, request, chain);
    ComposedPrompt p = compose_initial(note, prior_rounds.front().request, chain);
    for (std::size_t i = 1; i < prior_rounds.size(); ++i) {
        p = compose_followup(p, prior_rounds[i - 1].response, prior_rounds[i].request, chain);
    }
    return compose_followup(p, prior_rounds.back().response, request, chain);
}

std::string encode_patient_output(TaskKind task, std::string_view payload) {
    const nlohmann::json value = std::string(payload);
    std::string out = task == TaskKind::QA ? "{\"question\": " : "{\"content\": ";
    out += value.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out += "}";
    return out;
}

ComposedPrompt compose_patient_prompt(const EhrNote& note, TaskKind task,
                                      std::span<const DialogueRound> prior_rounds,
                                      const TemplateRegistry& registry) {
    for (std::size_t i = 0; i < prior_rounds.size(); ++i) {
        const int want = static_cast<int>(i) + 1;
        if (prior_rounds[i].request.round_index != want ||
            prior_rounds[i].response.round_index != want) {
            throw RoundIndexError("prior rounds are not consecutive from 1 (position " +
                                  std::to_string(want) + ")");
        }
    }
    ComposedPrompt p;
    p.system_text = render_system_prompt(note, registry);
    p.messages.push_back({MessageRole::User, registry.get(initial_id(task, true)).body});
    const auto& followup = registry.get(followup_id(task, true)).body;
    for (const auto& round : prior_rounds) {
        p.messages.push_back(
            {MessageRole::Assistant, encode_patient_output(task, round.request.payload)});
        p.messages.push_back({MessageRole::User, fill(followup, "response", round.response.text)});
    }
    return p;
}

}  // namespace ehrnip
