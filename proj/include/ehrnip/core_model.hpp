#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ehrnip {

using Timestamp = std::chrono::sys_seconds;

/// RFC 3339 UTC with second precision, e.g. "2024-02-01T12:00:00Z".
std::string format_timestamp(Timestamp t);
/// Inverse of format_timestamp. Throws ehrnip::Error on malformed input.
Timestamp parse_timestamp(std::string_view text);
Timestamp utc_now();

enum class Corpus { MimicDischarge, Made, Fixture, Interactive };

std::string_view to_string(Corpus c);
std::optional<Corpus> corpus_from_string(std::string_view s);

enum class TaskKind { QA, Explanation };

std::string_view to_string(TaskKind t);
std::optional<TaskKind> task_from_string(std::string_view s);

/// One patient note. The text is opaque to the pipeline.
struct EhrNote {
    std::string id;
    Corpus corpus = Corpus::Fixture;
    std::string text;

    bool operator==(const EhrNote&) const = default;
};

/// Throws ConfigError when the note has an empty id or blank text.
void check_note(const EhrNote& note);

struct PatientRequest {
    TaskKind kind = TaskKind::QA;
    /// A question (QA) or a verbatim note excerpt (Explanation).
    std::string payload;
    int round_index = 1;

    bool operator==(const PatientRequest&) const = default;
};

struct AssistantResponse {
    std::string text;
    int round_index = 1;

    bool operator==(const AssistantResponse&) const = default;
};

namespace warning {
inline constexpr std::string_view kDuplicateRequest = "duplicate_request";
inline constexpr std::string_view kSelectionNotInNote = "selection_not_in_note";
}  // namespace warning

struct DialogueRound {
    PatientRequest request;
    AssistantResponse response;
    /// Soft-invariant flags; see namespace `warning`.
    std::vector<std::string> warnings;

    int round_index() const noexcept { return request.round_index; }

    bool operator==(const DialogueRound&) const = default;
};

inline constexpr int kDefaultRounds = 3;

/// One stored pipeline run: a note reference plus its ordered rounds.
struct InteractionInstance {
    std::string instance_id;
    std::string note_id;
    Corpus corpus = Corpus::Fixture;
    TaskKind task = TaskKind::QA;
    std::string engine_label;
    std::vector<DialogueRound> rounds;
    Timestamp created_at{};
    std::optional<std::string> error;

    bool operator==(const InteractionInstance&) const = default;
};

/// "{corpus}:{note_id}:{task}:{engine_label}"
std::string make_instance_id(Corpus corpus, std::string_view note_id, TaskKind task,
                             std::string_view engine_label);

/// Returns the broken invariants as human-readable strings; empty when the
/// instance is well formed. When `expected_rounds` is empty the round-count
/// rule is skipped (used when loading files of unknown provenance).
std::vector<std::string> validate_instance(const InteractionInstance& instance,
                                           std::optional<int> expected_rounds);

struct CriteriaScores {
    int relevance = 0;
    int factuality = 0;
    int sufficiency = 0;
    int concision = 0;
    int fluency = 0;

    bool operator==(const CriteriaScores&) const = default;
};

/// Keys the judge uses in its dictionary output, in rubric order.
inline constexpr std::string_view kCriteriaKeys[5] = {"Relevance", "Factuality", "Sufficiency",
                                                      "Concision", "Fluent"};

int clamp_score(long long raw) noexcept;
CriteriaScores make_scores(long long relevance, long long factuality, long long sufficiency,
                           long long concision, long long fluency) noexcept;

struct QualityLevel {
    int level = 0;

    bool operator==(const QualityLevel&) const = default;
};

}  // namespace ehrnip
