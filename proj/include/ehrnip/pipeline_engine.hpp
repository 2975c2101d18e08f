#pragma once

#include "ehrnip/core_model.hpp"
#include "ehrnip/model_backend.hpp"
#include "ehrnip/prompt_composer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ehrnip {

struct PipelineConfig {
    int rounds_per_instance = kDefaultRounds;
    TaskKind task = TaskKind::QA;
    std::string generator_model = "gpt-3.5-turbo";
    std::string engine_label = "Turbo NIP";
    int max_parallel_instances = 1;
    int checkpoint_every = 1;
    double temperature = kGenerationTemperature;
    int max_output_tokens = 512;

    /// Throws ConfigError, e.g. "rounds must be >= 1".
    void validate() const;
    /// Equality over the settings that shape generated content. Parallelism
    /// and checkpoint cadence may change between a run and its resume.
    bool same_generation_settings(const PipelineConfig& other) const;

    bool operator==(const PipelineConfig&) const = default;
};

nlohmann::ordered_json pipeline_config_to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Everything both agents saw and said during one run, before storage.
struct InstanceTranscript {
    EhrNote note;
    TaskKind task = TaskKind::QA;
    std::string engine_label;
    Timestamp created_at{};
    std::vector<ComposedPrompt> patient_prompts;
    std::vector<std::string> patient_raw_outputs;
    std::vector<ComposedPrompt> assistant_prompts;
    std::vector<DialogueRound> rounds;
    std::optional<std::string> error;
};

/// Drives both agents through the configured rounds for one note. Per-round
/// model failures end the run early and are reported in `error`.
InstanceTranscript run_instance_transcript(const EhrNote& note, const PipelineConfig& config,
                                           ChatBackend& backend, const TemplateRegistry& registry,
                                           Timestamp created_at);

/// Reduces a transcript to its stored form: the note id plus one
/// (request, response) pair per round. Prompt histories are dropped.
InteractionInstance strip_redundant_context(const InstanceTranscript& transcript);

InteractionInstance run_instance(const EhrNote& note, const PipelineConfig& config,
                                 ChatBackend& backend, const TemplateRegistry& registry,
                                 Timestamp created_at = utc_now());

/// Rebuilds every assistant-side prompt of a stored instance.
std::vector<ComposedPrompt> recompose_assistant_prompts(const EhrNote& note,
                                                        const InteractionInstance& instance,
                                                        const TemplateRegistry& registry);

/// Whitespace-collapsed, quote-stripped containment test used for the soft
/// Explanation check.
bool selection_in_note(std::string_view selection, std::string_view note_text);

struct BatchJobState {
    std::string job_id;
    std::set<std::string> completed_ids;
    std::map<std::string, std::string> failed;
    PipelineConfig config_snapshot;
};

/// Journal of a batch job: `<job_id>.job.json` holds the config snapshot,
/// `<job_id>.journal.jsonl` holds {note_id, status, error?} lines.
class JobJournal {
public:
    /// Starts a new job. Throws ConfigError when the job already exists.
    static JobJournal create(const std::filesystem::path& dir, const std::string& job_id,
                             const PipelineConfig& config, BatchJobState& state);
    /// Reloads state from disk. Throws ConfigError when the job is unknown.
    static JobJournal resume(const std::filesystem::path& dir, const std::string& job_id,
                             BatchJobState& state);

    static bool exists(const std::filesystem::path& dir, const std::string& job_id);

    void record_completed(const std::string& note_id);
    void record_failed(const std::string& note_id, const std::string& error);

    const std::filesystem::path& journal_path() const noexcept { return journal_path_; }

private:
    explicit JobJournal(std::filesystem::path journal_path);
    std::filesystem::path journal_path_;
};

struct BatchOptions {
    const TemplateRegistry* registry = nullptr;
    /// Instances JSONL to append to; empty for in-memory only.
    std::filesystem::path output;
    JobJournal* journal = nullptr;
    /// Stop dispatching after this many new instances (simulated interruption).
    std::optional<std::size_t> stop_after;
    std::function<Timestamp()> clock = utc_now;
};

struct BatchSummary {
    std::string job_id;
    std::size_t generated = 0;
    std::size_t failed = 0;
    std::size_t skipped = 0;

    nlohmann::ordered_json to_json() const;
};

/// Generates instances for every note not yet completed in `job`, at most
/// max_parallel_instances at a time. Results are committed in input order
/// every checkpoint_every completions. Throws JobConfigMismatch when the
/// config differs from the job's snapshot.
std::vector<InteractionInstance> run_batch(std::span<const EhrNote> notes,
                                           const PipelineConfig& config, ChatBackend& backend,
                                           BatchJobState& job, const BatchOptions& options = {},
                                           BatchSummary* summary = nullptr);

}  // namespace ehrnip
