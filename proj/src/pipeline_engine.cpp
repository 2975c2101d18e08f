#include "ehrnip/pipeline_engine.hpp"

#include "ehrnip/dataset_store.hpp"
#include "ehrnip/errors.hpp"

#include <atomic>
#include <exception>
#include <cctype>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_set>

namespace ehrnip {

using nlohmann::json;
using nlohmann::ordered_json;

void PipelineConfig::validate() const {
    if (rounds_per_instance < 1) throw ConfigError("rounds must be >= 1");
    if (max_parallel_instances < 1) throw ConfigError("parallel must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (generator_model.empty()) throw ConfigError("generator model must not be empty");
    if (engine_label.empty()) throw ConfigError("engine label must not be empty");
    if (temperature < 0) throw ConfigError("temperature must be >= 0");
    if (max_output_tokens <= 0) throw ConfigError("max_output_tokens must be > 0");
}

bool PipelineConfig::same_generation_settings(const PipelineConfig& other) const {
    return rounds_per_instance == other.rounds_per_instance && task == other.task &&
           generator_model == other.generator_model && engine_label == other.engine_label &&
           temperature == other.temperature && max_output_tokens == other.max_output_tokens;
}

ordered_json pipeline_config_to_json(const PipelineConfig& c) {
    ordered_json j;
    j["rounds_per_instance"] = c.rounds_per_instance;
    j["task"] = to_string(c.task);
    j["generator_model"] = c.generator_model;
    j["engine_label"] = c.engine_label;
    j["max_parallel_instances"] = c.max_parallel_instances;
    j["checkpoint_every"] = c.checkpoint_every;
    j["temperature"] = c.temperature;
    j["max_output_tokens"] = c.max_output_tokens;
    return j;
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    c.rounds_per_instance = j.at("rounds_per_instance").get<int>();
    const auto task = task_from_string(j.at("task").get<std::string>());
    if (!task) throw ConfigError("job snapshot has unknown task");
    c.task = *task;
    c.generator_model = j.at("generator_model").get<std::string>();
    c.engine_label = j.at("engine_label").get<std::string>();
    c.max_parallel_instances = j.at("max_parallel_instances").get<int>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.temperature = j.at("temperature").get<double>();
    c.max_output_tokens = j.at("max_output_tokens").get<int>();
    return c;
}

namespace {

std::string normalize_for_match(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (c == '"' || c == '\'' || c == '`') continue;
        // U+2018, U+2019, U+201C, U+201D
        if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80) {
            const auto c3 = static_cast<unsigned char>(s[i + 2]);
            if (c3 == 0x98 || c3 == 0x99 || c3 == 0x9C || c3 == 0x9D) {
                i += 2;
                continue;
            }
        }
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string describe(const std::exception& e) { return e.what(); }

}  // namespace

bool selection_in_note(std::string_view selection, std::string_view note_text) {
    const auto needle = normalize_for_match(selection);
    return !needle.empty() && normalize_for_match(note_text).find(needle) != std::string::npos;
}

InstanceTranscript run_instance_transcript(const EhrNote& note, const PipelineConfig& config,
                                           ChatBackend& backend, const TemplateRegistry& registry,
                                           Timestamp created_at) {
    config.validate();
    check_note(note);

    InstanceTranscript t;
    t.note = note;
    t.task = config.task;
    t.engine_label = config.engine_label;
    t.created_at = created_at;

    const auto make_request = [&](ComposedPrompt prompt) {
        return ChatRequest{std::move(prompt), config.generator_model, config.temperature,
                           config.max_output_tokens};
    };
    const auto fail = [&](int round, std::string_view stage, const std::exception& e) {
        t.error = "round " + std::to_string(round) + " " + std::string(stage) + ": " + describe(e);
    };

    std::unordered_set<std::string> seen_requests;
    for (int k = 1; k <= config.rounds_per_instance; ++k) {
        auto patient_prompt = compose_patient_prompt(note, config.task, t.rounds, registry);
        std::string raw;
        std::string payload;
        try {
            payload = complete_structured(
                backend, make_request(patient_prompt), format_reminder(config.task),
                [&](std::string_view text) { return parse_patient_output(text, config.task); },
                &raw);
        } catch (const Error& e) {
            fail(k, "patient request", e);
            break;
        }
        t.patient_prompts.push_back(std::move(patient_prompt));
        t.patient_raw_outputs.push_back(raw);

        DialogueRound round;
        round.request = {config.task, payload, k};
        if (!seen_requests.insert(normalize_for_match(payload)).second) {
            round.warnings.emplace_back(warning::kDuplicateRequest);
        }
        if (config.task == TaskKind::Explanation && !selection_in_note(payload, note.text)) {
            round.warnings.emplace_back(warning::kSelectionNotInNote);
        }

        auto assistant_prompt =
            k == 1 ? compose_initial(note, round.request, registry)
                   : compose_followup(t.assistant_prompts.back(), t.rounds.back().response,
                                      round.request, registry);
        ChatResult answer;
        try {
            answer = backend.complete(make_request(assistant_prompt));
        } catch (const Error& e) {
            fail(k, "assistant response", e);
            break;
        }
        if (normalize_for_match(answer.text).empty()) {
            t.error = "round " + std::to_string(k) + " assistant response: empty completion";
            break;
        }
        t.assistant_prompts.push_back(std::move(assistant_prompt));
        round.response = {answer.text, k};
        t.rounds.push_back(std::move(round));
    }
    return t;
}

InteractionInstance strip_redundant_context(const InstanceTranscript& transcript) {
    InteractionInstance inst;
    inst.instance_id = make_instance_id(transcript.note.corpus, transcript.note.id,
                                        transcript.task, transcript.engine_label);
    inst.note_id = transcript.note.id;
    inst.corpus = transcript.note.corpus;
    inst.task = transcript.task;
    inst.engine_label = transcript.engine_label;
    inst.rounds = transcript.rounds;
    inst.created_at = transcript.created_at;
    inst.error = transcript.error;
    return inst;
}

InteractionInstance run_instance(const EhrNote& note, const PipelineConfig& config,
                                 ChatBackend& backend, const TemplateRegistry& registry,
                                 Timestamp created_at) {
    return strip_redundant_context(
        run_instance_transcript(note, config, backend, registry, created_at));
}

std::vector<ComposedPrompt> recompose_assistant_prompts(const EhrNote& note,
                                                        const InteractionInstance& instance,
                                                        const TemplateRegistry& registry) {
    std::vector<ComposedPrompt> prompts;
    for (std::size_t k = 0; k < instance.rounds.size(); ++k) {
        const auto& round = instance.rounds[k];
        prompts.push_back(k == 0 ? compose_initial(note, round.request, registry)
                                 : compose_followup(prompts.back(), instance.rounds[k - 1].response,
                                                    round.request, registry));
    }
    return prompts;
}

// ---------------------------------------------------------------------------
// Journal

namespace {

std::filesystem::path job_file(const std::filesystem::path& dir, const std::string& job_id) {
    return dir / (job_id + ".job.json");
}

std::filesystem::path journal_file(const std::filesystem::path& dir, const std::string& job_id) {
    return dir / (job_id + ".journal.jsonl");
}

void append_journal_line(const std::filesystem::path& path, const ordered_json& line) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    out.flush();
    if (!out) throw IoError("cannot append to journal " + path.string());
}

}  // namespace

JobJournal::JobJournal(std::filesystem::path journal_path)
    : journal_path_(std::move(journal_path)) {}

bool JobJournal::exists(const std::filesystem::path& dir, const std::string& job_id) {
    return std::filesystem::exists(job_file(dir, job_id));
}

JobJournal JobJournal::create(const std::filesystem::path& dir, const std::string& job_id,
                              const PipelineConfig& config, BatchJobState& state) {
    if (job_id.empty()) throw ConfigError("job id must not be empty");
    if (exists(dir, job_id)) {
        throw ConfigError("job '" + job_id + "' already exists; pass --resume " + job_id);
    }
    ordered_json header;
    header["job_id"] = job_id;
    header["config"] = pipeline_config_to_json(config);
    write_json_file(job_file(dir, job_id), header);
    std::ofstream touch(journal_file(dir, job_id), std::ios::binary | std::ios::trunc);
    if (!touch) throw IoError("cannot create journal in " + dir.string());

    state = BatchJobState{job_id, {}, {}, config};
    return JobJournal(journal_file(dir, job_id));
}

JobJournal JobJournal::resume(const std::filesystem::path& dir, const std::string& job_id,
                              BatchJobState& state) {
    if (!exists(dir, job_id)) throw ConfigError("unknown job '" + job_id + "'");
    const auto header = read_json_file(job_file(dir, job_id));
    state = BatchJobState{job_id, {}, {}, pipeline_config_from_json(header.at("config"))};

    const auto path = journal_file(dir, job_id);
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto j = json::parse(line, nullptr, false);
        // A torn final line from a crash is ignored; the note is simply redone.
        if (j.is_discarded() || !j.is_object() || !j.contains("note_id")) continue;
        const auto note_id = j["note_id"].get<std::string>();
        if (j.value("status", "") == "completed") {
            state.failed.erase(note_id);
            state.completed_ids.insert(note_id);
        } else {
            state.completed_ids.erase(note_id);
            state.failed[note_id] = j.value("error", "");
        }
    }
    return JobJournal(path);
}

void JobJournal::record_completed(const std::string& note_id) {
    ordered_json line;
    line["note_id"] = note_id;
    line["status"] = "completed";
    append_journal_line(journal_path_, line);
}

void JobJournal::record_failed(const std::string& note_id, const std::string& error) {
    ordered_json line;
    line["note_id"] = note_id;
    line["status"] = "failed";
    line["error"] = error;
    append_journal_line(journal_path_, line);
}

// ---------------------------------------------------------------------------
// Batch

ordered_json BatchSummary::to_json() const {
    ordered_json j;
    j["job_id"] = job_id;
    j["generated"] = generated;
    j["failed"] = failed;
    j["skipped"] = skipped;
    return j;
}

std::vector<InteractionInstance> run_batch(std::span<const EhrNote> notes,
                                           const PipelineConfig& config, ChatBackend& backend,
                                           BatchJobState& job, const BatchOptions& options,
                                           BatchSummary* summary) {
    config.validate();
    if (!job.config_snapshot.same_generation_settings(config)) {
        throw JobConfigMismatch("job '" + job.job_id +
                                "' was started with different generation settings");
    }
    {
        std::unordered_set<std::string> ids;
        for (const auto& n : notes) {
            check_note(n);
            if (!ids.insert(n.id).second) throw ConfigError("duplicate note id '" + n.id + "'");
        }
    }
    std::optional<TemplateRegistry> fallback;
    if (!options.registry) fallback = TemplateRegistry::builtin();
    const TemplateRegistry& registry = options.registry ? *options.registry : *fallback;

    std::vector<const EhrNote*> pending;
    std::size_t skipped = 0;
    for (const auto& n : notes) {
        if (job.completed_ids.contains(n.id)) ++skipped;
        else pending.push_back(&n);
    }
    std::size_t to_run = pending.size();
    if (options.stop_after) to_run = std::min(to_run, *options.stop_after);

    std::vector<std::optional<InteractionInstance>> slots(to_run);
    std::vector<InteractionInstance> results;
    std::vector<InteractionInstance> unsaved;
    std::size_t committed = 0;
    std::mutex commit_mu;
    std::exception_ptr write_error;
    std::atomic<std::size_t> next{0};

    const auto checkpoint = [&] {
        if (unsaved.empty()) return;
        if (!options.output.empty()) append_instances(options.output, unsaved);
        for (const auto& inst : unsaved) {
            if (inst.error) {
                job.completed_ids.erase(inst.note_id);
                job.failed[inst.note_id] = *inst.error;
                if (options.journal) options.journal->record_failed(inst.note_id, *inst.error);
            } else {
                job.failed.erase(inst.note_id);
                job.completed_ids.insert(inst.note_id);
                if (options.journal) options.journal->record_completed(inst.note_id);
            }
        }
        unsaved.clear();
    };

    // Completions may arrive out of order; commit only the contiguous prefix
    // so the output file order matches the input order.
    const auto commit = [&](std::size_t index, InteractionInstance inst) {
        std::lock_guard lock(commit_mu);
        slots[index] = std::move(inst);
        while (committed < slots.size() && slots[committed]) {
            results.push_back(*slots[committed]);
            unsaved.push_back(std::move(*slots[committed]));
            slots[committed].reset();
            ++committed;
            if (static_cast<int>(unsaved.size()) >= config.checkpoint_every && !write_error) {
                try {
                    checkpoint();
                } catch (...) {
                    write_error = std::current_exception();
                    next.store(to_run);
                }
            }
        }
    };

    const auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= to_run) return;
            const EhrNote& note = *pending[i];
            InteractionInstance inst;
            try {
                inst = run_instance(note, config, backend, registry, options.clock());
            } catch (const std::exception& e) {
                inst.instance_id =
                    make_instance_id(note.corpus, note.id, config.task, config.engine_label);
                inst.note_id = note.id;
                inst.corpus = note.corpus;
                inst.task = config.task;
                inst.engine_label = config.engine_label;
                inst.created_at = options.clock();
                inst.error = e.what();
            }
            commit(i, std::move(inst));
        }
    };

    const auto threads = std::min<std::size_t>(to_run, config.max_parallel_instances);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (write_error) std::rethrow_exception(write_error);
    checkpoint();

    if (summary) {
        summary->job_id = job.job_id;
        summary->skipped = skipped;
        summary->generated = 0;
        summary->failed = 0;
        for (const auto& inst : results) (inst.error ? summary->failed : summary->generated)++;
    }
    return results;
}

}  // namespace ehrnip
