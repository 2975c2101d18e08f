#include "ehrnip/cli.hpp"

#include "ehrnip/dataset_store.hpp"
#include "ehrnip/errors.hpp"
#include "ehrnip/evaluator.hpp"
#include "ehrnip/http_backend.hpp"
#include "ehrnip/model_backend.hpp"
#include "ehrnip/pipeline_engine.hpp"
#include "ehrnip/service_api.hpp"
#include "ehrnip/stats.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <atomic>
#include <charconv>
#include <deque>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace ehrnip {

namespace {

std::atomic<bool> g_serve_stop{false};

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// Every key the config file may carry, as "section.key".
const std::set<std::string, std::less<>> kKnownKeys = {
    "backend.kind",          "backend.script",
    "backend.judge_reply",   "backend.endpoint_url",
    "backend.api_key_env",   "backend.max_retries",
    "backend.retry_backoff_ms", "backend.requests_per_minute",
    "backend.request_timeout_ms",
    "pipeline.task",         "pipeline.rounds",
    "pipeline.generator_model", "pipeline.engine_label",
    "pipeline.parallel",     "pipeline.checkpoint_every",
    "pipeline.temperature",  "pipeline.max_output_tokens",
    "evaluator.judge_model", "evaluator.mapping",
    "evaluator.max_output_tokens",
    "stats.tokenizer",       "stats.vocab",
    "store.templates",       "store.journal_dir",
    "store.created_at",      "store.split_sizes",
    "store.split_seed",
    "service.bind",          "service.port",
    "service.ttl_seconds",   "service.static_dir",
    "service.store_dir",
};

/// Layered "section.key" settings: built-in defaults < config file < flags.
class Settings {
public:
    void load_file(const fs::path& path) {
        if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::read_ini(path.string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("bad config file: ") + e.what());
        }
        for (const auto& [section, entries] : tree) {
            if (entries.empty()) {
                throw ConfigError("config key '" + section + "' is outside any section");
            }
            for (const auto& [key, value] : entries) {
                set(section + "." + key, value.data());
            }
        }
    }

    void set(const std::string& key, std::string value) {
        if (!kKnownKeys.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = std::move(value);
    }

    std::optional<std::string> get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::string str(const std::string& key, std::string fallback) const {
        return get(key).value_or(std::move(fallback));
    }

    long long integer(const std::string& key, long long fallback) const {
        const auto v = get(key);
        if (!v) return fallback;
        long long out = 0;
        const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc{} || ptr != v->data() + v->size()) {
            throw ConfigError(key + " must be an integer, got '" + *v + "'");
        }
        return out;
    }

    double real(const std::string& key, double fallback) const {
        const auto v = get(key);
        if (!v) return fallback;
        std::size_t used = 0;
        double out = 0;
        try {
            out = std::stod(*v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != v->size()) {
            throw ConfigError(key + " must be a number, got '" + *v + "'");
        }
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

/// A command-line option that overrides one settings key when given.
struct BoundFlag {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
};

class Flags {
public:
    explicit Flags(CLI::App* app) : app_(app) {}

    CLI::Option* add(const std::string& name, const std::string& key, const std::string& help) {
        auto& b = bound_.emplace_back();
        b.key = key;
        b.option = app_->add_option(name, b.value, help + " [" + key + "]");
        return b.option;
    }

    void apply(Settings& settings) const {
        for (const auto& b : bound_) {
            if (b.option->count() > 0) settings.set(b.key, b.value);
        }
    }

private:
    CLI::App* app_;
    std::deque<BoundFlag> bound_;
};

struct Command {
    CLI::App* app = nullptr;
    std::unique_ptr<Flags> flags;
    std::string config_path;
};

Command make_command(CLI::App& root, const std::string& name, const std::string& help) {
    Command c;
    c.app = root.add_subcommand(name, help);
    c.flags = std::make_unique<Flags>(c.app);
    c.app->add_option("--config", c.config_path, "INI config file; flags override it");
    return c;
}

void add_backend_flags(Command& c) {
    c.flags->add("--backend", "backend.kind", "scripted or http")
        ->check(CLI::IsMember({"scripted", "http"}));
    c.flags->add("--script", "backend.script", "JSON array of scripted replies");
    c.flags->add("--judge-reply", "backend.judge_reply",
                 "reply the built-in simulator gives as judge");
    c.flags->add("--endpoint", "backend.endpoint_url", "chat-completions base URL");
    c.flags->add("--templates", "store.templates", "template directory with MANIFEST");
}

Settings resolve(const Command& c) {
    Settings s;
    if (!c.config_path.empty()) s.load_file(c.config_path);
    c.flags->apply(s);
    return s;
}

TaskKind task_setting(const Settings& s, TaskKind fallback) {
    const auto name = s.str("pipeline.task", std::string(to_string(fallback)));
    const auto task = task_from_string(name);
    if (!task) throw ConfigError("unknown task '" + name + "' (use qa or explanation)");
    return *task;
}

int int_setting(const Settings& s, const std::string& key, int fallback) {
    const auto v = s.integer(key, fallback);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw ConfigError(key + " is out of range");
    }
    return static_cast<int>(v);
}

/// Unset keys fall back to `p`, which is the job snapshot on resume.
PipelineConfig pipeline_setting(const Settings& s, PipelineConfig p = {}) {
    p.task = task_setting(s, p.task);
    p.rounds_per_instance = int_setting(s, "pipeline.rounds", p.rounds_per_instance);
    p.generator_model = s.str("pipeline.generator_model", p.generator_model);
    p.engine_label = s.str("pipeline.engine_label", p.engine_label);
    p.max_parallel_instances = int_setting(s, "pipeline.parallel", p.max_parallel_instances);
    p.checkpoint_every = int_setting(s, "pipeline.checkpoint_every", p.checkpoint_every);
    p.temperature = s.real("pipeline.temperature", p.temperature);
    p.max_output_tokens = int_setting(s, "pipeline.max_output_tokens", p.max_output_tokens);
    p.validate();
    return p;
}

TemplateRegistry registry_setting(const Settings& s) {
    if (const auto dir = s.get("store.templates")) return TemplateRegistry::load_directory(*dir);
    return TemplateRegistry::builtin();
}

std::optional<Timestamp> created_at_setting(const Settings& s) {
    const auto v = s.get("store.created_at");
    if (!v) return std::nullopt;
    try {
        return parse_timestamp(*v);
    } catch (const Error& e) {
        throw ConfigError("store.created_at: " + std::string(e.what()));
    }
}

std::vector<ScriptStep> load_script(const fs::path& path) {
    const auto j = read_json_file(path);
    if (!j.is_array()) throw ConfigError("script " + path.string() + " must be a JSON array");
    std::vector<ScriptStep> steps;
    for (const auto& step : j) {
        if (step.is_string()) {
            steps.push_back(ScriptStep::reply(step.get<std::string>()));
        } else if (step.is_object() && step.contains("reply")) {
            steps.push_back(ScriptStep::reply(step.at("reply").get<std::string>()));
        } else if (step.is_object() && step.contains("fail")) {
            steps.push_back(ScriptStep::fail(step.at("fail").get<int>(),
                                             step.value("body", std::string("scripted failure"))));
        } else if (step.is_object() && step.contains("timeout")) {
            steps.push_back(ScriptStep::timeout());
        } else {
            throw ConfigError("unrecognised script step in " + path.string() + ": " + step.dump());
        }
    }
    return steps;
}

std::shared_ptr<ChatBackend> backend_setting(const Settings& s) {
    const auto kind = s.str("backend.kind", "scripted");
    if (kind == "scripted") {
        if (const auto script = s.get("backend.script")) {
            return std::make_shared<ScriptedBackend>(load_script(*script));
        }
        auto judge_reply = s.str("backend.judge_reply", std::string(kExampleJudgeReply));
        return std::make_shared<ScriptedBackend>(
            [judge_reply](const ChatRequest& r) { return simulated_reply(r, judge_reply); });
    }
    if (kind == "http") {
        BackendConfig b;
        b.endpoint_url = s.str("backend.endpoint_url", b.endpoint_url);
        b.api_key_env_name = s.str("backend.api_key_env", b.api_key_env_name);
        b.max_retries = int_setting(s, "backend.max_retries", b.max_retries);
        b.retry_backoff_ms = int_setting(s, "backend.retry_backoff_ms", b.retry_backoff_ms);
        b.requests_per_minute = int_setting(s, "backend.requests_per_minute", b.requests_per_minute);
        b.request_timeout_ms = int_setting(s, "backend.request_timeout_ms", b.request_timeout_ms);
        b.validate();
        return make_http_backend(b);
    }
    throw ConfigError("unknown backend '" + kind + "' (use scripted or http)");
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
    return file.parent_path() / (file.stem().string() + suffix);
}

void print_json(std::ostream& out, const ordered_json& j) { out << j.dump() << '\n'; }

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeArgs {
    std::string notes;
    std::string out;
    std::string resume;
    std::string job_id;
    std::string manifest;
    std::size_t stop_after = 0;
};

int synthesize(const Command& c, const SynthesizeArgs& a, std::ostream& out, std::ostream& err) {
    const auto settings = resolve(c);
    const auto registry = registry_setting(settings);
    const auto created_at = created_at_setting(settings);
    const auto notes = load_notes(a.notes);
    const fs::path out_path = a.out;
    const fs::path journal_dir =
        settings.str("store.journal_dir",
                     out_path.parent_path().empty() ? "." : out_path.parent_path().string());

    const std::string job_id =
        !a.resume.empty() ? a.resume : (!a.job_id.empty() ? a.job_id : out_path.stem().string());
    BatchJobState job;
    std::optional<JobJournal> journal;
    PipelineConfig config;
    if (!a.resume.empty()) {
        journal.emplace(JobJournal::resume(journal_dir, job_id, job));
        config = pipeline_setting(settings, job.config_snapshot);
    } else {
        config = pipeline_setting(settings);
        if (JobJournal::exists(journal_dir, job_id)) {
            throw ConfigError("job '" + job_id + "' already exists; pass --resume " + job_id);
        }
        if (fs::exists(out_path) && fs::file_size(out_path) > 0) {
            throw ConfigError("output " + out_path.string() +
                              " already has content; choose another --out or --resume");
        }
        fs::create_directories(journal_dir);
        journal.emplace(JobJournal::create(journal_dir, job_id, config, job));
    }

    BatchOptions options;
    options.registry = &registry;
    options.output = out_path;
    options.journal = &*journal;
    if (a.stop_after > 0) options.stop_after = a.stop_after;
    if (created_at) options.clock = [t = *created_at] { return t; };

    auto backend = backend_setting(settings);
    BatchSummary summary;
    summary.job_id = job_id;
    err << "synthesize: " << notes.size() << " notes, task " << to_string(config.task)
        << ", rounds " << config.rounds_per_instance << ", parallel "
        << config.max_parallel_instances << '\n';
    run_batch(notes, config, *backend, job, options, &summary);

    const auto stored = fs::exists(out_path) ? load_instances(out_path)
                                             : std::vector<InteractionInstance>{};
    const auto manifest_path =
        a.manifest.empty() ? sibling(out_path, ".manifest.json") : fs::path(a.manifest);
    write_json_file(manifest_path,
                    manifest_to_json(build_manifest(job_id, stored, std::nullopt,
                                                    registry.checksum(),
                                                    created_at.value_or(utc_now()))));

    for (const auto& [note_id, error] : job.failed) {
        err << "failed " << note_id << ": " << error << '\n';
    }
    print_json(out, summary.to_json());
    return summary.failed > 0 ? exit_code::kProvider : exit_code::kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string instances;
    std::string notes;
    std::string out;
    std::string report;
    std::string table;
};

int evaluate(const Command& c, const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
    const auto settings = resolve(c);
    EvaluatorConfig config;
    config.judge_model = settings.str("evaluator.judge_model", config.judge_model);
    const auto mapping_name = settings.str("evaluator.mapping", "min");
    const auto mapping = mapping_from_string(mapping_name);
    if (!mapping) throw ConfigError("unknown mapping '" + mapping_name + "' (use min or mean)");
    config.mapping = *mapping;
    config.max_output_tokens =
        int_setting(settings, "evaluator.max_output_tokens", config.max_output_tokens);
    config.log = [&err](std::string_view line) { err << line << '\n'; };
    const auto registry = registry_setting(settings);

    const auto instances = load_instances(a.instances);
    const auto notes = load_notes(a.notes);
    std::map<std::string, const EhrNote*> by_id;
    for (const auto& n : notes) by_id[n.id] = &n;

    auto backend = backend_setting(settings);

    using Group = std::tuple<std::string, TaskKind, std::string>;
    std::map<Group, std::vector<RoundEvaluation>> groups;
    std::vector<RoundEvaluation> all;
    std::size_t skipped = 0;
    for (const auto& inst : instances) {
        const auto it = by_id.find(inst.note_id);
        if (it == by_id.end()) {
            throw IoError("no note '" + inst.note_id + "' in " + a.notes + " for instance " +
                          inst.instance_id);
        }
        if (inst.error) ++skipped;
        auto evals = evaluate_instance(*it->second, inst, *backend, config, registry);
        auto& group = groups[{std::string(to_string(inst.corpus)), inst.task, inst.engine_label}];
        group.insert(group.end(), evals.begin(), evals.end());
        all.insert(all.end(), evals.begin(), evals.end());
    }

    const fs::path out_path = a.out;
    {
        std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
        if (!file) throw IoError("cannot write " + out_path.string());
        for (const auto& e : all) file << evaluation_to_json(e).dump() << '\n';
        if (!file) throw IoError("write failed on " + out_path.string());
    }

    std::vector<ReportRow> rows;
    std::size_t unscored = 0;
    for (const auto& [key, evals] : groups) {
        ReportRow row;
        std::tie(row.corpus, row.task, row.engine_label) = key;
        row.judge_model = config.judge_model;
        row.unscored = static_cast<std::size_t>(
            std::count_if(evals.begin(), evals.end(), [](const auto& e) { return e.unscored; }));
        unscored += row.unscored;
        try {
            row.distribution = aggregate_distribution(evals);
        } catch (const EmptyEvaluationSet&) {
            err << "no scored rounds for " << row.corpus << '/' << to_string(row.task) << '/'
                << row.engine_label << '\n';
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw EmptyEvaluationSet();

    const auto report_path = a.report.empty() ? sibling(out_path, ".report.json") : fs::path(a.report);
    const auto table_path = a.table.empty() ? sibling(out_path, ".table.txt") : fs::path(a.table);
    write_json_file(report_path, report_to_json(rows, config.mapping));
    const auto table = report_to_table(rows);
    {
        std::ofstream file(table_path, std::ios::binary | std::ios::trunc);
        if (!(file << table)) throw IoError("cannot write " + table_path.string());
    }
    err << table;

    ordered_json summary;
    summary["evaluated_rounds"] = all.size();
    summary["unscored"] = unscored;
    summary["skipped_instances"] = skipped;
    summary["report"] = report_path.string();
    summary["table"] = table_path.string();
    print_json(out, summary);
    return unscored > 0 ? exit_code::kProvider : exit_code::kOk;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
    std::string instances;
    std::string out;
    std::string table;
};

int stats(const Command& c, const StatsArgs& a, std::ostream& out, std::ostream& err) {
    const auto settings = resolve(c);
    TokenizerSpec spec;
    const auto kind = settings.str("stats.tokenizer", "simple");
    if (kind == "bpe") {
        spec.kind = TokenizerKind::BpeVocabFile;
        const auto vocab = settings.get("stats.vocab");
        if (!vocab) throw ConfigError("--tokenizer bpe needs --vocab");
        spec.vocab_path = *vocab;
    } else if (kind != "simple") {
        throw ConfigError("unknown tokenizer '" + kind + "' (use simple or bpe)");
    }
    const auto tokenizer = Tokenizer::load(spec);
    const auto instances = load_instances(a.instances);
    const auto rows = compute_stats(instances, tokenizer);

    const auto j = stats_to_json(rows);
    if (!a.out.empty()) write_json_file(a.out, j);
    const auto table = stats_to_table(rows);
    if (!a.table.empty()) {
        std::ofstream file(a.table, std::ios::binary | std::ios::trunc);
        if (!(file << table)) throw IoError("cannot write " + a.table);
    } else {
        err << table;
    }
    ordered_json summary;
    summary["rows"] = j;
    print_json(out, summary);
    return exit_code::kOk;
}

// ---------------------------------------------------------------------------
// split

struct SplitArgs {
    std::string ids;
    std::string out;
};

std::vector<std::string> read_ids(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> ids;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line.front() == '{') {
            const auto j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("id") || !j["id"].is_string()) {
                throw SchemaError(number, "expected an object with a string \"id\"");
            }
            ids.push_back(j["id"].get<std::string>());
        } else {
            ids.push_back(line);
        }
    }
    return ids;
}

SplitSizes parse_sizes(const std::string& text) {
    std::vector<std::size_t> parts;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
            throw ConfigError("split sizes must be three integers like 8000,1000,1000");
        }
        parts.push_back(v);
    }
    if (parts.size() != 3) throw ConfigError("split sizes must be three integers like 8000,1000,1000");
    return {parts[0], parts[1], parts[2]};
}

int split(const Command& c, const SplitArgs& a, std::ostream& out, std::ostream&) {
    const auto settings = resolve(c);
    const auto sizes_text = settings.get("store.split_sizes");
    if (!sizes_text) throw ConfigError("--sizes is required");
    const auto sizes = parse_sizes(*sizes_text);
    const auto seed = settings.integer("store.split_seed", 0);
    if (seed < 0) throw ConfigError("seed must be >= 0");
    const auto ids = read_ids(a.ids);
    const auto assignment = assign_splits(ids, sizes, static_cast<std::uint64_t>(seed));
    const fs::path out_path = a.out.empty() ? fs::path("splits.json") : fs::path(a.out);
    write_json_file(out_path, splits_to_json(assignment));

    ordered_json summary;
    summary["train"] = assignment.train_ids.size();
    summary["validation"] = assignment.validation_ids.size();
    summary["test"] = assignment.test_ids.size();
    summary["seed"] = assignment.seed;
    summary["out"] = out_path.string();
    print_json(out, summary);
    return exit_code::kOk;
}

// ---------------------------------------------------------------------------
// serve

int serve(const Command& c, std::ostream& out, std::ostream& err) {
    const auto settings = resolve(c);
    ServiceConfig config;
    config.ttl = std::chrono::seconds(settings.integer("service.ttl_seconds", config.ttl.count()));
    config.generator_model = settings.str("pipeline.generator_model", config.generator_model);
    config.temperature = settings.real("pipeline.temperature", config.temperature);
    config.max_output_tokens =
        int_setting(settings, "pipeline.max_output_tokens", config.max_output_tokens);
    config.store_dir = settings.str("service.store_dir", ".");

    ServerOptions options;
    options.bind_address = settings.str("service.bind", options.bind_address);
    options.port = int_setting(settings, "service.port", options.port);
    if (options.port < 0 || options.port > 65535) throw ConfigError("port must be in 0..65535");
    if (const auto dir = settings.get("service.static_dir")) options.static_dir = *dir;

    SessionService service(backend_setting(settings), config, registry_setting(settings));
    SessionServer server(service, options);
    g_serve_stop = false;
    const int port = server.start();

    ordered_json ready;
    ready["listening"] = "http://" + options.bind_address + ":" + std::to_string(port);
    ready["port"] = port;
    print_json(out, ready);
    out.flush();
    err << "serving sessions on " << options.bind_address << ':' << port << '\n';

    while (!g_serve_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
    return exit_code::kOk;
}

int fail(std::ostream& err, const std::exception& e, int code) {
    err << "error: " << e.what() << '\n';
    return code;
}

}  // namespace

void request_serve_shutdown() noexcept { g_serve_stop = true; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-agent dialogue generation over patient notes", "ehrnip"};
    app.require_subcommand(1);

    auto syn = make_command(app, "synthesize", "generate dialogue instances for a notes file");
    SynthesizeArgs syn_args;
    syn.app->add_option("--notes", syn_args.notes, "notes JSONL")->required();
    syn.app->add_option("--out", syn_args.out, "instances JSONL to write")->required();
    syn.app->add_option("--resume", syn_args.resume, "resume this job id");
    syn.app->add_option("--job-id", syn_args.job_id, "job id (default: --out file stem)");
    syn.app->add_option("--manifest", syn_args.manifest, "manifest path (default: <out>.manifest.json)");
    syn.app->add_option("--stop-after", syn_args.stop_after, "stop after N new instances");
    syn.flags->add("--task", "pipeline.task", "qa or explanation");
    syn.flags->add("--rounds", "pipeline.rounds", "rounds per instance");
    syn.flags->add("--engine-label", "pipeline.engine_label", "label stored on instances");
    syn.flags->add("--generator-model", "pipeline.generator_model", "model for both agents");
    syn.flags->add("--parallel", "pipeline.parallel", "instances generated at once");
    syn.flags->add("--checkpoint-every", "pipeline.checkpoint_every", "commit cadence");
    syn.flags->add("--temperature", "pipeline.temperature", "sampling temperature");
    syn.flags->add("--max-output-tokens", "pipeline.max_output_tokens", "per-call output cap");
    syn.flags->add("--journal-dir", "store.journal_dir", "job journal directory");
    syn.flags->add("--created-at", "store.created_at", "fixed RFC 3339 timestamp for records");
    add_backend_flags(syn);

    auto eva = make_command(app, "evaluate", "score stored instances with a judge model");
    EvaluateArgs eva_args;
    eva.app->add_option("--instances", eva_args.instances, "instances JSONL")->required();
    eva.app->add_option("--notes", eva_args.notes, "notes JSONL")->required();
    eva.app->add_option("--out", eva_args.out, "evaluations JSONL to write")->required();
    eva.app->add_option("--report", eva_args.report, "report JSON (default: <out>.report.json)");
    eva.app->add_option("--table", eva_args.table, "text table (default: <out>.table.txt)");
    eva.flags->add("--judge-model", "evaluator.judge_model", "judge model name");
    eva.flags->add("--mapping", "evaluator.mapping", "min or mean");
    eva.flags->add("--judge-max-output-tokens", "evaluator.max_output_tokens",
                   "per-call output cap for the judge");
    add_backend_flags(eva);

    auto sta = make_command(app, "stats", "token length statistics per agent");
    StatsArgs sta_args;
    sta.app->add_option("--instances", sta_args.instances, "instances JSONL")->required();
    sta.app->add_option("--out", sta_args.out, "stats JSON to write");
    sta.app->add_option("--table", sta_args.table, "text table to write (default: stderr)");
    sta.flags->add("--tokenizer", "stats.tokenizer", "simple or bpe");
    sta.flags->add("--vocab", "stats.vocab", "vocabulary file for bpe");

    auto spl = make_command(app, "split", "assign note ids to train/validation/test");
    SplitArgs spl_args;
    spl.app->add_option("--ids", spl_args.ids, "file with one id per line, or notes JSONL")
        ->required();
    spl.app->add_option("--out", spl_args.out, "splits JSON (default: splits.json)");
    spl.flags->add("--sizes", "store.split_sizes", "train,validation,test sizes");
    spl.flags->add("--seed", "store.split_seed", "shuffle seed");

    auto srv = make_command(app, "serve", "run the interactive session service");
    srv.flags->add("--bind", "service.bind", "bind address");
    srv.flags->add("--port", "service.port", "port (0 picks a free one)");
    srv.flags->add("--ttl-seconds", "service.ttl_seconds", "session lifetime");
    srv.flags->add("--static-dir", "service.static_dir", "directory served at /");
    srv.flags->add("--store-dir", "service.store_dir", "where exports are written");
    srv.flags->add("--generator-model", "pipeline.generator_model", "assistant model");
    add_backend_flags(srv);

    std::vector<const char*> argv{"ehrnip"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? exit_code::kOk : exit_code::kUsage;
    }

    try {
        if (*syn.app) return synthesize(syn, syn_args, out, err);
        if (*eva.app) return evaluate(eva, eva_args, out, err);
        if (*sta.app) return stats(sta, sta_args, out, err);
        if (*spl.app) return split(spl, spl_args, out, err);
        if (*srv.app) return serve(srv, out, err);
    } catch (const ConfigError& e) {
        return fail(err, e, exit_code::kUsage);
    } catch (const JobConfigMismatch& e) {
        return fail(err, e, exit_code::kUsage);
    } catch (const SizeMismatch& e) {
        return fail(err, e, exit_code::kUsage);
    } catch (const IoError& e) {
        return fail(err, e, exit_code::kIo);
    } catch (const SchemaError& e) {
        return fail(err, e, exit_code::kIo);
    } catch (const VocabLoadError& e) {
        return fail(err, e, exit_code::kIo);
    } catch (const ProviderError& e) {
        return fail(err, e, exit_code::kProvider);
    } catch (const TimeoutError& e) {
        return fail(err, e, exit_code::kProvider);
    } catch (const fs::filesystem_error& e) {
        return fail(err, e, exit_code::kIo);
    } catch (const std::exception& e) {
        return fail(err, e, exit_code::kUsage);
    }
    return exit_code::kUsage;
}

}  // namespace ehrnip
