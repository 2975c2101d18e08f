#include "ehrnip/dataset_store.hpp"

#include "ehrnip/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ehrnip {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr auto kReplaceInvalid = json::error_handler_t::replace;

const json& require(const json& j, const char* key, json::value_t type) {
    const auto it = j.find(key);
    if (it == j.end()) throw std::invalid_argument(std::string("missing key '") + key + "'");
    const bool ok = type == json::value_t::number_integer ? it->is_number_integer()
                                                          : it->type() == type;
    if (!ok) throw std::invalid_argument(std::string("key '") + key + "' has the wrong type");
    return *it;
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("unexpected key '" + key + "'");
        }
    }
}

std::ofstream open_append(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot open " + path.string() + " for append");
    return out;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) throw SchemaError(number, "empty line");
        const auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw SchemaError(number, "not valid JSON");
        if (!j.is_object()) throw SchemaError(number, "not a JSON object");
        try {
            fn(j, number);
        } catch (const std::invalid_argument& e) {
            throw SchemaError(number, e.what());
        } catch (const Error& e) {
            throw SchemaError(number, e.what());
        }
    }
    if (in.bad()) throw IoError("read error on " + path.string());
}

std::uint64_t bounded(std::mt19937_64& gen, std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t r = gen();
        if (r >= threshold) return r % n;
    }
}

}  // namespace

ordered_json instance_to_json(const InteractionInstance& instance) {
    ordered_json j;
    j["instance_id"] = instance.instance_id;
    j["note_id"] = instance.note_id;
    j["corpus"] = to_string(instance.corpus);
    j["task"] = to_string(instance.task);
    j["engine_label"] = instance.engine_label;
    j["created_at"] = format_timestamp(instance.created_at);
    if (instance.error) j["error"] = *instance.error;
    ordered_json rounds = ordered_json::array();
    for (const auto& r : instance.rounds) {
        ordered_json jr;
        jr["round_index"] = r.request.round_index;
        jr["request"] = r.request.payload;
        jr["response"] = r.response.text;
        jr["warnings"] = r.warnings;
        rounds.push_back(std::move(jr));
    }
    j["rounds"] = std::move(rounds);
    return j;
}

InteractionInstance instance_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("instance is not an object");
    reject_unknown_keys(j, {"instance_id", "note_id", "corpus", "task", "engine_label",
                            "created_at", "error", "rounds"});
    InteractionInstance inst;
    inst.instance_id = require(j, "instance_id", json::value_t::string).get<std::string>();
    inst.note_id = require(j, "note_id", json::value_t::string).get<std::string>();
    const auto corpus = corpus_from_string(
        require(j, "corpus", json::value_t::string).get_ref<const std::string&>());
    if (!corpus) throw std::invalid_argument("unknown corpus");
    inst.corpus = *corpus;
    const auto task =
        task_from_string(require(j, "task", json::value_t::string).get_ref<const std::string&>());
    if (!task) throw std::invalid_argument("unknown task");
    inst.task = *task;
    inst.engine_label = require(j, "engine_label", json::value_t::string).get<std::string>();
    inst.created_at = parse_timestamp(
        require(j, "created_at", json::value_t::string).get_ref<const std::string&>());
    if (j.contains("error")) {
        inst.error = require(j, "error", json::value_t::string).get<std::string>();
    }
    for (const auto& jr : require(j, "rounds", json::value_t::array)) {
        if (!jr.is_object()) throw std::invalid_argument("round is not an object");
        reject_unknown_keys(jr, {"round_index", "request", "response", "warnings"});
        DialogueRound r;
        const int index = require(jr, "round_index", json::value_t::number_integer).get<int>();
        r.request = {inst.task, require(jr, "request", json::value_t::string).get<std::string>(),
                     index};
        r.response = {require(jr, "response", json::value_t::string).get<std::string>(), index};
        for (const auto& w : require(jr, "warnings", json::value_t::array)) {
            if (!w.is_string()) throw std::invalid_argument("warning is not a string");
            r.warnings.push_back(w.get<std::string>());
        }
        inst.rounds.push_back(std::move(r));
    }
    return inst;
}

std::string encode_instance_line(const InteractionInstance& instance) {
    return instance_to_json(instance).dump(-1, ' ', false, kReplaceInvalid);
}

ordered_json note_to_json(const EhrNote& note) {
    ordered_json j;
    j["id"] = note.id;
    j["corpus"] = to_string(note.corpus);
    j["text"] = note.text;
    return j;
}

EhrNote note_from_json(const json& j) {
    reject_unknown_keys(j, {"id", "corpus", "text"});
    EhrNote note;
    note.id = require(j, "id", json::value_t::string).get<std::string>();
    const auto corpus = corpus_from_string(
        require(j, "corpus", json::value_t::string).get_ref<const std::string&>());
    if (!corpus) throw std::invalid_argument("unknown corpus");
    note.corpus = *corpus;
    note.text = require(j, "text", json::value_t::string).get<std::string>();
    return note;
}

std::size_t append_instances(const std::filesystem::path& path,
                             std::span<const InteractionInstance> instances) {
    auto out = open_append(path);
    for (const auto& inst : instances) out << encode_instance_line(inst) << '\n';
    out.flush();
    if (!out) throw IoError("write failed on " + path.string());
    return instances.size();
}

std::vector<InteractionInstance> load_instances(const std::filesystem::path& path) {
    std::vector<InteractionInstance> out;
    for_each_line(path, [&](const json& j, std::size_t) {
        auto inst = instance_from_json(j);
        const auto violations = validate_instance(inst, std::nullopt);
        if (!violations.empty()) throw std::invalid_argument(violations.front());
        out.push_back(std::move(inst));
    });
    return out;
}

std::size_t append_notes(const std::filesystem::path& path, std::span<const EhrNote> notes) {
    auto out = open_append(path);
    for (const auto& n : notes) out << note_to_json(n).dump(-1, ' ', false, kReplaceInvalid) << '\n';
    out.flush();
    if (!out) throw IoError("write failed on " + path.string());
    return notes.size();
}

std::vector<EhrNote> load_notes(const std::filesystem::path& path) {
    std::vector<EhrNote> out;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](const json& j, std::size_t) {
        auto note = note_from_json(j);
        check_note(note);
        if (!seen.insert(note.id).second) {
            throw std::invalid_argument("duplicate note id '" + note.id + "'");
        }
        out.push_back(std::move(note));
    });
    return out;
}

std::string SplitAssignment::split_of(const std::string& id) const {
    if (train_ids.contains(id)) return "train";
    if (validation_ids.contains(id)) return "validation";
    if (test_ids.contains(id)) return "test";
    return {};
}

std::vector<std::string> seeded_permutation(std::span<const std::string> ids,
                                            std::uint64_t seed) {
    std::vector<std::string> order(ids.begin(), ids.end());
    std::sort(order.begin(), order.end());
    std::mt19937_64 gen(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded(gen, i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

SplitAssignment assign_splits(std::span<const std::string> note_ids, SplitSizes sizes,
                              std::uint64_t seed) {
    if (sizes.total() != note_ids.size()) {
        throw SizeMismatch("split sizes sum to " + std::to_string(sizes.total()) + " but there are " +
                           std::to_string(note_ids.size()) + " ids");
    }
    if (std::set<std::string>(note_ids.begin(), note_ids.end()).size() != note_ids.size()) {
        throw ConfigError("note ids must be unique");
    }
    const auto order = seeded_permutation(note_ids, seed);
    SplitAssignment a;
    a.seed = seed;
    const auto train_end = order.begin() + static_cast<std::ptrdiff_t>(sizes.train);
    const auto valid_end = train_end + static_cast<std::ptrdiff_t>(sizes.validation);
    a.train_ids.insert(order.begin(), train_end);
    a.validation_ids.insert(train_end, valid_end);
    a.test_ids.insert(valid_end, order.end());
    return a;
}

ordered_json splits_to_json(const SplitAssignment& splits) {
    ordered_json j;
    j["seed"] = splits.seed;
    j["train"] = splits.train_ids;
    j["validation"] = splits.validation_ids;
    j["test"] = splits.test_ids;
    return j;
}

SplitAssignment splits_from_json(const json& j) {
    SplitAssignment a;
    a.seed = j.at("seed").get<std::uint64_t>();
    a.train_ids = j.at("train").get<std::set<std::string>>();
    a.validation_ids = j.at("validation").get<std::set<std::string>>();
    a.test_ids = j.at("test").get<std::set<std::string>>();
    return a;
}

ordered_json manifest_to_json(const DatasetManifest& m) {
    ordered_json j;
    j["name"] = m.name;
    j["corpus"] = m.corpus;
    j["task"] = to_string(m.task);
    j["engine_label"] = m.engine_label;
    j["instance_count"] = m.instance_count;
    j["split_counts"] = m.split_counts;
    j["template_checksum"] = m.template_checksum;
    j["created_at"] = format_timestamp(m.created_at);
    return j;
}

DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.corpus = j.at("corpus").get<std::string>();
    const auto task = task_from_string(j.at("task").get<std::string>());
    if (!task) throw SchemaError(1, "manifest has unknown task");
    m.task = *task;
    m.engine_label = j.at("engine_label").get<std::string>();
    m.instance_count = j.at("instance_count").get<std::size_t>();
    m.split_counts = j.at("split_counts").get<std::map<std::string, std::size_t>>();
    m.template_checksum = j.at("template_checksum").get<std::string>();
    m.created_at = parse_timestamp(j.at("created_at").get<std::string>());
    return m;
}

DatasetManifest build_manifest(std::string name, std::span<const InteractionInstance> instances,
                               const std::optional<SplitAssignment>& splits,
                               std::string template_checksum, Timestamp created_at) {
    DatasetManifest m;
    m.name = std::move(name);
    if (!instances.empty()) {
        m.corpus = std::string(to_string(instances.front().corpus));
        m.task = instances.front().task;
        m.engine_label = instances.front().engine_label;
    }
    m.instance_count = instances.size();
    for (const auto& inst : instances) {
        std::string split = splits ? splits->split_of(inst.note_id) : "all";
        if (split.empty()) split = "unassigned";
        ++m.split_counts[split];
    }
    m.template_checksum = std::move(template_checksum);
    m.created_at = created_at;
    return m;
}

std::vector<std::string> validate_manifest(const DatasetManifest& manifest,
                                           std::span<const InteractionInstance> instances,
                                           std::string_view template_checksum) {
    std::vector<std::string> problems;
    if (manifest.instance_count != instances.size()) {
        problems.push_back("instance_count " + std::to_string(manifest.instance_count) +
                           " but file holds " + std::to_string(instances.size()));
    }
    std::size_t split_total = 0;
    for (const auto& [_, n] : manifest.split_counts) split_total += n;
    if (split_total != manifest.instance_count) {
        problems.push_back("split counts sum to " + std::to_string(split_total) +
                           ", instance_count is " + std::to_string(manifest.instance_count));
    }
    if (manifest.template_checksum != template_checksum) {
        problems.emplace_back("template checksum mismatch");
    }
    return problems;
}

std::string instances_file_name(Corpus corpus, TaskKind task, std::string_view engine_label) {
    std::string engine(engine_label);
    for (char& c : engine) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    }
    std::ostringstream name;
    name << "instances-" << to_string(corpus) << '-' << to_string(task) << '-' << engine
         << ".jsonl";
    return name.str();
}

void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << j.dump(2, ' ', false, kReplaceInvalid) << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw SchemaError(1, path.string() + " is not valid JSON");
    return j;
}

}  // namespace ehrnip
