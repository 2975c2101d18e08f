#pragma once

#include "ehrnip/core_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ehrnip {

// Instance records use a fixed key order so files are byte-stable.
nlohmann::ordered_json instance_to_json(const InteractionInstance& instance);
/// Throws std::invalid_argument describing the first schema problem.
InteractionInstance instance_from_json(const nlohmann::json& j);
/// One JSONL line, without the trailing LF.
std::string encode_instance_line(const InteractionInstance& instance);

nlohmann::ordered_json note_to_json(const EhrNote& note);
EhrNote note_from_json(const nlohmann::json& j);

/// Appends one line per instance; returns the number written.
std::size_t append_instances(const std::filesystem::path& path,
                             std::span<const InteractionInstance> instances);
/// Reads and validates every line. Throws SchemaError or IoError.
std::vector<InteractionInstance> load_instances(const std::filesystem::path& path);

std::size_t append_notes(const std::filesystem::path& path, std::span<const EhrNote> notes);
/// Reads notes.jsonl; rejects duplicate ids and blank texts with SchemaError.
std::vector<EhrNote> load_notes(const std::filesystem::path& path);

struct SplitSizes {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;

    std::size_t total() const noexcept { return train + validation + test; }
};

struct SplitAssignment {
    std::set<std::string> train_ids;
    std::set<std::string> validation_ids;
    std::set<std::string> test_ids;
    std::uint64_t seed = 0;

    /// "train", "validation", "test", or empty when the id is unassigned.
    std::string split_of(const std::string& id) const;

    bool operator==(const SplitAssignment&) const = default;
};

/// Seeded Fisher-Yates shuffle over mt19937_64, then contiguous slices of
/// the requested sizes. Throws SizeMismatch or ConfigError (duplicate ids).
SplitAssignment assign_splits(std::span<const std::string> note_ids, SplitSizes sizes,
                              std::uint64_t seed);
/// The shuffled order used by assign_splits.
std::vector<std::string> seeded_permutation(std::span<const std::string> ids,
                                            std::uint64_t seed);

nlohmann::ordered_json splits_to_json(const SplitAssignment& splits);
SplitAssignment splits_from_json(const nlohmann::json& j);

struct DatasetManifest {
    std::string name;
    std::string corpus;
    TaskKind task = TaskKind::QA;
    std::string engine_label;
    std::size_t instance_count = 0;
    std::map<std::string, std::size_t> split_counts;
    std::string template_checksum;
    Timestamp created_at{};

    bool operator==(const DatasetManifest&) const = default;
};

nlohmann::ordered_json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Counts instances per split (a single "all" split when `splits` is empty).
DatasetManifest build_manifest(std::string name, std::span<const InteractionInstance> instances,
                               const std::optional<SplitAssignment>& splits,
                               std::string template_checksum, Timestamp created_at);

/// Empty iff the manifest's counts and checksum agree with the instances.
std::vector<std::string> validate_manifest(const DatasetManifest& manifest,
                                           std::span<const InteractionInstance> instances,
                                           std::string_view template_checksum);

/// "instances-{corpus}-{task}-{engine}.jsonl"
std::string instances_file_name(Corpus corpus, TaskKind task, std::string_view engine_label);

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace ehrnip
