#pragma once

#include "ehrnip/core_model.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ehrnip {

enum class TokenizerKind { Simple, BpeVocabFile };

struct TokenizerSpec {
    TokenizerKind kind = TokenizerKind::Simple;
    /// Required for BpeVocabFile. Files ending in ".tiktoken" hold
    /// "<base64 token> <rank>" lines; anything else holds one raw token per line.
    std::optional<std::filesystem::path> vocab_path;
};

class Tokenizer {
public:
    /// Throws VocabLoadError for a missing, unreadable or empty vocabulary.
    static Tokenizer load(const TokenizerSpec& spec);
    static Tokenizer simple() { return Tokenizer{}; }

    /// Simple: runs of non-whitespace, with every ASCII punctuation character
    /// split off as its own token. Bpe: greedy longest match against the
    /// vocabulary, unknown bytes counting one token each.
    std::size_t count(std::string_view text) const;

    TokenizerKind kind() const noexcept { return kind_; }

private:
    TokenizerKind kind_ = TokenizerKind::Simple;
    std::shared_ptr<const std::unordered_set<std::string>> vocab_;
    std::size_t max_token_bytes_ = 0;
};

std::size_t count_tokens(std::string_view text, const TokenizerSpec& spec);

enum class Agent { Patient, Assistant };

std::string_view to_string(Agent a);

struct LengthSummary {
    double mean = 0;
    /// Exact order statistic; mean of the two middle values for even counts.
    double median = 0;
    std::size_t count = 0;
};

LengthSummary summarize_lengths(std::span<const std::size_t> lengths);

struct StatsRow {
    std::string corpus;
    TaskKind task = TaskKind::QA;
    std::string engine_label;
    Agent agent = Agent::Patient;
    double mean = 0;
    double median = 0;
    std::size_t count = 0;

    /// "14.64 (14)": two-decimal mean, median in parentheses.
    std::string cell() const;
};

/// Groups by (corpus, task, engine_label, agent). Patient lengths are taken
/// over request payloads, assistant lengths over responses. Instances that
/// carry an error are left out. Throws EmptyCorpus.
std::vector<StatsRow> compute_stats(std::span<const InteractionInstance> instances,
                                    const Tokenizer& tokenizer);

nlohmann::ordered_json stats_to_json(std::span<const StatsRow> rows);
std::string stats_to_table(std::span<const StatsRow> rows);

}  // namespace ehrnip
