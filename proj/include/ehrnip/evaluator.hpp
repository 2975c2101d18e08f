#pragma once

#include "ehrnip/core_model.hpp"
#include "ehrnip/format.hpp"
#include "ehrnip/model_backend.hpp"
#include "ehrnip/prompt_composer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ehrnip {

enum class QualityMapping { Minimum, MeanFloored };

std::string_view to_string(QualityMapping m);
/// Accepts "min"/"minimum" and "mean"/"mean-floored".
std::optional<QualityMapping> mapping_from_string(std::string_view s);

/// Minimum: the lowest criterion. MeanFloored: floor of the five-way mean.
QualityLevel quality_from_scores(const CriteriaScores& scores,
                                 QualityMapping mapping = QualityMapping::Minimum);

/// "Question: ...\nAnswer: ..." or "Content: ...\nExplanation: ...".
std::string render_conversation(TaskKind task, const DialogueRound& round);

/// Judge prompt for `round_index` (1-based). Earlier rounds appear as
/// user/assistant pairs, with the judge's earlier replies taken from
/// `judge_replies`; a missing reply is left as an empty assistant turn.
ComposedPrompt build_judge_prompt(const EhrNote& note, const InteractionInstance& instance,
                                  int round_index, std::span<const std::string> judge_replies,
                                  const TemplateRegistry& registry);

std::vector<ComposedPrompt> build_judge_prompts(const EhrNote& note,
                                                const InteractionInstance& instance,
                                                const TemplateRegistry& registry,
                                                std::span<const std::string> judge_replies = {});

struct RoundEvaluation {
    std::string instance_id;
    int round_index = 1;
    std::optional<CriteriaScores> scores;
    std::optional<QualityLevel> quality;
    bool unscored = false;
    std::string judge_model;
    std::string raw_judge_text;
    /// Why the round is unscored; empty when scored.
    std::string error;

    bool operator==(const RoundEvaluation&) const = default;
};

nlohmann::ordered_json evaluation_to_json(const RoundEvaluation& e);
RoundEvaluation evaluation_from_json(const nlohmann::json& j);

struct EvaluatorConfig {
    std::string judge_model = "gpt-4";
    QualityMapping mapping = QualityMapping::Minimum;
    double temperature = kJudgeTemperature;
    int max_output_tokens = 256;
    std::function<void(std::string_view)> log;
};

/// One evaluation per round. Judge failures mark that round unscored and
/// the rest continue. Instances carrying an error are skipped (empty result).
std::vector<RoundEvaluation> evaluate_instance(const EhrNote& note,
                                               const InteractionInstance& instance,
                                               ChatBackend& backend, const EvaluatorConfig& config,
                                               const TemplateRegistry& registry);

inline constexpr int kQualityLevels = 6;

struct QualityDistribution {
    std::array<std::size_t, kQualityLevels> counts{};
    /// Full precision; use display_percentage for two-decimal output.
    std::array<double, kQualityLevels> percentages{};

    std::size_t total() const noexcept;
};

QualityDistribution distribution_from_counts(const std::array<std::size_t, kQualityLevels>& counts);
/// Drops unscored rounds; throws EmptyEvaluationSet when none are left.
QualityDistribution aggregate_distribution(std::span<const RoundEvaluation> evals);

inline std::string display_percentage(double value) { return fixed2(value); }

struct ReportRow {
    std::string corpus;
    TaskKind task = TaskKind::QA;
    std::string engine_label;
    std::string judge_model;
    QualityDistribution distribution;
    std::size_t unscored = 0;
};

nlohmann::ordered_json report_to_json(std::span<const ReportRow> rows, QualityMapping mapping);
/// Aligned text table, levels 5 down to 0, two-decimal percentages.
std::string report_to_table(std::span<const ReportRow> rows);

}  // namespace ehrnip
