#include "ehrnip/evaluator.hpp"

#include "ehrnip/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace ehrnip {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(QualityMapping m) {
    return m == QualityMapping::Minimum ? "min" : "mean";
}

std::optional<QualityMapping> mapping_from_string(std::string_view s) {
    if (s == "min" || s == "minimum") return QualityMapping::Minimum;
    if (s == "mean" || s == "mean-floored") return QualityMapping::MeanFloored;
    return std::nullopt;
}

QualityLevel quality_from_scores(const CriteriaScores& s, QualityMapping mapping) {
    const std::array<int, 5> v = {s.relevance, s.factuality, s.sufficiency, s.concision,
                                  s.fluency};
    if (mapping == QualityMapping::Minimum) return {*std::min_element(v.begin(), v.end())};
    // Integer floor division; all values are non-negative.
    return {std::accumulate(v.begin(), v.end(), 0) / 5};
}

std::string render_conversation(TaskKind task, const DialogueRound& round) {
    const bool qa = task == TaskKind::QA;
    std::string out = qa ? "Question: " : "Content: ";
    out += round.request.payload;
    out += qa ? "\nAnswer: " : "\nExplanation: ";
    out += round.response.text;
    return out;
}

ComposedPrompt build_judge_prompt(const EhrNote& note, const InteractionInstance& instance,
                                  int round_index, std::span<const std::string> judge_replies,
                                  const TemplateRegistry& registry) {
    if (round_index < 1 || round_index > static_cast<int>(instance.rounds.size())) {
        throw RoundIndexError("judge prompt for round " + std::to_string(round_index) +
                              " of a " + std::to_string(instance.rounds.size()) +
                              "-round instance");
    }
    ComposedPrompt p;
    p.system_text = registry.get(template_id::kJudgeSystem).body;
    for (int k = 1; k <= round_index; ++k) {
        const auto conversation = render_conversation(instance.task, instance.rounds[k - 1]);
        if (k == 1) {
            const std::pair<std::string_view, std::string_view> values[] = {
                {"note", note.text}, {"conversation", conversation}};
            p.messages.push_back(
                {MessageRole::User, substitute(registry.get(template_id::kJudgeUser1).body, values)});
        } else {
            const auto idx = static_cast<std::size_t>(k - 2);
            p.messages.push_back({MessageRole::Assistant,
                                  idx < judge_replies.size() ? judge_replies[idx] : std::string()});
            const std::pair<std::string_view, std::string_view> values[] = {
                {"conversation", conversation}};
            p.messages.push_back(
                {MessageRole::User, substitute(registry.get(template_id::kJudgeUser2).body, values)});
        }
    }
    return p;
}

std::vector<ComposedPrompt> build_judge_prompts(const EhrNote& note,
                                                const InteractionInstance& instance,
                                                const TemplateRegistry& registry,
                                                std::span<const std::string> judge_replies) {
    std::vector<ComposedPrompt> prompts;
    for (int k = 1; k <= static_cast<int>(instance.rounds.size()); ++k) {
        prompts.push_back(build_judge_prompt(note, instance, k, judge_replies, registry));
    }
    return prompts;
}

ordered_json evaluation_to_json(const RoundEvaluation& e) {
    ordered_json j;
    j["instance_id"] = e.instance_id;
    j["round_index"] = e.round_index;
    if (e.scores) {
        ordered_json s;
        s["Relevance"] = e.scores->relevance;
        s["Factuality"] = e.scores->factuality;
        s["Sufficiency"] = e.scores->sufficiency;
        s["Concision"] = e.scores->concision;
        s["Fluent"] = e.scores->fluency;
        j["scores"] = std::move(s);
    } else {
        j["scores"] = nullptr;
    }
    j["quality"] = e.quality ? json(e.quality->level) : json(nullptr);
    j["unscored"] = e.unscored;
    j["judge_model"] = e.judge_model;
    j["raw_judge_text"] = e.raw_judge_text;
    if (!e.error.empty()) j["error"] = e.error;
    return j;
}

RoundEvaluation evaluation_from_json(const json& j) {
    RoundEvaluation e;
    e.instance_id = j.at("instance_id").get<std::string>();
    e.round_index = j.at("round_index").get<int>();
    if (const auto& s = j.at("scores"); !s.is_null()) {
        e.scores = make_scores(s.at("Relevance").get<int>(), s.at("Factuality").get<int>(),
                               s.at("Sufficiency").get<int>(), s.at("Concision").get<int>(),
                               s.at("Fluent").get<int>());
    }
    if (const auto& q = j.at("quality"); !q.is_null()) e.quality = QualityLevel{q.get<int>()};
    e.unscored = j.at("unscored").get<bool>();
    e.judge_model = j.at("judge_model").get<std::string>();
    e.raw_judge_text = j.at("raw_judge_text").get<std::string>();
    e.error = j.value("error", "");
    return e;
}

std::vector<RoundEvaluation> evaluate_instance(const EhrNote& note,
                                               const InteractionInstance& instance,
                                               ChatBackend& backend, const EvaluatorConfig& config,
                                               const TemplateRegistry& registry) {
    if (instance.error) {
        if (config.log) {
            config.log("skipping " + instance.instance_id + ": instance has error (" +
                       *instance.error + ")");
        }
        return {};
    }
    std::vector<RoundEvaluation> out;
    std::vector<std::string> replies;
    for (int k = 1; k <= static_cast<int>(instance.rounds.size()); ++k) {
        RoundEvaluation e;
        e.instance_id = instance.instance_id;
        e.round_index = k;
        e.judge_model = config.judge_model;
        ChatRequest request{build_judge_prompt(note, instance, k, replies, registry),
                            config.judge_model, config.temperature, config.max_output_tokens};
        try {
            const auto scores = complete_structured(backend, std::move(request),
                                                    judge_format_reminder(), parse_judge_output,
                                                    &e.raw_judge_text);
            e.scores = scores;
            e.quality = quality_from_scores(scores, config.mapping);
        } catch (const Error& err) {
            e.unscored = true;
            e.error = err.what();
            if (config.log) {
                config.log(instance.instance_id + " round " + std::to_string(k) +
                           " unscored: " + err.what());
            }
        }
        replies.push_back(e.raw_judge_text);
        out.push_back(std::move(e));
    }
    return out;
}

std::size_t QualityDistribution::total() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

QualityDistribution distribution_from_counts(
    const std::array<std::size_t, kQualityLevels>& counts) {
    QualityDistribution d;
    d.counts = counts;
    const auto total = d.total();
    if (total == 0) throw EmptyEvaluationSet();
    for (int l = 0; l < kQualityLevels; ++l) {
        d.percentages[l] = 100.0 * static_cast<double>(counts[l]) / static_cast<double>(total);
    }
    return d;
}

QualityDistribution aggregate_distribution(std::span<const RoundEvaluation> evals) {
    std::array<std::size_t, kQualityLevels> counts{};
    for (const auto& e : evals) {
        if (e.unscored || !e.quality) continue;
        ++counts[std::clamp(e.quality->level, 0, kQualityLevels - 1)];
    }
    return distribution_from_counts(counts);
}

namespace {

std::string task_label(TaskKind t) { return t == TaskKind::QA ? "Q&A" : "Explanation"; }

}  // namespace

ordered_json report_to_json(std::span<const ReportRow> rows, QualityMapping mapping) {
    ordered_json report;
    report["metadata"] = {
        {"granularity", "round"},
        {"mapping", std::string(to_string(mapping))},
        {"note",
         "percentages are over scored rounds (one judged conversation each), not instances; "
         "unscored rounds are excluded from the denominator"}};
    ordered_json jrows = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json row;
        row["corpus"] = r.corpus;
        row["task"] = to_string(r.task);
        row["engine_label"] = r.engine_label;
        row["judge_model"] = r.judge_model;
        ordered_json counts;
        ordered_json percentages;
        for (int l = kQualityLevels - 1; l >= 0; --l) {
            counts[std::to_string(l)] = r.distribution.counts[l];
            percentages[std::to_string(l)] = round_half_up_2(r.distribution.percentages[l]);
        }
        row["counts"] = std::move(counts);
        row["percentages"] = std::move(percentages);
        row["unscored"] = r.unscored;
        jrows.push_back(std::move(row));
    }
    report["rows"] = std::move(jrows);
    return report;
}

std::string report_to_table(std::span<const ReportRow> rows) {
    std::vector<std::string> labels;
    std::size_t label_width = std::string_view("Evaluation Overview").size();
    for (const auto& r : rows) {
        labels.push_back(r.judge_model + " eval " + r.engine_label);
        label_width = std::max(label_width, labels.back().size());
    }
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(label_width) + 2) << "Evaluation Overview"
        << std::setw(13) << "Task" << std::setw(18) << "Quality Level (%)";
    for (int l = kQualityLevels - 1; l >= 0; --l) out << std::right << std::setw(8) << l;
    out << std::right << std::setw(10) << "unscored" << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        out << std::left << std::setw(static_cast<int>(label_width) + 2) << labels[i]
            << std::setw(13) << task_label(r.task) << std::setw(18) << r.corpus;
        for (int l = kQualityLevels - 1; l >= 0; --l) {
            out << std::right << std::setw(8) << display_percentage(r.distribution.percentages[l]);
        }
        out << std::right << std::setw(10) << r.unscored << '\n';
    }
    return out.str();
}

}  // namespace ehrnip
