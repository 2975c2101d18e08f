#include "ehrnip/dataset_store.hpp"
#include "ehrnip/errors.hpp"
#include "ehrnip/evaluator.hpp"

#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace ehrnip;
namespace ts = testsupport;

namespace {

InteractionInstance qa_instance(int rounds) {
    InteractionInstance inst;
    inst.note_id = "note-001";
    inst.task = TaskKind::QA;
    inst.engine_label = "GPT-4 NIP";
    inst.instance_id = make_instance_id(inst.corpus, inst.note_id, inst.task, inst.engine_label);
    for (int k = 1; k <= rounds; ++k) {
        inst.rounds.push_back(
            {{TaskKind::QA, "Question " + std::to_string(k) + "?", k}, {"Answer " + std::to_string(k) + ".", k}, {}});
    }
    return inst;
}

std::array<std::size_t, kQualityLevels> by_level(std::size_t l5, std::size_t l4, std::size_t l3,
                                                 std::size_t l2, std::size_t l1, std::size_t l0) {
    return {l0, l1, l2, l3, l4, l5};
}

RoundEvaluation scored(int level) {
    RoundEvaluation e;
    e.quality = QualityLevel{level};
    e.scores = make_scores(level, level, level, level, level);
    return e;
}

}  // namespace

TEST_SUITE("evaluator") {

TEST_CASE("quality mappings") {
    CHECK(quality_from_scores({5, 5, 5, 5, 5}).level == 5);
    CHECK(quality_from_scores({4, 5, 5, 5, 5}).level == 4);
    CHECK(quality_from_scores({4, 5, 5, 5, 5}, QualityMapping::MeanFloored).level == 4);
    CHECK(quality_from_scores({4, 5, 4, 3, 5}).level == 3);
    CHECK(quality_from_scores({4, 5, 4, 3, 5}, QualityMapping::MeanFloored).level == 4);
    CHECK(quality_from_scores({0, 5, 5, 5, 5}, QualityMapping::MeanFloored).level == 4);
    CHECK(mapping_from_string("minimum") == QualityMapping::Minimum);
    CHECK(mapping_from_string("mean-floored") == QualityMapping::MeanFloored);
    CHECK_FALSE(mapping_from_string("median").has_value());
}

TEST_CASE("quality never drops when a criterion rises") {
    ts::Gen g(17);
    for (int i = 0; i < 2000; ++i) {
        std::array<int, 5> v{};
        for (auto& x : v) x = g.range(0, 5);
        auto raised = v;
        const auto which = static_cast<std::size_t>(g.range(0, 4));
        raised[which] = std::min(5, raised[which] + g.range(1, 5));
        const CriteriaScores a{v[0], v[1], v[2], v[3], v[4]};
        const CriteriaScores b{raised[0], raised[1], raised[2], raised[3], raised[4]};
        for (auto m : {QualityMapping::Minimum, QualityMapping::MeanFloored}) {
            const int qa = quality_from_scores(a, m).level;
            CHECK(quality_from_scores(b, m).level >= qa);
            CHECK(qa >= 0);
            CHECK(qa <= 5);
        }
        CHECK(quality_from_scores(a).level == *std::min_element(v.begin(), v.end()));
        CHECK(quality_from_scores(a, QualityMapping::MeanFloored).level ==
              std::accumulate(v.begin(), v.end(), 0) / 5);
    }
}

TEST_CASE("judge prompts carry the note once and earlier rounds as history") {
    const auto reg = TemplateRegistry::builtin();
    const auto note = ts::sample_note();
    const auto inst = qa_instance(3);
    const std::vector<std::string> replies{"r1", "r2"};
    const auto prompts = build_judge_prompts(note, inst, reg, replies);
    REQUIRE(prompts.size() == 3);
    for (const auto& p : prompts) {
        CHECK(p.system_text == reg.get(template_id::kJudgeSystem).body);
        CHECK(p.alternates());
    }
    CHECK(prompts[0].messages.size() == 1);
    CHECK(prompts[0].messages[0].text ==
          "Here is the medical note:\n" + note.text +
              "\nHere is the first conversation (explanation), try to be strict:\n"
              "Question: Question 1?\nAnswer: Answer 1.");
    REQUIRE(prompts[2].messages.size() == 5);
    CHECK(prompts[2].messages[1].text == "r1");
    CHECK(prompts[2].messages[3].text == "r2");
    CHECK(prompts[2].messages[4].text.starts_with("Here is another conversation"));
    CHECK(prompts[2].messages[4].text.ends_with("Question: Question 3?\nAnswer: Answer 3."));
    CHECK(prompts[2].messages[4].text.find(note.text) == std::string::npos);

    CHECK(build_judge_prompts(note, qa_instance(1), reg).size() == 1);
    CHECK_THROWS_AS(build_judge_prompt(note, inst, 4, replies, reg), RoundIndexError);
    CHECK_THROWS_AS(build_judge_prompt(note, inst, 0, replies, reg), RoundIndexError);
}

TEST_CASE("explanation conversations are labelled as content") {
    DialogueRound r{{TaskKind::Explanation, "Your INR was high.", 1}, {"Your blood clots slowly.", 1}, {}};
    CHECK(render_conversation(TaskKind::Explanation, r) ==
          "Content: Your INR was high.\nExplanation: Your blood clots slowly.");
}

TEST_CASE("scripted judge scores every round") {
    const auto reg = TemplateRegistry::builtin();
    ScriptedBackend b(std::vector<ScriptStep>(3, ScriptStep::reply(std::string(kExampleJudgeReply))));
    EvaluatorConfig config;
    const auto evals = evaluate_instance(ts::sample_note(), qa_instance(3), b, config, reg);
    REQUIRE(evals.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(evals[k].round_index == k + 1);
        CHECK(evals[k].scores == CriteriaScores{4, 5, 4, 3, 5});
        CHECK(evals[k].quality == QualityLevel{3});
        CHECK_FALSE(evals[k].unscored);
        CHECK(evals[k].judge_model == "gpt-4");
    }
    const auto log = b.call_log();
    CHECK(log[0].temperature == 0.0);
    CHECK(log[0].model_name == "gpt-4");
    CHECK(log[2].prompt.messages[1].text == kExampleJudgeReply);
}

TEST_CASE("an unparseable judge reply leaves only that round unscored") {
    const auto reg = TemplateRegistry::builtin();
    const std::string good(kExampleJudgeReply);
    ScriptedBackend b({ScriptStep::reply(good), ScriptStep::reply("I refuse."),
                       ScriptStep::reply("Still refusing."), ScriptStep::reply(good)});
    std::vector<std::string> logged;
    EvaluatorConfig config;
    config.log = [&](std::string_view line) { logged.emplace_back(line); };
    const auto evals = evaluate_instance(ts::sample_note(), qa_instance(3), b, config, reg);
    REQUIRE(evals.size() == 3);
    CHECK_FALSE(evals[0].unscored);
    CHECK(evals[1].unscored);
    CHECK_FALSE(evals[1].quality.has_value());
    CHECK(evals[1].raw_judge_text == "Still refusing.");
    CHECK(evals[1].error.find("JudgeParseError") != std::string::npos);
    CHECK_FALSE(evals[2].unscored);
    CHECK(b.call_count() == 4);
    CHECK(logged.size() == 1);

    const auto d = aggregate_distribution(evals);
    CHECK(d.total() == 2);
    CHECK(d.percentages[3] == doctest::Approx(100.0));
}

TEST_CASE("provider failure on the judge is recorded") {
    const auto reg = TemplateRegistry::builtin();
    ScriptedBackend b({ScriptStep::fail(500), ScriptStep::reply(std::string(kExampleJudgeReply))});
    const auto evals = evaluate_instance(ts::sample_note(), qa_instance(2), b, {}, reg);
    CHECK(evals[0].unscored);
    CHECK(evals[0].error.starts_with("ProviderError"));
    CHECK_FALSE(evals[1].unscored);
}

TEST_CASE("errored instances are skipped") {
    const auto reg = TemplateRegistry::builtin();
    auto inst = qa_instance(1);
    inst.error = "round 2 patient request: x";
    ScriptedBackend b(std::vector<ScriptStep>{});
    CHECK(evaluate_instance(ts::sample_note(), inst, b, {}, reg).empty());
    CHECK(b.call_count() == 0);
}

TEST_CASE("distribution arithmetic") {
    const std::vector<RoundEvaluation> evals{scored(5), scored(5), scored(5), scored(4)};
    const auto d = aggregate_distribution(evals);
    CHECK(display_percentage(d.percentages[5]) == "75.00");
    CHECK(display_percentage(d.percentages[4]) == "25.00");
    for (int l = 0; l < 4; ++l) CHECK(d.percentages[l] == 0.0);

    CHECK_THROWS_AS(aggregate_distribution(std::vector<RoundEvaluation>{}), EmptyEvaluationSet);
    RoundEvaluation un;
    un.unscored = true;
    CHECK_THROWS_AS(aggregate_distribution(std::vector<RoundEvaluation>{un}), EmptyEvaluationSet);
}

TEST_CASE("human evaluation rows reproduce") {
    const auto check_row = [](std::array<std::size_t, kQualityLevels> counts,
                              std::array<double, kQualityLevels> expected_5_to_0) {
        const auto d = distribution_from_counts(counts);
        for (int l = 5; l >= 0; --l) {
            const double shown = std::stod(display_percentage(d.percentages[l]));
            CHECK(std::abs(shown - expected_5_to_0[5 - l]) <= 0.01);
            // Oracle: plain ratio.
            CHECK(d.percentages[l] ==
                  doctest::Approx(100.0 * static_cast<double>(counts[l]) / 99.0));
        }
    };
    check_row(by_level(95, 1, 1, 0, 2, 0), {95.96, 1.01, 1.01, 0, 2.02, 0});
    check_row(by_level(80, 12, 4, 1, 1, 1), {80.81, 12.12, 4.04, 1.01, 1.01, 1.01});
}

TEST_CASE("distribution conservation") {
    ts::Gen g(31);
    for (int i = 0; i < 300; ++i) {
        std::vector<RoundEvaluation> evals;
        std::size_t scored_n = 0;
        const int n = g.range(1, 60);
        for (int k = 0; k < n; ++k) {
            if (g.range(0, 5) == 0) {
                RoundEvaluation u;
                u.unscored = true;
                evals.push_back(u);
            } else {
                evals.push_back(scored(g.range(0, 5)));
                ++scored_n;
            }
        }
        if (scored_n == 0) {
            CHECK_THROWS_AS(aggregate_distribution(evals), EmptyEvaluationSet);
            continue;
        }
        const auto d = aggregate_distribution(evals);
        CHECK(d.total() == scored_n);
        const double sum = std::accumulate(d.percentages.begin(), d.percentages.end(), 0.0);
        CHECK(std::abs(sum - 100.0) <= 0.01);
    }
}

TEST_CASE("half-up display rounding") {
    CHECK(display_percentage(2.675) == "2.68");
    CHECK(display_percentage(1.005) == "1.01");
    CHECK(display_percentage(0.0) == "0.00");
    CHECK(display_percentage(100.0 * 2 / 99) == "2.02");
}

TEST_CASE("report json and table") {
    ReportRow row;
    row.corpus = "fixture";
    row.engine_label = "GPT-4 NIP";
    row.judge_model = "gpt-4";
    row.distribution = distribution_from_counts(by_level(95, 1, 1, 0, 2, 0));
    row.unscored = 1;
    const std::vector<ReportRow> rows{row};
    const auto j = report_to_json(rows, QualityMapping::Minimum);
    CHECK(j["metadata"]["granularity"] == "round");
    CHECK(j["metadata"]["mapping"] == "min");
    CHECK(j["rows"][0]["counts"]["5"] == 95);
    CHECK(j["rows"][0]["percentages"]["5"].get<double>() == doctest::Approx(95.96));
    CHECK(j["rows"][0]["unscored"] == 1);
    CHECK(report_to_json(rows, QualityMapping::Minimum).dump() == j.dump());

    const auto table = report_to_table(rows);
    CHECK(table.find("Quality Level (%)") != std::string::npos);
    CHECK(table.find("gpt-4 eval GPT-4 NIP") != std::string::npos);
    CHECK(table.find("95.96") != std::string::npos);
    CHECK(table.find("2.02") != std::string::npos);
    CHECK(table == report_to_table(rows));
}

TEST_CASE("evaluation json roundtrip") {
    RoundEvaluation e = scored(4);
    e.instance_id = "x";
    e.round_index = 2;
    e.judge_model = "gpt-4";
    e.raw_judge_text = "{...}";
    CHECK(evaluation_from_json(nlohmann::json::parse(evaluation_to_json(e).dump())) == e);
    RoundEvaluation u;
    u.unscored = true;
    u.error = "JudgeParseError";
    CHECK(evaluation_from_json(nlohmann::json::parse(evaluation_to_json(u).dump())) == u);
}

TEST_CASE("judge fixture scores at the expected levels") {
    const auto reg = TemplateRegistry::builtin();
    const auto notes = load_notes(ts::fixture("judge_notes.jsonl"));
    const auto insts = load_instances(ts::fixture("judge_instances.jsonl"));
    for (auto mapping : {QualityMapping::Minimum, QualityMapping::MeanFloored}) {
        auto b = ts::simulated_backend();
        EvaluatorConfig config;
        config.mapping = mapping;
        std::vector<RoundEvaluation> all;
        for (const auto& inst : insts) {
            const auto note = std::find_if(notes.begin(), notes.end(),
                                           [&](const EhrNote& n) { return n.id == inst.note_id; });
            REQUIRE(note != notes.end());
            const auto evals = evaluate_instance(*note, inst, b, config, reg);
            all.insert(all.end(), evals.begin(), evals.end());
        }
        const auto d = aggregate_distribution(all);
        CHECK(d.total() == 4);
        CHECK(d.percentages[mapping == QualityMapping::Minimum ? 3 : 4] == doctest::Approx(100.0));
    }
}

}
