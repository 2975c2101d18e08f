#include "ehrnip/errors.hpp"
#include "ehrnip/prompt_composer.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace ehrnip;
namespace ts = testsupport;

namespace {

ChainTemplates stub_chain(const std::string& t1, const std::string& t2, const std::string& t3,
                          const std::string& t4) {
    return {t1 + "{note}", t2 + "{request}", t3 + "{response}", t4 + "{request}"};
}

const TemplateRegistry& reg() {
    static const auto r = TemplateRegistry::builtin();
    return r;
}

std::string body(std::string_view id) { return reg().get(id).body; }

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
    const auto at = s.find(from);
    REQUIRE(at != std::string::npos);
    return s.replace(at, from.size(), to);
}

}  // namespace

TEST_SUITE("prompt_composer") {

TEST_CASE("system prompt layout") {
    const EhrNote note{"n1", Corpus::Fixture, "X"};
    CHECK(render_system_prompt(note, reg()) == "Reference Content Including\nMedical Notes:\nX");
    CHECK(render_system_prompt({"n2", Corpus::Fixture, "a"}, reg()) ==
          "Reference Content Including\nMedical Notes:\na");
}

TEST_CASE("placeholder text inside a note is not expanded") {
    const EhrNote note{"n1", Corpus::Fixture, "see {note} and {request}"};
    CHECK(render_system_prompt(note, reg()) ==
          "Reference Content Including\nMedical Notes:\nsee {note} and {request}");
}

TEST_CASE("substitute passes unknown braces through") {
    const std::pair<std::string_view, std::string_view> v[] = {{"a", "1"}};
    CHECK(substitute("{a}{b}{{a}}{", v) == "1{b}{1}{");
}

TEST_CASE("stub chain expands by concatenation") {
    const auto chain = stub_chain("A:", "B:", "C:", "D:");
    const EhrNote note{"n", Corpus::Fixture, "n"};
    const auto p1 = compose_initial(note, {TaskKind::QA, "q", 1}, chain);
    CHECK(p1.flatten() == "A:nB:q");

    const auto p1b = compose_initial(note, {TaskKind::QA, "q1", 1}, chain);
    const auto p2 = compose_followup(p1b, {"r1", 1}, {TaskKind::QA, "q2", 2}, chain);
    CHECK(p2.flatten() == "A:nB:q1C:r1D:q2");
    CHECK(p2.alternates());
}

TEST_CASE("random chains match the concatenation oracle") {
    ts::Gen g(20240601);
    for (int i = 0; i < 50; ++i) {
        const auto t1 = g.text(6, false), t2 = g.text(6, false), t3 = g.text(6, false),
                   t4 = g.text(6, false);
        const auto chain = stub_chain(t1, t2, t3, t4);
        const EhrNote note{"n", Corpus::Fixture, g.text(20)};
        const int rounds = g.range(1, 6);
        std::vector<std::string> requests, responses;
        for (int k = 0; k < rounds; ++k) {
            requests.push_back(g.text(10));
            responses.push_back(g.text(10));
        }
        auto p = compose_initial(note, {TaskKind::QA, requests[0], 1}, chain);
        std::size_t last_len = p.flatten().size();
        for (int k = 2; k <= rounds; ++k) {
            p = compose_followup(p, {responses[static_cast<std::size_t>(k - 2)], k - 1},
                                 {TaskKind::QA, requests[static_cast<std::size_t>(k - 1)], k}, chain);
            CHECK(p.flatten().size() >= last_len);
            last_len = p.flatten().size();
        }
        CHECK(p.flatten() == ts::naive_chain(t1, t2, t3, t4, note.text, requests, responses));
        CHECK(p.alternates());
    }
}

TEST_CASE("QA initial uses the assistant QA template") {
    const auto note = ts::sample_note();
    const std::string q = "Why do I need an incentive spirometer?";
    const auto p = compose_initial(note, {TaskKind::QA, q, 1}, reg());
    REQUIRE(p.messages.size() == 1);
    CHECK(p.system_text == render_system_prompt(note, reg()));
    CHECK(p.messages[0].role == MessageRole::User);
    CHECK(p.messages[0].text ==
          replace_once(body(template_id::kAssistantInitialQa), "{request}", q));
    CHECK(p.messages[0].text.starts_with("Here is the question:\n" + q + "\n"));
    CHECK(p.messages[0].text.find("Answer the question based on the reference content") !=
          std::string::npos);
}

TEST_CASE("explanation initial and follow-ups") {
    const auto note = ts::sample_note();
    const std::string s1 = "Your INR was high, so warfarin was held.";
    const auto p1 = compose_initial(note, {TaskKind::Explanation, s1, 1}, reg());
    CHECK(p1.messages[0].text.starts_with("Here is the origin content from the medical note:\n" + s1));

    const auto p2 = compose_followup(p1, {"It means your blood was thin.", 1},
                                     {TaskKind::Explanation, "Use the incentive spirometer.", 2},
                                     reg());
    REQUIRE(p2.messages.size() == 3);
    CHECK(p2.messages[1].role == MessageRole::Assistant);
    CHECK(p2.messages[1].text == "It means your blood was thin.");
    CHECK(p2.messages[2].text.starts_with(
        "Here is annother origin content from the medical note:\n"));

    const auto q1 = compose_initial(note, {TaskKind::QA, "q1", 1}, reg());
    const auto q2 = compose_followup(q1, {"a1", 1}, {TaskKind::QA, "q2", 2}, reg());
    CHECK(q2.messages[2].text.starts_with("Here is another question:\nq2"));
}

TEST_CASE("round index contract") {
    const auto note = ts::sample_note();
    CHECK_THROWS_AS(compose_initial(note, {TaskKind::QA, "q", 2}, reg()), RoundIndexError);
    const auto p1 = compose_initial(note, {TaskKind::QA, "q1", 1}, reg());
    CHECK_THROWS_AS(compose_followup(p1, {"a1", 1}, {TaskKind::QA, "q", 1}, reg()),
                    RoundIndexError);
    CHECK_THROWS_AS(compose_followup(p1, {"a1", 2}, {TaskKind::QA, "q", 3}, reg()),
                    RoundIndexError);
    CHECK_THROWS_AS(compose_followup(p1, {"a0", 0}, {TaskKind::QA, "q", 2}, reg()) ,
                    RoundIndexError);
}

TEST_CASE("composition is deterministic") {
    const auto note = ts::sample_note();
    const auto a = compose_initial(note, {TaskKind::QA, "q", 1}, reg());
    const auto b = compose_initial(note, {TaskKind::QA, "q", 1}, reg());
    CHECK(a.flatten() == b.flatten());
}

TEST_CASE("patient prompt with no history") {
    const auto p = compose_patient_prompt(ts::sample_note(), TaskKind::QA, {}, reg());
    REQUIRE(p.messages.size() == 1);
    CHECK(p.messages[0].text == body(template_id::kPatientInitialQa));
    CHECK(p.messages[0].text.ends_with(
        "Provide your response solely in the dictionary without any additional text."));
}

TEST_CASE("patient prompt with one prior round") {
    const std::vector<DialogueRound> prior = {{{TaskKind::QA, "q1", 1}, {"a1", 1}, {}}};
    const auto p = compose_patient_prompt(ts::sample_note(), TaskKind::QA, prior, reg());
    REQUIRE(p.messages.size() == 3);
    CHECK(p.messages[0].text == body(template_id::kPatientInitialQa));
    CHECK(p.messages[1].role == MessageRole::Assistant);
    CHECK(p.messages[1].text == R"({"question": "q1"})");
    CHECK(p.messages[2].text == replace_once(body(template_id::kPatientFollowupQa), "{response}", "a1"));
    CHECK(p.messages[2].text.starts_with(
        "Here is the answer for the question that mentioned above:\na1\n"));
    CHECK(p.alternates());

    const std::vector<DialogueRound> ex = {{{TaskKind::Explanation, "s \"1\"", 1}, {"e1", 1}, {}}};
    const auto pe = compose_patient_prompt(ts::sample_note(), TaskKind::Explanation, ex, reg());
    CHECK(pe.messages[1].text == R"({"content": "s \"1\""})");
    CHECK(pe.messages[2].text.starts_with(
        "Here is the explanation for the content that mentioned above:\ne1\n"));
}

TEST_CASE("patient prompt rejects gaps") {
    const std::vector<DialogueRound> prior = {{{TaskKind::QA, "q1", 1}, {"a1", 1}, {}},
                                              {{TaskKind::QA, "q3", 3}, {"a3", 3}, {}}};
    CHECK_THROWS_AS(compose_patient_prompt(ts::sample_note(), TaskKind::QA, prior, reg()),
                    RoundIndexError);
}

TEST_CASE("registry covers twelve ids with declared placeholders once each") {
    CHECK(reg().templates().size() == 12);
    for (const auto id : template_id::kAll) {
        const auto& t = reg().get(id);
        for (const auto& name : t.placeholders) {
            const auto token = "{" + name + "}";
            const auto first = t.body.find(token);
            REQUIRE(first != std::string::npos);
            CHECK(t.body.find(token, first + 1) == std::string::npos);
        }
    }
    CHECK(reg().get(template_id::kSystem).role_slot == RoleSlot::System);
    CHECK(reg().get(template_id::kJudgeSystem).role_slot == RoleSlot::System);
    CHECK_THROWS_AS(reg().get("nope"), ConfigError);
}

TEST_CASE("shipped template files equal the compiled-in texts") {
    const auto dir = ts::source_dir() / "templates";
    for (const auto id : template_id::kAll) {
        CHECK_MESSAGE(ts::read_file(dir / (std::string(id) + ".txt")) == body(id), id);
    }
    const auto loaded = TemplateRegistry::load_directory(dir);
    CHECK(loaded.templates() == reg().templates());
    CHECK(ts::read_file(dir / "MANIFEST") == reg().manifest_text());
    CHECK(loaded.checksum() == sha256_hex(ts::read_file(dir / "MANIFEST")));
}

TEST_CASE("tampered template directory is rejected") {
    ts::TempDir tmp;
    reg().write_directory(tmp.path());
    CHECK_NOTHROW(TemplateRegistry::load_directory(tmp.path()));
    ts::write_file(tmp / "judge_user_2.txt", body(template_id::kJudgeUser2) + " ");
    CHECK_THROWS_AS(TemplateRegistry::load_directory(tmp.path()), ConfigError);
}

TEST_CASE("fidelity strings") {
    CHECK(body(template_id::kPatientInitialQa)
              .starts_with("Try to mock as the a patient and ask one question"));
    CHECK(body(template_id::kAssistantInitialQa).find("Mark answers you are not sure about") !=
          std::string::npos);
    CHECK(body(template_id::kJudgeSystem)
              .find("Try not give full credits, full credits means perfect.") != std::string::npos);
    CHECK(body(template_id::kJudgeSystem).find("Each irrelevant sentence results a deduction of 1 point") !=
          std::string::npos);
    CHECK(body(template_id::kJudgeSystem).find("devoid of unnecessary conversation and filler words") !=
          std::string::npos);
    CHECK(body(template_id::kJudgeUser1).find("try to be strict") != std::string::npos);
    CHECK(body(template_id::kJudgeUser2).find("try to be strict") != std::string::npos);
}

TEST_CASE("normalized registry only fixes the known typos") {
    const auto n = TemplateRegistry::builtin(true);
    CHECK(n.get(template_id::kPatientInitialQa).body.find("as the a patient") == std::string::npos);
    CHECK(n.get(template_id::kAssistantFollowupExplanation).body.find("annother") ==
          std::string::npos);
    CHECK(n.get(template_id::kJudgeSystem).body == body(template_id::kJudgeSystem));
    CHECK(n.checksum() != reg().checksum());
}

TEST_CASE("assistant prompt rebuilt from rounds equals the incremental chain") {
    const auto note = ts::sample_note();
    std::vector<DialogueRound> rounds = {{{TaskKind::QA, "q1", 1}, {"a1", 1}, {}},
                                         {{TaskKind::QA, "q2", 2}, {"a2", 2}, {}}};
    const auto p1 = compose_initial(note, rounds[0].request, reg());
    const auto p2 = compose_followup(p1, rounds[0].response, rounds[1].request, reg());
    const PatientRequest q3{TaskKind::QA, "q3", 3};
    const auto p3 = compose_followup(p2, rounds[1].response, q3, reg());
    CHECK(compose_assistant_prompt(note, rounds, q3, reg()) == p3);
    CHECK_THROWS_AS(compose_assistant_prompt(note, rounds, {TaskKind::QA, "q", 2}, reg()),
                    RoundIndexError);
}

}
