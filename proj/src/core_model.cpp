#include "ehrnip/core_model.hpp"

#include "ehrnip/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <ctime>

namespace ehrnip {

std::string format_timestamp(Timestamp t) {
    const std::time_t secs = t.time_since_epoch().count();
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

Timestamp parse_timestamp(std::string_view text) {
    std::tm tm{};
    int consumed = 0;
    const std::string s(text);
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2dZ%n", &tm.tm_year, &tm.tm_mon, &tm.tm_mday,
                    &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &consumed) != 6 ||
        consumed != static_cast<int>(s.size())) {
        throw Error("invalid RFC 3339 UTC timestamp: '" + s + "'");
    }
    if (tm.tm_mon < 1 || tm.tm_mon > 12 || tm.tm_mday < 1 || tm.tm_mday > 31 || tm.tm_hour > 23 ||
        tm.tm_min > 59 || tm.tm_sec > 60) {
        throw Error("timestamp field out of range: '" + s + "'");
    }
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    return Timestamp{std::chrono::seconds{timegm(&tm)}};
}

Timestamp utc_now() {
    return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
}

std::string_view to_string(Corpus c) {
    switch (c) {
        case Corpus::MimicDischarge: return "mimic_discharge";
        case Corpus::Made: return "made";
        case Corpus::Fixture: return "fixture";
        case Corpus::Interactive: return "interactive";
    }
    return "fixture";
}

std::optional<Corpus> corpus_from_string(std::string_view s) {
    for (auto c : {Corpus::MimicDischarge, Corpus::Made, Corpus::Fixture, Corpus::Interactive}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

std::string_view to_string(TaskKind t) {
    return t == TaskKind::QA ? "qa" : "explanation";
}

std::optional<TaskKind> task_from_string(std::string_view s) {
    if (s == "qa") return TaskKind::QA;
    if (s == "explanation") return TaskKind::Explanation;
    return std::nullopt;
}

namespace {

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

void check_note(const EhrNote& note) {
    if (note.id.empty()) throw ConfigError("note id must not be empty");
    if (is_blank(note.text)) throw ConfigError("note '" + note.id + "' has empty text");
}

std::string make_instance_id(Corpus corpus, std::string_view note_id, TaskKind task,
                             std::string_view engine_label) {
    std::string id;
    id.append(to_string(corpus)).append(":").append(note_id).append(":");
    id.append(to_string(task)).append(":").append(engine_label);
    return id;
}

std::vector<std::string> validate_instance(const InteractionInstance& instance,
                                           std::optional<int> expected_rounds) {
    std::vector<std::string> violations;
    if (instance.instance_id.empty()) violations.emplace_back("empty instance_id");
    if (instance.note_id.empty()) violations.emplace_back("empty note_id");

    bool gap_reported = false;
    for (std::size_t i = 0; i < instance.rounds.size(); ++i) {
        const auto& round = instance.rounds[i];
        const int want = static_cast<int>(i) + 1;
        if (round.request.round_index != want && !gap_reported) {
            violations.push_back("non-consecutive rounds: expected round_index " +
                                 std::to_string(want) + ", found " +
                                 std::to_string(round.request.round_index));
            gap_reported = true;
        }
        if (round.request.round_index != round.response.round_index) {
            violations.push_back("round " + std::to_string(want) +
                                 ": request/response round_index mismatch");
        }
        if (round.request.kind != instance.task) {
            violations.push_back("round " + std::to_string(want) + ": task differs from instance");
        }
        if (is_blank(round.request.payload)) {
            violations.push_back("round " + std::to_string(want) + ": empty request payload");
        }
        if (is_blank(round.response.text)) {
            violations.push_back("round " + std::to_string(want) + ": empty response text");
        }
    }

    if (!instance.error && expected_rounds &&
        static_cast<int>(instance.rounds.size()) != *expected_rounds) {
        violations.push_back("round count " + std::to_string(instance.rounds.size()) +
                             " != " + std::to_string(*expected_rounds));
    }
    return violations;
}

int clamp_score(long long raw) noexcept {
    return static_cast<int>(std::clamp<long long>(raw, 0, 5));
}

CriteriaScores make_scores(long long relevance, long long factuality, long long sufficiency,
                           long long concision, long long fluency) noexcept {
    return {clamp_score(relevance), clamp_score(factuality), clamp_score(sufficiency),
            clamp_score(concision), clamp_score(fluency)};
}

}  // namespace ehrnip
