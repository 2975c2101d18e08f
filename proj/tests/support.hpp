#pragma once

#include "ehrnip/core_model.hpp"
#include "ehrnip/model_backend.hpp"
#include "ehrnip/prompt_composer.hpp"

#include <unistd.h>

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef EHRNIP_SOURCE_DIR
#error "EHRNIP_SOURCE_DIR must point at the repository root"
#endif

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(EHRNIP_SOURCE_DIR); }
inline fs::path fixture(const std::string& name) { return source_dir() / "fixtures" / name; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("ehrnip-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

/// Small deterministic generator for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    std::uint64_t next() { return rng_(); }
    int range(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool coin() { return range(0, 1) == 1; }

    /// Printable ASCII plus some braces, quotes, newlines and multi-byte text.
    /// With `placeholders`, literal "{note}"-style names can appear too.
    std::string text(int max_len, bool placeholders = true) {
        static const std::vector<std::string> atoms = {
            "a", "b", "Z", "0", " ", "\n", "{", "}", "\"", "\\", ":", ",", "é", "中", "dose",
            "INR", "?", "{note}", "{request}", "{response}"};
        const int last = placeholders ? 19 : 16;
        std::string s;
        const int n = range(0, max_len);
        for (int i = 0; i < n; ++i) s += atoms[static_cast<std::size_t>(range(0, last))];
        return s;
    }

    std::string word_text(int min_words, int max_words) {
        static const std::vector<std::string> words = {"blood", "clot", "dose", "heart", "sugar",
                                                       "pill",  "walk", "eye",  "lung",  "stone"};
        std::string s;
        const int n = range(min_words, max_words);
        for (int i = 0; i < n; ++i) {
            if (i) s += ' ';
            s += words[static_cast<std::size_t>(range(0, 9))];
        }
        return s;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

inline ehrnip::EhrNote sample_note(std::string id = "note-001") {
    return {std::move(id), ehrnip::Corpus::Fixture,
            "Discharge Instructions: Your INR was high, so warfarin was held. "
            "Use the incentive spirometer ten times every hour while awake."};
}

inline ehrnip::ScriptedBackend simulated_backend(
    std::string judge_reply = std::string(ehrnip::kExampleJudgeReply)) {
    return ehrnip::ScriptedBackend([judge_reply](const ehrnip::ChatRequest& r) {
        return ehrnip::simulated_reply(r, judge_reply);
    });
}

/// Reference chain built by plain concatenation:
/// t1 + note + t2 + x1, then t3 + y(k-1) + t4 + x(k) for every later round.
inline std::string naive_chain(const std::string& t1, const std::string& t2,
                               const std::string& t3, const std::string& t4,
                               const std::string& note, const std::vector<std::string>& requests,
                               const std::vector<std::string>& responses) {
    std::string out = t1 + note + t2 + requests.at(0);
    for (std::size_t k = 1; k < requests.size(); ++k) {
        out += t3 + responses.at(k - 1) + t4 + requests[k];
    }
    return out;
}

struct FuzzCase {
    std::string raw;
    ehrnip::TaskKind task = ehrnip::TaskKind::QA;
    /// Set for well-formed cases: the payload that must come back.
    std::optional<std::string> expected;
};

/// 500 patient outputs: 200 well-formed (plain, fenced, prose-wrapped
/// dictionaries) followed by 300 malformed ones (wrong keys, junk, broken
/// nesting, invalid bytes).
inline std::vector<FuzzCase> patient_fuzz_corpus(std::uint64_t seed = 77) {
    Gen g(seed);
    std::vector<FuzzCase> out;
    const auto payload = [&] {
        std::string p = g.word_text(1, 12);
        static const std::vector<std::string> extras = {"?", " \"INR\"", " 10 times/hour", " é",
                                                        " {ok}", " a\\b", "\ttab", " 中文"};
        if (g.coin()) p += extras[static_cast<std::size_t>(g.range(0, 7))];
        return p;
    };
    for (int i = 0; i < 200; ++i) {
        FuzzCase c;
        c.task = g.coin() ? ehrnip::TaskKind::QA : ehrnip::TaskKind::Explanation;
        const std::string key = c.task == ehrnip::TaskKind::QA ? "question" : "content";
        const auto value = payload();
        const std::string dict = nlohmann::json{{key, value}}.dump();
        switch (i % 3) {
            case 0: c.raw = dict; break;
            case 1: c.raw = "```json\n" + dict + "\n```"; break;
            default: c.raw = "Sure, here it is: " + dict + " Let me know if you need more."; break;
        }
        c.expected = value;
        out.push_back(std::move(c));
    }
    for (int i = 0; i < 300; ++i) {
        FuzzCase c;
        c.task = g.coin() ? ehrnip::TaskKind::QA : ehrnip::TaskKind::Explanation;
        switch (i % 10) {
            case 0: c.raw = nlohmann::json{{"answer", payload()}}.dump(); break;
            case 1: c.raw = g.text(40); break;
            case 2: c.raw = std::string(static_cast<std::size_t>(g.range(1, 4000)), '{'); break;
            case 3: c.raw = R"({"question": )" + std::to_string(g.range(0, 99)) + "}"; break;
            case 4: c.raw = R"({"question": "", "content": "  "})"; break;
            case 5: {
                std::string bytes;
                for (int b = 0; b < 30; ++b) bytes.push_back(static_cast<char>(g.range(0, 255)));
                c.raw = bytes;
                break;
            }
            case 6: c.raw = R"({"question": "unterminated)"; break;
            case 7: c.raw = "[\"question\", \"" + payload() + "\"]"; break;
            case 8: c.raw = ""; break;
            default: c.raw = R"({"q": {"question": )" + g.text(10) + "}"; break;
        }
        out.push_back(std::move(c));
    }
    return out;
}

/// Judge replies with arbitrary numbers, strings and missing keys.
inline std::vector<std::string> judge_fuzz_corpus(int n, std::uint64_t seed = 99) {
    Gen g(seed);
    std::vector<std::string> out;
    const char* keys[] = {"Relevance", "Factuality", "Sufficiency", "Concision", "Fluent"};
    for (int i = 0; i < n; ++i) {
        std::string s = g.coin() ? "Scores: {" : "{";
        for (int k = 0; k < 5; ++k) {
            if (g.range(0, 9) == 0) continue;
            if (k) s += ", ";
            s += "\"" + std::string(keys[k]) + "\": ";
            switch (g.range(0, 4)) {
                case 0: s += std::to_string(g.range(-1000, 1000)); break;
                case 1: s += std::to_string(static_cast<long long>(g.next() >> 1)); break;
                case 2: s += std::to_string(g.range(-20, 20)) + ".5"; break;
                case 3: s += "\"" + std::to_string(g.range(-9, 9)) + "\""; break;
                default: s += "1e300"; break;
            }
        }
        s += g.coin() ? "}" : "} trailing";
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace testsupport
