#include "ehrnip/dataset_store.hpp"
#include "ehrnip/errors.hpp"
#include "ehrnip/stats.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace ehrnip;
namespace ts = testsupport;

namespace {

/// Mean from an integer sum; median as the value minimising total absolute
/// deviation (odd counts) or the mean of the two candidates that tie (even).
std::pair<double, double> oracle(std::vector<std::size_t> v) {
    std::size_t sum = 0;
    for (auto x : v) sum += x;
    const double mean = static_cast<double>(sum) / static_cast<double>(v.size());
    const auto cost = [&](std::size_t m) {
        long long c = 0;
        for (auto x : v) c += std::llabs(static_cast<long long>(x) - static_cast<long long>(m));
        return c;
    };
    std::vector<std::size_t> minimisers;
    long long best = -1;
    for (auto m : v) {
        const auto c = cost(m);
        if (best < 0 || c < best) {
            best = c;
            minimisers = {m};
        } else if (c == best && std::find(minimisers.begin(), minimisers.end(), m) == minimisers.end()) {
            minimisers.push_back(m);
        }
    }
    const auto [lo, hi] = std::minmax_element(minimisers.begin(), minimisers.end());
    return {mean, (static_cast<double>(*lo) + static_cast<double>(*hi)) / 2.0};
}

InteractionInstance with_lengths(std::string engine, std::vector<int> patient, std::vector<int> assistant) {
    InteractionInstance inst;
    inst.note_id = "n";
    inst.engine_label = std::move(engine);
    for (std::size_t k = 0; k < patient.size(); ++k) {
        const auto words = [](int n) {
            std::string s;
            for (int i = 0; i < n; ++i) s += i ? " w" : "w";
            return s;
        };
        const int idx = static_cast<int>(k) + 1;
        inst.rounds.push_back({{TaskKind::QA, words(patient[k]), idx}, {words(assistant[k]), idx}, {}});
    }
    return inst;
}

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("simple tokenizer") {
    const auto t = Tokenizer::simple();
    CHECK(t.count("hello world") == 2);
    CHECK(t.count("") == 0);
    CHECK(t.count("   \n\t") == 0);
    CHECK(t.count("Take 2 tablets daily.") == 5);
    CHECK(t.count("INR: 3.5, high!") == 8);
    CHECK(t.count("café 中文") == 2);
}

TEST_CASE("simple counts are additive over whitespace joins") {
    ts::Gen g(44);
    const auto t = Tokenizer::simple();
    for (int i = 0; i < 500; ++i) {
        const auto a = g.text(40);
        const auto b = g.text(40);
        CHECK(t.count(a + " " + b) == t.count(a) + t.count(b));
        CHECK(t.count(a + "\n" + b) == t.count(a) + t.count(b));
    }
}

TEST_CASE("bpe vocabulary, plain and tiktoken") {
    ts::TempDir dir;
    ts::write_file(dir / "v.txt", "hel\nlo\nhello\nwor\nld\n");
    const auto plain = Tokenizer::load({TokenizerKind::BpeVocabFile, dir / "v.txt"});
    CHECK(plain.kind() == TokenizerKind::BpeVocabFile);
    CHECK(plain.count("hello") == 1);
    CHECK(plain.count("hellohel") == 2);
    CHECK(plain.count("world") == 2);
    CHECK(plain.count("helx") == 2);
    CHECK(plain.count("") == 0);

    // hello, " ", world
    ts::write_file(dir / "v.tiktoken", "aGVsbG8= 0\nIA== 1\nd29ybGQ= 2\n");
    const auto tk = Tokenizer::load({TokenizerKind::BpeVocabFile, dir / "v.tiktoken"});
    CHECK(tk.count("hello world") == 3);
    CHECK(tk.count("hello  world!") == 5);
    CHECK(count_tokens("hello world", {TokenizerKind::BpeVocabFile, dir / "v.tiktoken"}) == 3);
}

TEST_CASE("vocabulary load errors") {
    ts::TempDir dir;
    CHECK_THROWS_AS(Tokenizer::load({TokenizerKind::BpeVocabFile, dir / "none.txt"}), VocabLoadError);
    CHECK_THROWS_AS(Tokenizer::load({TokenizerKind::BpeVocabFile, std::nullopt}), VocabLoadError);
    ts::write_file(dir / "empty.txt", "");
    CHECK_THROWS_AS(Tokenizer::load({TokenizerKind::BpeVocabFile, dir / "empty.txt"}), VocabLoadError);
    ts::write_file(dir / "bad.tiktoken", "!!!! 0\n");
    CHECK_THROWS_AS(Tokenizer::load({TokenizerKind::BpeVocabFile, dir / "bad.tiktoken"}), VocabLoadError);
}

TEST_CASE("length summaries") {
    const std::vector<std::size_t> a{10, 14, 20};
    const auto s = summarize_lengths(a);
    CHECK(s.mean == doctest::Approx(44.0 / 3));
    CHECK(s.median == 14);
    CHECK(s.count == 3);
    StatsRow row;
    row.mean = s.mean;
    row.median = s.median;
    CHECK(row.cell() == "14.67 (14)");

    const std::vector<std::size_t> b{14, 14};
    row.mean = summarize_lengths(b).mean;
    row.median = summarize_lengths(b).median;
    CHECK(row.cell() == "14.00 (14)");

    const std::vector<std::size_t> c{13, 14};
    row.median = summarize_lengths(c).median;
    row.mean = summarize_lengths(c).mean;
    CHECK(row.cell() == "13.50 (13.5)");
}

TEST_CASE("summaries agree with the brute-force oracle") {
    ts::Gen g(1000);
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::size_t> v(static_cast<std::size_t>(g.range(1, 40)));
        for (auto& x : v) x = static_cast<std::size_t>(g.range(0, 200));
        const auto [mean, median] = oracle(v);
        const auto s = summarize_lengths(v);
        CHECK(s.mean == doctest::Approx(mean));
        CHECK(s.median == median);

        auto shuffled = v;
        std::shuffle(shuffled.begin(), shuffled.end(), g.engine());
        const auto t = summarize_lengths(shuffled);
        CHECK(t.mean == doctest::Approx(s.mean));
        CHECK(t.median == s.median);
    }
}

TEST_CASE("fixture statistics match the golden table") {
    const auto insts = load_instances(ts::fixture("stats_instances.jsonl"));
    const auto rows = compute_stats(insts, Tokenizer::simple());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].agent == Agent::Patient);
    CHECK(rows[0].cell() == "14.64 (14)");
    CHECK(rows[0].count == 75);
    CHECK(rows[1].agent == Agent::Assistant);
    CHECK(rows[1].cell() == "32.92 (33)");
    CHECK(stats_to_table(rows) == ts::read_file(ts::fixture("stats_table.golden.txt")));

    // Patient-length oracle from the fixture's own make-up: 20x13, 40x14, 13x18, 2x22.
    std::vector<std::size_t> expected;
    for (auto [n, len] : {std::pair{20, 13}, {40, 14}, {13, 18}, {2, 22}}) {
        expected.insert(expected.end(), static_cast<std::size_t>(n), static_cast<std::size_t>(len));
    }
    std::vector<std::size_t> actual;
    for (const auto& inst : insts) {
        for (const auto& r : inst.rounds) actual.push_back(Tokenizer::simple().count(r.request.payload));
    }
    std::sort(actual.begin(), actual.end());
    CHECK(actual == expected);

    const auto j = stats_to_json(rows);
    CHECK(j[0]["cell"] == "14.64 (14)");
    CHECK(j[0]["agent"] == "patient");
    CHECK(j[1]["count"] == 75);
}

TEST_CASE("grouping, error exclusion and empty input") {
    std::vector<InteractionInstance> insts{with_lengths("A", {1, 3}, {10, 10}),
                                           with_lengths("B", {5}, {7})};
    auto errored = with_lengths("A", {100}, {100});
    errored.error = "round 2 patient request: x";
    insts.push_back(errored);
    const auto rows = compute_stats(insts, Tokenizer::simple());
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].engine_label == "A");
    CHECK(rows[0].cell() == "2.00 (2)");
    CHECK(rows[1].cell() == "10.00 (10)");
    CHECK(rows[2].engine_label == "B");
    CHECK(rows[2].cell() == "5.00 (5)");

    std::vector<InteractionInstance> reversed(insts.rbegin(), insts.rend());
    const auto again = compute_stats(reversed, Tokenizer::simple());
    CHECK(stats_to_table(again) == stats_to_table(rows));

    CHECK_THROWS_AS(compute_stats(std::vector<InteractionInstance>{}, Tokenizer::simple()), EmptyCorpus);
    CHECK_THROWS_AS(compute_stats(std::vector<InteractionInstance>{errored}, Tokenizer::simple()),
                    EmptyCorpus);
}

}
