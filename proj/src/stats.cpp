#include "ehrnip/stats.hpp"

#include "ehrnip/errors.hpp"
#include "ehrnip/format.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <cstdint>
#include <tuple>

namespace ehrnip {

namespace {

std::string decode_base64(std::string_view in, const std::filesystem::path& path) {
    if (in.empty() || in.size() % 4 != 0) {
        throw VocabLoadError("bad base64 token in " + path.string());
    }
    std::string out(in.size() / 4 * 3, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(in.data()),
                                  static_cast<int>(in.size()));
    if (n < 0) throw VocabLoadError("bad base64 token in " + path.string());
    std::size_t padding = 0;
    for (auto it = in.rbegin(); it != in.rend() && *it == '='; ++it) ++padding;
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

}  // namespace

Tokenizer Tokenizer::load(const TokenizerSpec& spec) {
    if (spec.kind == TokenizerKind::Simple) return simple();
    if (!spec.vocab_path) throw VocabLoadError("bpe tokenizer needs a vocabulary file");
    const auto& path = *spec.vocab_path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VocabLoadError("cannot read vocabulary " + path.string());

    const bool tiktoken = path.extension() == ".tiktoken";
    auto vocab = std::make_shared<std::unordered_set<std::string>>();
    std::size_t max_len = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string token;
        if (tiktoken) {
            const auto space = line.find(' ');
            token = decode_base64(std::string_view(line).substr(0, space), path);
        } else {
            token = line;
        }
        if (token.empty()) continue;
        max_len = std::max(max_len, token.size());
        vocab->insert(std::move(token));
    }
    if (vocab->empty()) throw VocabLoadError("vocabulary " + path.string() + " is empty");

    Tokenizer t;
    t.kind_ = TokenizerKind::BpeVocabFile;
    t.vocab_ = std::move(vocab);
    t.max_token_bytes_ = max_len;
    return t;
}

std::size_t Tokenizer::count(std::string_view text) const {
    std::size_t n = 0;
    if (kind_ == TokenizerKind::Simple) {
        bool in_word = false;
        for (unsigned char c : text) {
            if (std::isspace(c)) {
                in_word = false;
            } else if (std::ispunct(c)) {
                ++n;
                in_word = false;
            } else {
                if (!in_word) ++n;
                in_word = true;
            }
        }
        return n;
    }
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t step = 1;
        for (std::size_t len = std::min(max_token_bytes_, text.size() - i); len > 0; --len) {
            if (vocab_->contains(std::string(text.substr(i, len)))) {
                step = len;
                break;
            }
        }
        i += step;
        ++n;
    }
    return n;
}

std::size_t count_tokens(std::string_view text, const TokenizerSpec& spec) {
    return Tokenizer::load(spec).count(text);
}

std::string_view to_string(Agent a) { return a == Agent::Patient ? "patient" : "assistant"; }

LengthSummary summarize_lengths(std::span<const std::size_t> lengths) {
    LengthSummary s;
    s.count = lengths.size();
    if (lengths.empty()) return s;
    std::vector<std::size_t> sorted(lengths.begin(), lengths.end());
    std::sort(sorted.begin(), sorted.end());
    // Integer sum, then one correctly rounded division.
    const auto sum = std::accumulate(sorted.begin(), sorted.end(), std::uint64_t{0});
    s.mean = static_cast<double>(sum) / static_cast<double>(sorted.size());
    const auto mid = sorted.size() / 2;
    s.median = sorted.size() % 2 == 1
                   ? static_cast<double>(sorted[mid])
                   : (static_cast<double>(sorted[mid - 1]) + static_cast<double>(sorted[mid])) / 2.0;
    return s;
}

std::string StatsRow::cell() const {
    std::ostringstream out;
    out << fixed2(mean) << " (";
    if (median == std::floor(median)) {
        out << static_cast<long long>(median);
    } else {
        out << std::fixed << std::setprecision(1) << median;
    }
    out << ')';
    return out.str();
}

std::vector<StatsRow> compute_stats(std::span<const InteractionInstance> instances,
                                    const Tokenizer& tokenizer) {
    using Key = std::tuple<std::string, TaskKind, std::string, Agent>;
    std::map<Key, std::vector<std::size_t>> groups;
    for (const auto& inst : instances) {
        if (inst.error) continue;
        const std::string corpus(to_string(inst.corpus));
        auto& patient = groups[{corpus, inst.task, inst.engine_label, Agent::Patient}];
        auto& assistant = groups[{corpus, inst.task, inst.engine_label, Agent::Assistant}];
        for (const auto& r : inst.rounds) {
            patient.push_back(tokenizer.count(r.request.payload));
            assistant.push_back(tokenizer.count(r.response.text));
        }
    }
    std::vector<StatsRow> rows;
    for (const auto& [key, lengths] : groups) {
        if (lengths.empty()) continue;
        const auto s = summarize_lengths(lengths);
        rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                        s.mean, s.median, s.count});
    }
    if (rows.empty()) throw EmptyCorpus();
    return rows;
}

nlohmann::ordered_json stats_to_json(std::span<const StatsRow> rows) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["corpus"] = r.corpus;
        j["task"] = to_string(r.task);
        j["engine_label"] = r.engine_label;
        j["agent"] = to_string(r.agent);
        j["mean"] = round_half_up_2(r.mean);
        j["median"] = r.median;
        j["count"] = r.count;
        j["cell"] = r.cell();
        out.push_back(std::move(j));
    }
    return out;
}

std::string stats_to_table(std::span<const StatsRow> rows) {
    std::ostringstream out;
    out << "avg. tokens length (median)\n";
    out << std::left << std::setw(18) << "corpus" << std::setw(13) << "task" << std::setw(16)
        << "engine" << std::setw(17) << "agent" << std::right << std::setw(16) << "tokens"
        << std::setw(8) << "n" << '\n';
    for (const auto& r : rows) {
        out << std::left << std::setw(18) << r.corpus << std::setw(13)
            << (r.task == TaskKind::QA ? "Q&A" : "Explanation") << std::setw(16) << r.engine_label
            << std::setw(17) << (r.agent == Agent::Patient ? "Patient Agent" : "Assistant Agent")
            << std::right << std::setw(16) << r.cell() << std::setw(8) << r.count << '\n';
    }
    return out.str();
}

}  // namespace ehrnip
