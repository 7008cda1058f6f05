#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "blockdiff/categorical.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/vocab.hpp"

namespace blockdiff {

// Explicit joint distribution over length-L sequences of non-MASK tokens.
// Immutable after construction; every query is read-only.
class TabularJoint {
public:
    static constexpr double kFeasibleStates = 1e6;

    TabularJoint(Vocabulary vocab, int length, std::vector<std::pair<TokenSeq, double>> entries)
        : vocab_(vocab), length_(length) {
        vocab_.validate();
        if (length_ < 1) throw std::invalid_argument("TabularJoint: length must be positive");
        // Feasibility is judged on what queries actually enumerate: the
        // stored support and the packed sequence keys. Dense constructions
        // additionally bound |V|^L (see random_joint).
        if (length_ * std::log2(static_cast<double>(vocab_.size)) > 62.0)
            throw std::invalid_argument("TabularJoint: |V|^L exceeds the key space");
        if (static_cast<double>(entries.size()) > kFeasibleStates)
            throw std::invalid_argument("TabularJoint: support exceeds the tractability bound");
        double total = 0.0;
        for (auto& [seq, prob] : entries) {
            if (static_cast<int>(seq.size()) != length_) throw std::invalid_argument("TabularJoint: sequence length mismatch");
            validate_tokens(seq, vocab_);
            if (has_mask(seq, vocab_)) throw std::invalid_argument("TabularJoint: sequences must not contain MASK");
            if (prob < 0.0) throw std::invalid_argument("TabularJoint: probabilities must be nonnegative");
            total += prob;
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("TabularJoint: probabilities must sum to 1");
        std::unordered_map<std::uint64_t, double> dedup;
        for (auto& [seq, prob] : entries) {
            if (prob > 0.0) dedup[encode(seq)] += prob;
        }
        support_.assign(dedup.begin(), dedup.end());
        std::sort(support_.begin(), support_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    }

    // Normalizes weights; used by the text loader and the random generator.
    static TabularJoint from_weights(Vocabulary vocab, int length, std::vector<std::pair<TokenSeq, double>> entries) {
        double total = 0.0;
        for (const auto& [seq, w] : entries) {
            if (w < 0.0) throw std::invalid_argument("TabularJoint: weights must be nonnegative");
            total += w;
        }
        if (total <= 0.0) throw std::invalid_argument("TabularJoint: total weight must be positive");
        for (auto& [seq, w] : entries) w /= total;
        return TabularJoint(vocab, length, std::move(entries));
    }

    const Vocabulary& vocab() const { return vocab_; }
    int length() const { return length_; }
    const std::vector<std::pair<std::uint64_t, double>>& support() const { return support_; }

    std::uint64_t encode(const TokenSeq& seq) const {
        std::uint64_t key = 0;
        for (int i = length_ - 1; i >= 0; --i) key = key * static_cast<std::uint64_t>(vocab_.size) + seq[i];
        return key;
    }

    TokenSeq decode(std::uint64_t key) const {
        TokenSeq seq(length_);
        for (int i = 0; i < length_; ++i) {
            seq[i] = static_cast<Token>(key % static_cast<std::uint64_t>(vocab_.size));
            key /= static_cast<std::uint64_t>(vocab_.size);
        }
        return seq;
    }

    double prob(const TokenSeq& seq) const {
        const std::uint64_t key = encode(seq);
        auto it = std::lower_bound(support_.begin(), support_.end(), key,
                                   [](const auto& e, std::uint64_t k) { return e.first < k; });
        return (it != support_.end() && it->first == key) ? it->second : 0.0;
    }

    double entropy() const {
        double h = 0.0;
        for (const auto& [key, p] : support_) h -= p * std::log(p);
        return h;
    }

    // argmax sequence; ties resolve to the lexicographically smallest one.
    TokenSeq mode() const {
        std::uint64_t best_key = support_.front().first;
        double best_p = support_.front().second;
        for (const auto& [key, p] : support_) {
            if (p > best_p) {
                best_p = p;
                best_key = key;
            }
        }
        return decode(best_key);
    }

    Categorical marginal(int pos) const {
        if (pos < 0 || pos >= length_) throw std::out_of_range("TabularJoint: position out of range");
        Categorical out(vocab_.size);
        for (const auto& [key, p] : support_) out.p[token_at(key, pos)] += p;
        return out;
    }

    std::vector<Categorical> marginal_set() const {
        std::vector<Categorical> out;
        out.reserve(length_);
        for (int pos = 0; pos < length_; ++pos) out.push_back(marginal(pos));
        return out;
    }

    Token token_at(std::uint64_t key, int pos) const {
        for (int i = 0; i < pos; ++i) key /= static_cast<std::uint64_t>(vocab_.size);
        return static_cast<Token>(key % static_cast<std::uint64_t>(vocab_.size));
    }

    // One line per sequence: space-separated token ids, a TAB, the weight.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
        out << serialize();
    }

    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [key, p] : support_) {
            const TokenSeq seq = decode(key);
            for (int i = 0; i < length_; ++i) {
                if (i) out << ' ';
                out << seq[i];
            }
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", p);
            out << '\t' << buf << '\n';
        }
        return out.str();
    }

    static TabularJoint parse(const Vocabulary& vocab, std::string_view text) {
        std::vector<std::pair<TokenSeq, double>> entries;
        std::istringstream in{std::string(text)};
        std::string line;
        int expected_len = -1;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw std::invalid_argument("TabularJoint: expected tokens<TAB>probability");
            std::istringstream toks(line.substr(0, tab));
            TokenSeq seq;
            Token t;
            while (toks >> t) seq.push_back(t);
            if (seq.empty()) throw std::invalid_argument("TabularJoint: empty token list");
            if (expected_len < 0) expected_len = static_cast<int>(seq.size());
            const double w = std::stod(line.substr(tab + 1));
            entries.emplace_back(std::move(seq), w);
        }
        if (entries.empty()) throw std::invalid_argument("TabularJoint: no entries");
        return from_weights(vocab, expected_len, std::move(entries));
    }

    static TabularJoint load(const Vocabulary& vocab, const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(vocab, buf.str());
    }

private:
    Vocabulary vocab_;
    int length_;
    std::vector<std::pair<std::uint64_t, double>> support_;  // sorted by key
};

// Dense random joint over all content-token sequences, Exp(1) weights.
inline TabularJoint random_joint(const Vocabulary& vocab, int length, Rng& rng) {
    const auto content = vocab.content_tokens();
    const double states = std::pow(static_cast<double>(content.size()), length);
    if (states > TabularJoint::kFeasibleStates) throw std::invalid_argument("random_joint: content^L too large");
    const auto n = static_cast<std::uint64_t>(states + 0.5);
    std::vector<std::pair<TokenSeq, double>> entries;
    entries.reserve(n);
    TokenSeq seq(length, content.front());
    std::vector<int> digits(length, 0);
    for (std::uint64_t i = 0; i < n; ++i) {
        for (int j = 0; j < length; ++j) seq[j] = content[digits[j]];
        double u = rng.uniform01();
        while (u <= 0.0) u = rng.uniform01();
        entries.emplace_back(seq, -std::log(u));
        for (int j = 0; j < length; ++j) {
            if (++digits[j] < static_cast<int>(content.size())) break;
            digits[j] = 0;
        }
    }
    return TabularJoint::from_weights(vocab, length, std::move(entries));
}

// Product of independent per-position marginals with Exp(1) weights.
inline TabularJoint random_product_joint(const Vocabulary& vocab, int length, Rng& rng) {
    const auto content = vocab.content_tokens();
    std::vector<std::vector<double>> marg(length, std::vector<double>(content.size()));
    for (int pos = 0; pos < length; ++pos) {
        double total = 0.0;
        for (auto& w : marg[pos]) {
            double u = rng.uniform01();
            while (u <= 0.0) u = rng.uniform01();
            w = -std::log(u);
            total += w;
        }
        for (auto& w : marg[pos]) w /= total;
    }
    const double states = std::pow(static_cast<double>(content.size()), length);
    if (states > TabularJoint::kFeasibleStates) throw std::invalid_argument("random_product_joint: content^L too large");
    const auto n = static_cast<std::uint64_t>(states + 0.5);
    std::vector<std::pair<TokenSeq, double>> entries;
    entries.reserve(n);
    TokenSeq seq(length, content.front());
    std::vector<int> digits(length, 0);
    for (std::uint64_t i = 0; i < n; ++i) {
        double p = 1.0;
        for (int j = 0; j < length; ++j) {
            seq[j] = content[digits[j]];
            p *= marg[j][digits[j]];
        }
        entries.emplace_back(seq, p);
        for (int j = 0; j < length; ++j) {
            if (++digits[j] < static_cast<int>(content.size())) break;
            digits[j] = 0;
        }
    }
    return TabularJoint::from_weights(vocab, length, std::move(entries));
}

}  // namespace blockdiff
