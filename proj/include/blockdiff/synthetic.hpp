#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdiff/rng.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/tabular_joint.hpp"
#include "blockdiff/vocab.hpp"

namespace blockdiff {

enum class LangKind { kPairedTokens, kBracketBalance, kCopy };

inline const char* to_string(LangKind k) {
    switch (k) {
        case LangKind::kPairedTokens: return "paired-tokens";
        case LangKind::kBracketBalance: return "bracket-balance";
        case LangKind::kCopy: return "copy-with-separator";
    }
    return "?";
}

inline LangKind lang_kind_from_string(const std::string& s) {
    if (s == "paired-tokens") return LangKind::kPairedTokens;
    if (s == "bracket-balance") return LangKind::kBracketBalance;
    if (s == "copy-with-separator") return LangKind::kCopy;
    throw std::invalid_argument("unknown language kind: " + s);
}

struct LangParams {
    int length = 8;
    int pairs = 4;      // paired-tokens: pair types (= content alphabet)
    int repeat = 1;     // paired-tokens: 1 = i.i.d. pairs, 2 = each type repeated twice (quads)
    int max_depth = 2;  // bracket-balance
    int alphabet = 4;   // copy-with-separator content alphabet
};

// A synthetic language with an exact membership checker, a uniform sampler,
// and (at these sizes) a full tabular joint.
class SyntheticLanguage {
public:
    SyntheticLanguage(LangKind kind, LangParams params, Vocabulary vocab, std::vector<TokenSeq> support)
        : kind_(kind), params_(params), vocab_(vocab), support_(std::move(support)) {
        if (support_.empty()) throw std::invalid_argument("synthetic language with empty support");
    }

    LangKind kind() const { return kind_; }
    const LangParams& params() const { return params_; }
    const Vocabulary& vocab() const { return vocab_; }
    int length() const { return params_.length; }
    const std::vector<TokenSeq>& support() const { return support_; }

    bool valid(const TokenSeq& seq) const {
        if (static_cast<int>(seq.size()) != params_.length) return false;
        for (Token t : seq)
            if (!vocab_.is_content(t)) return false;
        switch (kind_) {
            case LangKind::kPairedTokens: {
                for (int j = 0; j + 1 < params_.length; j += 2) {
                    const Token a = seq[j], b = seq[j + 1];
                    if (a >= params_.pairs || b != pair_partner(a)) return false;
                }
                if (params_.repeat == 2) {
                    for (int j = 0; j + 3 < params_.length; j += 4)
                        if (seq[j] != seq[j + 2]) return false;
                }
                return true;
            }
            case LangKind::kBracketBalance: {
                int depth = 0;
                for (Token t : seq) {
                    depth += (t == 0) ? 1 : -1;
                    if (depth < 0 || depth > params_.max_depth) return false;
                }
                return depth == 0;
            }
            case LangKind::kCopy: {
                const int half = params_.length / 2;
                for (int j = 0; j < half; ++j)
                    if (seq[j] != seq[half + j]) return false;
                return true;
            }
        }
        return false;
    }

    TokenSeq sample(Rng& rng) const { return support_[rng.uniform_int(static_cast<int>(support_.size()))]; }

    // Uniform joint over the support.
    TabularJoint joint() const {
        std::vector<std::pair<TokenSeq, double>> entries;
        entries.reserve(support_.size());
        for (const auto& s : support_) entries.emplace_back(s, 1.0);
        return TabularJoint::from_weights(vocab_, params_.length, std::move(entries));
    }

    // second pair token determined by the first
    Token pair_partner(Token first) const { return (first + 1) % params_.pairs; }

    // Deterministic completion of a copy prompt (the first half).
    TokenSeq copy_completion(const TokenSeq& first_half) const {
        if (kind_ != LangKind::kCopy) throw std::logic_error("copy_completion: not a copy language");
        return first_half;
    }

private:
    LangKind kind_;
    LangParams params_;
    Vocabulary vocab_;
    std::vector<TokenSeq> support_;
};

namespace detail {

inline void enumerate_paired(const LangParams& p, std::vector<TokenSeq>& out) {
    const int groups = p.length / (2 * p.repeat);
    std::vector<int> types(groups, 0);
    while (true) {
        TokenSeq seq;
        seq.reserve(p.length);
        for (int g = 0; g < groups; ++g) {
            for (int r = 0; r < p.repeat; ++r) {
                seq.push_back(types[g]);
                seq.push_back((types[g] + 1) % p.pairs);
            }
        }
        out.push_back(std::move(seq));
        int g = 0;
        for (; g < groups; ++g) {
            if (++types[g] < p.pairs) break;
            types[g] = 0;
        }
        if (g == groups) break;
    }
}

inline void enumerate_brackets(const LangParams& p, TokenSeq& prefix, int depth, std::vector<TokenSeq>& out) {
    const int remaining = p.length - static_cast<int>(prefix.size());
    if (remaining == 0) {
        if (depth == 0) out.push_back(prefix);
        return;
    }
    if (depth > remaining) return;  // cannot close in time
    if (depth < p.max_depth) {
        prefix.push_back(0);
        enumerate_brackets(p, prefix, depth + 1, out);
        prefix.pop_back();
    }
    if (depth > 0) {
        prefix.push_back(1);
        enumerate_brackets(p, prefix, depth - 1, out);
        prefix.pop_back();
    }
}

inline void enumerate_copy(const LangParams& p, std::vector<TokenSeq>& out) {
    const int half = p.length / 2;
    std::vector<int> digits(half, 0);
    while (true) {
        TokenSeq seq;
        seq.reserve(p.length);
        for (int j = 0; j < half; ++j) seq.push_back(digits[j]);
        for (int j = 0; j < half; ++j) seq.push_back(digits[j]);
        out.push_back(std::move(seq));
        int j = 0;
        for (; j < half; ++j) {
            if (++digits[j] < p.alphabet) break;
            digits[j] = 0;
        }
        if (j == half) break;
    }
}

}  // namespace detail

inline SyntheticLanguage gen_language(LangKind kind, LangParams params) {
    constexpr double kMaxSupport = 2e5;
    std::vector<TokenSeq> support;
    Vocabulary vocab;
    switch (kind) {
        case LangKind::kPairedTokens: {
            if (params.pairs < 1) throw std::invalid_argument("paired-tokens: need at least one pair type");
            if (params.repeat != 1 && params.repeat != 2) throw std::invalid_argument("paired-tokens: repeat must be 1 or 2");
            if (params.length % (2 * params.repeat) != 0)
                throw std::invalid_argument("paired-tokens: length must be a multiple of 2*repeat");
            const int groups = params.length / (2 * params.repeat);
            if (std::pow(static_cast<double>(params.pairs), groups) > kMaxSupport)
                throw std::invalid_argument("paired-tokens: support too large");
            vocab = Vocabulary::with_content(params.pairs);
            detail::enumerate_paired(params, support);
            break;
        }
        case LangKind::kBracketBalance: {
            if (params.length % 2 != 0) throw std::invalid_argument("bracket-balance: length must be even");
            if (params.max_depth < 1) throw std::invalid_argument("bracket-balance: depth must be >= 1");
            if (params.length > 24) throw std::invalid_argument("bracket-balance: length too large");
            vocab = Vocabulary::with_content(2);
            TokenSeq prefix;
            detail::enumerate_brackets(params, prefix, 0, support);
            break;
        }
        case LangKind::kCopy: {
            if (params.length % 2 != 0) throw std::invalid_argument("copy-with-separator: length must be even");
            if (params.alphabet < 1) throw std::invalid_argument("copy-with-separator: empty alphabet");
            if (std::pow(static_cast<double>(params.alphabet), params.length / 2) > kMaxSupport)
                throw std::invalid_argument("copy-with-separator: support too large");
            vocab = Vocabulary::with_content(params.alphabet);
            detail::enumerate_copy(params, support);
            break;
        }
    }
    return SyntheticLanguage(kind, params, vocab, std::move(support));
}

inline SyntheticLanguage language_from_config(const Config& cfg, std::string_view section = "data") {
    LangParams p;
    p.length = cfg.get_int(section, "length");
    p.pairs = cfg.get_int_or(section, "pairs", 4);
    p.repeat = cfg.get_int_or(section, "repeat", 1);
    p.max_depth = cfg.get_int_or(section, "depth", 2);
    p.alphabet = cfg.get_int_or(section, "alphabet", 4);
    return gen_language(lang_kind_from_string(cfg.get(section, "kind")), p);
}

struct DataSplits {
    std::vector<TokenSeq> train;
    std::vector<TokenSeq> val;
};

inline DataSplits make_splits(const SyntheticLanguage& lang, int n_train, int n_val, std::uint64_t seed) {
    DataSplits out;
    Rng rng(seed);
    auto train_rng = rng.split("train");
    auto val_rng = rng.split("val");
    out.train.reserve(n_train);
    out.val.reserve(n_val);
    for (int i = 0; i < n_train; ++i) out.train.push_back(lang.sample(train_rng));
    for (int i = 0; i < n_val; ++i) out.val.push_back(lang.sample(val_rng));
    return out;
}

// fraction of samples passing the exact checker
template <typename Checker>
double validity_rate(const std::vector<TokenSeq>& samples, Checker&& checker) {
    if (samples.empty()) throw std::invalid_argument("validity_rate: no samples");
    int ok = 0;
    for (const auto& s : samples) ok += static_cast<bool>(checker(s));
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

// corpus files: one sequence per line, space-separated token ids
inline void save_corpus(const std::string& path, const std::vector<TokenSeq>& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus: " + path);
    for (const auto& seq : data) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (i) out << ' ';
            out << seq[i];
        }
        out << '\n';
    }
}

inline std::vector<TokenSeq> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read corpus: " + path);
    std::vector<TokenSeq> data;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        TokenSeq seq;
        Token t;
        while (row >> t) seq.push_back(t);
        data.push_back(std::move(seq));
    }
    return data;
}

}  // namespace blockdiff
