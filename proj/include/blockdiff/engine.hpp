#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdiff/categorical.hpp"
#include "blockdiff/denoiser.hpp"
#include "blockdiff/executor.hpp"
#include "blockdiff/oracle.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/tabular_joint.hpp"

namespace blockdiff {

// DLM role: per-position marginals for a partially masked sequence. Unmasked
// positions come back as point masses.
class MarginalPredictor {
public:
    virtual ~MarginalPredictor() = default;
    virtual std::vector<Categorical> predict(const TokenSeq& x_t) const = 0;
};

struct BlockDecodeResult {
    TokenSeq tokens;                 // decoded masked-suffix tokens of the block
    std::vector<Categorical> dists;  // raw per-step distributions, same length
};

// AR role: decode the masked suffix of one block given the context sequence
// and the predictor's marginals.
class BlockExecutor {
public:
    virtual ~BlockExecutor() = default;
    virtual BlockDecodeResult decode_suffix(const TokenSeq& x_t, const BlockPartition& part, int block,
                                            const std::vector<Categorical>& marginals, const DecodeParams& dp,
                                            Rng& rng) const = 0;
};

class OracleMarginalPredictor : public MarginalPredictor {
public:
    explicit OracleMarginalPredictor(const TabularJoint& joint) : joint_(&joint) {}
    std::vector<Categorical> predict(const TokenSeq& x_t) const override {
        std::vector<Categorical> out;
        out.reserve(x_t.size());
        for (std::size_t i = 0; i < x_t.size(); ++i) {
            if (x_t[i] == joint_->vocab().mask_id)
                out.push_back(conditional_marginal(*joint_, x_t, static_cast<int>(i)));
            else
                out.push_back(Categorical::point_mass(x_t[i], joint_->vocab().size));
        }
        return out;
    }

private:
    const TabularJoint* joint_;
};

class OracleBlockExecutor : public BlockExecutor {
public:
    explicit OracleBlockExecutor(const TabularJoint& joint) : joint_(&joint) {}
    BlockDecodeResult decode_suffix(const TokenSeq& x_t, const BlockPartition& part, int block,
                                    const std::vector<Categorical>&, const DecodeParams& dp, Rng& rng) const override {
        const Vocabulary& vocab = joint_->vocab();
        const int begin = part.block_begin(block);
        const int prefix_len = block_prefix_len(x_t, part, block, vocab);
        TokenSeq ctx = x_t;
        TokenSeq prefix;
        for (int j = 0; j < prefix_len; ++j) {
            prefix.push_back(x_t[begin + j]);
            ctx[begin + j] = vocab.mask_id;
        }
        BlockDecodeResult res;
        for (int step = prefix_len; step < part.block_size; ++step) {
            const Categorical dist = block_conditional(*joint_, ctx, part, block, prefix);
            const Token tok = dp.greedy ? dist.argmax() : sample(apply_temperature_top_p(dist, dp.temperature, dp.top_p), rng);
            res.tokens.push_back(tok);
            res.dists.push_back(dist);
            prefix.push_back(tok);
        }
        return res;
    }

private:
    const TabularJoint* joint_;
};

class DenoiserMarginalPredictor : public MarginalPredictor {
public:
    explicit DenoiserMarginalPredictor(const TinyDenoiser& model) : model_(&model) {}
    std::vector<Categorical> predict(const TokenSeq& x_t) const override { return model_->predict(x_t); }

private:
    const TinyDenoiser* model_;
};

class NeuralBlockExecutor : public BlockExecutor {
public:
    NeuralBlockExecutor(const TinyARExecutor& model, Conditioning cond) : model_(&model), cond_(cond) {}
    BlockDecodeResult decode_suffix(const TokenSeq& x_t, const BlockPartition& part, int block,
                                    const std::vector<Categorical>& marginals, const DecodeParams& dp,
                                    Rng& rng) const override {
        const Vocabulary& vocab = model_->vocab();
        const int begin = part.block_begin(block);
        const int prefix_len = block_prefix_len(x_t, part, block, vocab);
        TokenSeq prefix(x_t.begin() + begin, x_t.begin() + begin + prefix_len);
        MarginalSet suffix(marginals.begin() + begin + prefix_len, marginals.begin() + part.block_end(block));
        const auto prompt = model_->prompt_rows(prefix, suffix, cond_);
        // the committed prefix is forced through the generation side so the
        // suffix lands on the same window positions as in training
        const auto dec = model_->decode(prompt, part.block_size, dp, rng, prefix);
        BlockDecodeResult res;
        res.tokens.assign(dec.tokens.begin() + prefix_len, dec.tokens.end());
        res.dists.assign(dec.dists.begin() + prefix_len, dec.dists.end());
        return res;
    }

private:
    const TinyARExecutor* model_;
    Conditioning cond_;
};

// Token-independence baseline: each masked position sampled from its own
// marginal, ignoring within-block dependencies.
class IndependentBlockExecutor : public BlockExecutor {
public:
    explicit IndependentBlockExecutor(const Vocabulary& vocab) : vocab_(vocab) {}
    BlockDecodeResult decode_suffix(const TokenSeq& x_t, const BlockPartition& part, int block,
                                    const std::vector<Categorical>& marginals, const DecodeParams& dp,
                                    Rng& rng) const override {
        const int begin = part.block_begin(block);
        const int prefix_len = block_prefix_len(x_t, part, block, vocab_);
        BlockDecodeResult res;
        for (int p = begin + prefix_len; p < part.block_end(block); ++p) {
            const Categorical& dist = marginals[p];
            const Token tok = dp.greedy ? dist.argmax() : sample(apply_temperature_top_p(dist, dp.temperature, dp.top_p), rng);
            res.tokens.push_back(tok);
            res.dists.push_back(dist);
        }
        return res;
    }

private:
    Vocabulary vocab_;
};

// Uniform content marginals; handy for scheduler accounting where the models
// must never emit EOS.
class UniformMarginalPredictor : public MarginalPredictor {
public:
    explicit UniformMarginalPredictor(const Vocabulary& vocab) : vocab_(vocab) {}
    std::vector<Categorical> predict(const TokenSeq& x_t) const override {
        std::vector<Categorical> out;
        const auto content = vocab_.content_tokens();
        for (Token t : x_t) {
            if (t == vocab_.mask_id)
                out.push_back(Categorical::uniform_over(content, vocab_.size));
            else
                out.push_back(Categorical::point_mass(t, vocab_.size));
        }
        return out;
    }

private:
    Vocabulary vocab_;
};

enum class ScheduleMode { kStatic, kDynamic };

inline const char* to_string(ScheduleMode m) { return m == ScheduleMode::kStatic ? "static" : "dynamic"; }

inline ScheduleMode schedule_mode_from_string(const std::string& s) {
    if (s == "static") return ScheduleMode::kStatic;
    if (s == "dynamic") return ScheduleMode::kDynamic;
    throw std::invalid_argument("unknown scheduler mode: " + s);
}

struct SchedulerConfig {
    ScheduleMode mode = ScheduleMode::kStatic;
    double tau = 0.3;         // dynamic entropy threshold, nats
    int scope = 10;           // candidate horizon in blocks
    int blocks_per_step = 1;  // static mode
    DecodeParams sampling{};
    int max_iter_factor = 10;  // safety cap: factor * num_blocks iterations

    void validate() const {
        if (scope < 1) throw std::invalid_argument("scheduler: scope must be >= 1");
        if (mode == ScheduleMode::kDynamic && tau <= 0.0) throw std::invalid_argument("scheduler: tau must be > 0 in dynamic mode");
        if (blocks_per_step < 1) throw std::invalid_argument("scheduler: blocks_per_step must be >= 1");
    }
};

// Mean of the first k Shannon entropies, nats.
inline double block_entropy(const std::vector<Categorical>& dists, int k) {
    if (k < 1 || k > static_cast<int>(dists.size())) throw std::invalid_argument("block_entropy: k out of range");
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += dists[j].entropy();
    return acc / k;
}

// max{k : mean of the first k entropies <= tau}, 0 when even k=1 fails.
inline int k_star(const std::vector<double>& entropies, double tau) {
    int best = 0;
    double acc = 0.0;
    for (std::size_t k = 1; k <= entropies.size(); ++k) {
        acc += entropies[k - 1];
        if (acc / static_cast<double>(k) <= tau) best = static_cast<int>(k);
    }
    return best;
}

// First `scope` blocks at or after the frontier that still contain MASK.
inline std::vector<int> candidate_scope(const TokenSeq& seq, const BlockPartition& part, const Vocabulary& vocab,
                                        int scope) {
    std::vector<int> out;
    for (int b = 0; b < part.num_blocks && static_cast<int>(out.size()) < scope; ++b)
        if (block_has_mask(seq, part, b, vocab)) out.push_back(b);
    return out;
}

// Lowest-entropy blocks first; ties to the lower block index.
inline std::vector<int> select_static(const std::vector<int>& candidates, const std::vector<double>& scores, int count) {
    if (candidates.empty()) throw std::invalid_argument("select_static: empty candidate set");
    if (scores.size() != candidates.size()) throw std::invalid_argument("select_static: score/candidate mismatch");
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return candidates[a] < candidates[b];
    });
    std::vector<int> out;
    for (std::size_t i = 0; i < order.size() && static_cast<int>(out.size()) < count; ++i) out.push_back(candidates[order[i]]);
    return out;
}

struct TraceRow {
    int iter = 0;
    int block = 0;
    int k = 0;
    bool fallback = false;
    double entropy = 0.0;
    TokenSeq committed;
};

struct GenStats {
    int steps = 0;
    int decoded_tokens = 0;
    int autofilled = 0;
    int executor_calls = 0;
    int boundary_replacements = 0;
    double tokens_per_step = 0.0;
    double wall_time_s = 0.0;
    bool completed = false;
};

struct GenResult {
    TokenSeq seq;
    std::vector<TraceRow> trace;
    GenStats stats;
};

namespace detail {

// Fill every MASK after the first EOS that has no MASK before it.
inline int apply_eos_termination(TokenSeq& seq, const Vocabulary& vocab) {
    int first_eos = -1;
    for (std::size_t p = 0; p < seq.size(); ++p) {
        if (seq[p] == vocab.mask_id) break;
        if (seq[p] == vocab.eos_id) {
            first_eos = static_cast<int>(p);
            break;
        }
    }
    if (first_eos < 0) return 0;
    int filled = 0;
    for (std::size_t p = first_eos + 1; p < seq.size(); ++p) {
        if (seq[p] == vocab.mask_id) {
            seq[p] = vocab.eos_id;
            ++filled;
        }
    }
    return filled;
}

}  // namespace detail

// Iterates denoise -> score -> commit until no MASK remains, the EOS rule
// fires, or the safety cap trips. Deterministic given the seed.
inline GenResult generate(const TokenSeq& prompt, const BlockPartition& part, const MarginalPredictor& predictor,
                          const BlockExecutor& executor, const Vocabulary& vocab, const SchedulerConfig& cfg,
                          std::uint64_t seed) {
    cfg.validate();
    const int length = part.length();
    if (static_cast<int>(prompt.size()) > length) throw std::invalid_argument("generate: prompt longer than target length");
    for (Token t : prompt)
        if (t == vocab.mask_id) throw std::invalid_argument("generate: prompt must not contain MASK");

    const auto t_start = std::chrono::steady_clock::now();
    GenResult res;
    res.seq = prompt;
    res.seq.resize(length, vocab.mask_id);
    Rng rng(seed);

    res.stats.autofilled += detail::apply_eos_termination(res.seq, vocab);

    const int max_iter = cfg.max_iter_factor * part.num_blocks;
    while (has_mask(res.seq, vocab)) {
        if (res.stats.steps >= max_iter) break;  // stalled scheduler guard; partial trace kept
        ++res.stats.steps;
        const int iter = res.stats.steps;
        const auto candidates = candidate_scope(res.seq, part, vocab, cfg.scope);
        const auto marginals = predictor.predict(res.seq);

        auto commit = [&](int block, const TokenSeq& tokens, int k, bool fallback, double entropy) {
            const int begin = part.block_begin(block);
            const int start = begin + block_prefix_len(res.seq, part, block, vocab);
            TraceRow row;
            row.iter = iter;
            row.block = block;
            row.k = k;
            row.fallback = fallback;
            row.entropy = entropy;
            for (int j = 0; j < k; ++j) {
                Token tok = tokens[j];
                if (vocab.is_boundary(tok)) {  // degenerate-output policy
                    tok = vocab.eos_id;
                    ++res.stats.boundary_replacements;
                }
                res.seq[start + j] = tok;
                row.committed.push_back(tok);
            }
            res.stats.decoded_tokens += k;
            res.trace.push_back(std::move(row));
        };

        if (cfg.mode == ScheduleMode::kStatic) {
            std::vector<double> scores;
            scores.reserve(candidates.size());
            for (int b : candidates) {
                std::vector<Categorical> masked_dists;
                for (int p = part.block_begin(b); p < part.block_end(b); ++p)
                    if (res.seq[p] == vocab.mask_id) masked_dists.push_back(marginals[p]);
                scores.push_back(block_entropy(masked_dists, static_cast<int>(masked_dists.size())));
            }
            const auto selected = select_static(candidates, scores, cfg.blocks_per_step);
            for (int b : selected) {
                const auto dec = executor.decode_suffix(res.seq, part, b, marginals, cfg.sampling, rng);
                ++res.stats.executor_calls;
                double score = 0.0;
                for (std::size_t i = 0; i < candidates.size(); ++i)
                    if (candidates[i] == b) score = scores[i];
                commit(b, dec.tokens, static_cast<int>(dec.tokens.size()), false, score);
            }
        } else {
            int best_block = -1, best_k = 0;
            double best_h = std::numeric_limits<double>::infinity();
            BlockDecodeResult best_dec;
            for (int b : candidates) {
                auto spec_rng = rng.split("speculative", static_cast<std::uint64_t>(iter) * part.num_blocks + b);
                auto dec = executor.decode_suffix(res.seq, part, b, marginals, cfg.sampling, spec_rng);
                ++res.stats.executor_calls;
                std::vector<double> ent;
                ent.reserve(dec.dists.size());
                for (const auto& d : dec.dists) ent.push_back(d.entropy());
                const int k = k_star(ent, cfg.tau);
                const double h = k > 0 ? block_entropy(dec.dists, k) : std::numeric_limits<double>::infinity();
                const bool better = (k > best_k) || (k == best_k && h < best_h);
                if (better) {
                    best_block = b;
                    best_k = k;
                    best_h = h;
                    best_dec = std::move(dec);
                }
            }
            if (best_k >= 2) {
                best_dec.tokens.resize(best_k);
                commit(best_block, best_dec.tokens, best_k, false, best_h);
            } else {
                // single-token fallback: lowest denoiser entropy among the
                // candidates' next masked positions, sampled from the
                // denoiser's own distribution
                int fb_block = -1, fb_pos = -1;
                double fb_ent = std::numeric_limits<double>::infinity();
                for (int b : candidates) {
                    const int pos = part.block_begin(b) + block_prefix_len(res.seq, part, b, vocab);
                    const double e = marginals[pos].entropy();
                    if (e < fb_ent) {
                        fb_ent = e;
                        fb_block = b;
                        fb_pos = pos;
                    }
                }
                const Token tok = sample(marginals[fb_pos], rng);
                commit(fb_block, {tok}, 1, true, fb_ent);
            }
        }

        res.stats.autofilled += detail::apply_eos_termination(res.seq, vocab);
    }

    res.stats.completed = !has_mask(res.seq, vocab);
    if (res.stats.steps > 0) res.stats.tokens_per_step = static_cast<double>(res.stats.decoded_tokens) / res.stats.steps;
    res.stats.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

inline std::string trace_to_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream out;
    out << "iter,block,k,fallback,entropy,committed_tokens\n";
    char buf[64];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.entropy);
        out << r.iter << ',' << r.block << ',' << r.k << ',' << (r.fallback ? 1 : 0) << ',' << buf << ',';
        for (std::size_t i = 0; i < r.committed.size(); ++i) {
            if (i) out << ' ';
            out << r.committed[i];
        }
        out << '\n';
    }
    return out.str();
}

inline std::string stats_to_csv(const GenStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "tokens_per_step,steps,executor_calls\n%.17g,%d,%d\n", s.tokens_per_step, s.steps,
                  s.executor_calls);
    return buf;
}

}  // namespace blockdiff
