#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "blockdiff/categorical.hpp"
#include "blockdiff/frechet.hpp"
#include "blockdiff/nn.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/vocab.hpp"

namespace blockdiff {

enum class Conditioning { kSoft, kTop1 };

inline const char* to_string(Conditioning c) { return c == Conditioning::kSoft ? "soft" : "top1"; }

inline Conditioning conditioning_from_string(const std::string& s) {
    if (s == "soft") return Conditioning::kSoft;
    if (s == "top1" || s == "top-1") return Conditioning::kTop1;
    throw std::invalid_argument("unknown conditioning: " + s);
}

// e = sum_v pi_v E(v), one row per marginal.
inline std::vector<double> soft_embed(const MarginalSet& marginals, const double* emb, int vocab_size, int d_model) {
    std::vector<double> rows(marginals.size() * static_cast<std::size_t>(d_model), 0.0);
    for (std::size_t j = 0; j < marginals.size(); ++j) {
        const Categorical& pi = marginals[j];
        if (pi.size() != vocab_size) throw std::invalid_argument("soft_embed: marginal/embedding size mismatch");
        double* out = rows.data() + j * d_model;
        for (Token v = 0; v < vocab_size; ++v) {
            const double w = pi.p[v];
            if (w == 0.0) continue;
            const double* erow = emb + static_cast<std::size_t>(v) * d_model;
            for (int e = 0; e < d_model; ++e) out[e] += w * erow[e];
        }
    }
    return rows;
}

namespace detail {

inline void copy_row(const double* emb, Token t, int d_model, double* out) {
    const double* erow = emb + static_cast<std::size_t>(t) * d_model;
    for (int e = 0; e < d_model; ++e) out[e] = erow[e];
}

}  // namespace detail

// [E(bot), e^1..e^B, E(eot)] with the EOS hard-discretization rule: a position
// whose marginal argmax is EOS gets the hard EOS embedding instead of the
// soft mixture.
inline std::vector<double> build_block_prompt(const MarginalSet& marginals, const double* emb, const Vocabulary& vocab,
                                              int d_model) {
    const std::size_t b = marginals.size();
    std::vector<double> rows((b + 2) * static_cast<std::size_t>(d_model), 0.0);
    detail::copy_row(emb, vocab.bot_id, d_model, rows.data());
    for (std::size_t j = 0; j < b; ++j) {
        double* out = rows.data() + (j + 1) * d_model;
        if (marginals[j].argmax() == vocab.eos_id) {
            detail::copy_row(emb, vocab.eos_id, d_model, out);
        } else {
            const auto soft = soft_embed({marginals[j]}, emb, vocab.size, d_model);
            std::copy(soft.begin(), soft.end(), out);
        }
    }
    detail::copy_row(emb, vocab.eot_id, d_model, rows.data() + (b + 1) * d_model);
    return rows;
}

// Top-1 ablation: each soft row is replaced by the hard embedding of the
// marginal argmax; boundary framing is unchanged.
inline std::vector<double> hard_condition_prompt(const MarginalSet& marginals, const double* emb, const Vocabulary& vocab,
                                                 int d_model) {
    const std::size_t b = marginals.size();
    std::vector<double> rows((b + 2) * static_cast<std::size_t>(d_model), 0.0);
    detail::copy_row(emb, vocab.bot_id, d_model, rows.data());
    for (std::size_t j = 0; j < b; ++j) detail::copy_row(emb, marginals[j].argmax(), d_model, rows.data() + (j + 1) * d_model);
    detail::copy_row(emb, vocab.eot_id, d_model, rows.data() + (b + 1) * d_model);
    return rows;
}

// Row provenance for gradient routing: hard rows push into one embedding row,
// soft rows fan out by the mixing weights.
struct PromptRow {
    bool hard = true;
    Token token = -1;
    Categorical soft;
};

struct ExecutorConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int block_size = 4;
};

struct ExecDecode {
    TokenSeq tokens;                  // exactly the requested number of steps
    std::vector<Categorical> dists;   // raw model distribution per step
    bool stopped_at_eos = false;
};

struct DecodeParams {
    bool greedy = false;
    double temperature = 1.0;
    double top_p = 1.0;
};

// Causal block executor with learned block-local position embeddings. Its
// window is one prompt (B+2 rows) plus up to B generated tokens.
class TinyARExecutor {
public:
    TinyARExecutor(const Vocabulary& vocab, ExecutorConfig cfg, std::uint64_t init_seed)
        : vocab_(vocab), cfg_(cfg), core_(core_config(cfg, vocab), params_, "executor") {
        vocab_.validate();
        emb_ = params_.add("executor.emb", vocab.size, cfg.d_model);
        pos_emb_ = params_.add("executor.pos_emb", max_rows(), cfg.d_model);
        Rng rng(init_seed);
        core_.init(params_, rng);
        params_.init_gaussian(emb_, 0.08, rng);
        params_.init_gaussian(pos_emb_, 0.08, rng);
    }

    const Vocabulary& vocab() const { return vocab_; }
    const ExecutorConfig& config() const { return cfg_; }
    int block_size() const { return cfg_.block_size; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const double* embedding() const { return params_.val(emb_); }

    bool output_allowed(Token t) const { return t != vocab_.mask_id; }

    // Prompt covering one block: committed prefix tokens as hard rows, then
    // soft (or top-1) rows for the masked suffix, wrapped in boundaries.
    std::vector<PromptRow> prompt_rows(const TokenSeq& prefix, const MarginalSet& suffix_marginals, Conditioning cond) const {
        if (static_cast<int>(prefix.size() + suffix_marginals.size()) != cfg_.block_size)
            throw std::invalid_argument("prompt_rows: prefix + suffix must cover the block");
        std::vector<PromptRow> rows;
        rows.reserve(cfg_.block_size + 2);
        rows.push_back(PromptRow{true, vocab_.bot_id, {}});
        for (Token t : prefix) rows.push_back(PromptRow{true, t, {}});
        for (const auto& pi : suffix_marginals) {
            if (cond == Conditioning::kTop1 || pi.argmax() == vocab_.eos_id) {
                rows.push_back(PromptRow{true, pi.argmax(), {}});
            } else {
                rows.push_back(PromptRow{false, -1, pi});
            }
        }
        rows.push_back(PromptRow{true, vocab_.eot_id, {}});
        return rows;
    }

    // Teacher-forced negative log-likelihood of `target` after the prompt.
    // Gradients (scaled by `weight`) are accumulated when train is set; they
    // flow through the readout, the trunk, the position table, and both the
    // hard and soft uses of the embedding matrix.
    double teacher_forced_nll(const std::vector<PromptRow>& prompt, const TokenSeq& target, double weight, bool train) {
        if (target.empty()) throw std::invalid_argument("teacher_forced_nll: empty target");
        const int np = static_cast<int>(prompt.size());
        const int m = static_cast<int>(target.size());
        const int n = np + m - 1;
        if (n > max_rows()) throw std::invalid_argument("teacher_forced_nll: window overflow");

        std::vector<double> rows(static_cast<std::size_t>(n) * cfg_.d_model);
        for (int i = 0; i < np; ++i) materialize_row(prompt[i], i, rows.data() + static_cast<std::size_t>(i) * cfg_.d_model);
        for (int j = 0; j + 1 < m; ++j)
            materialize_row(PromptRow{true, target[j], {}}, np + j, rows.data() + static_cast<std::size_t>(np + j) * cfg_.d_model);

        const auto pass = core_.forward(params_, rows.data(), n);
        double loss = 0.0;
        std::vector<double> dlogits;
        if (train) dlogits.assign(static_cast<std::size_t>(n) * vocab_.size, 0.0);
        for (int j = 0; j < m; ++j) {
            const int row = np - 1 + j;
            const double* lrow = pass.logits.data() + static_cast<std::size_t>(row) * vocab_.size;
            const Categorical probs = softmax_row(lrow);
            loss += weight * (-std::log(probs.p[target[j]]));
            if (train) {
                double* drow = dlogits.data() + static_cast<std::size_t>(row) * vocab_.size;
                for (Token v = 0; v < vocab_.size; ++v) drow[v] = weight * probs.p[v];
                drow[target[j]] -= weight;
            }
        }
        if (train) {
            std::vector<double> dinput(static_cast<std::size_t>(n) * cfg_.d_model);
            core_.backward(params_, pass, dlogits.data(), dinput.data());
            for (int i = 0; i < np; ++i) backprop_row(prompt[i], i, dinput.data() + static_cast<std::size_t>(i) * cfg_.d_model);
            for (int j = 0; j + 1 < m; ++j)
                backprop_row(PromptRow{true, target[j], {}}, np + j,
                             dinput.data() + static_cast<std::size_t>(np + j) * cfg_.d_model);
        }
        return loss;
    }

    // Per-step chain-rule probabilities of an arbitrary block continuation.
    std::vector<double> step_probabilities(const std::vector<PromptRow>& prompt, const TokenSeq& target) const {
        const int np = static_cast<int>(prompt.size());
        const int m = static_cast<int>(target.size());
        const int n = np + m - 1;
        std::vector<double> rows(static_cast<std::size_t>(n) * cfg_.d_model);
        for (int i = 0; i < np; ++i) materialize_row(prompt[i], i, rows.data() + static_cast<std::size_t>(i) * cfg_.d_model);
        for (int j = 0; j + 1 < m; ++j)
            materialize_row(PromptRow{true, target[j], {}}, np + j, rows.data() + static_cast<std::size_t>(np + j) * cfg_.d_model);
        const auto pass = core_.forward(params_, rows.data(), n);
        std::vector<double> out(m);
        for (int j = 0; j < m; ++j) {
            const double* lrow = pass.logits.data() + static_cast<std::size_t>(np - 1 + j) * vocab_.size;
            out[j] = softmax_row(lrow).p[target[j]];
        }
        return out;
    }

    // Autoregressive decode of `steps` tokens after the prompt. The first
    // forced.size() steps are pinned to the given tokens (their distributions
    // are still reported). Decoding stops early at EOS and pads with EOS.
    ExecDecode decode(const std::vector<PromptRow>& prompt, int steps, const DecodeParams& dp, Rng& rng,
                      const TokenSeq& forced = {}) const {
        ExecDecode out;
        if (steps <= 0) return out;
        const int np = static_cast<int>(prompt.size());
        if (np + steps - 1 > max_rows()) throw std::invalid_argument("decode: window overflow");
        std::vector<double> rows(static_cast<std::size_t>(np + steps - 1) * cfg_.d_model);
        for (int i = 0; i < np; ++i) materialize_row(prompt[i], i, rows.data() + static_cast<std::size_t>(i) * cfg_.d_model);
        int n = np;
        for (int j = 0; j < steps; ++j) {
            const auto pass = core_.forward(params_, rows.data(), n);
            const double* lrow = pass.logits.data() + static_cast<std::size_t>(n - 1) * vocab_.size;
            const Categorical dist = softmax_row(lrow);
            Token tok;
            if (j < static_cast<int>(forced.size())) {
                tok = forced[j];
            } else if (dp.greedy) {
                tok = dist.argmax();
            } else {
                tok = sample(apply_temperature_top_p(dist, dp.temperature, dp.top_p), rng);
            }
            out.tokens.push_back(tok);
            out.dists.push_back(dist);
            if (tok == vocab_.eos_id && j >= static_cast<int>(forced.size())) {
                out.stopped_at_eos = true;
                break;
            }
            if (j + 1 < steps) {
                materialize_row(PromptRow{true, tok, {}}, n, rows.data() + static_cast<std::size_t>(n) * cfg_.d_model);
                ++n;
            }
        }
        while (static_cast<int>(out.tokens.size()) < steps) {
            out.tokens.push_back(vocab_.eos_id);
            out.dists.push_back(Categorical::point_mass(vocab_.eos_id, vocab_.size));
        }
        return out;
    }

    void save(const std::string& path) const {
        std::map<std::string, std::string> meta{
            {"kind", "executor"},
            {"content", std::to_string(vocab_.content_count())},
            {"d_model", std::to_string(cfg_.d_model)},
            {"n_layers", std::to_string(cfg_.n_layers)},
            {"n_heads", std::to_string(cfg_.n_heads)},
            {"d_ff", std::to_string(cfg_.d_ff)},
            {"block_size", std::to_string(cfg_.block_size)},
        };
        params_.save(path, meta);
    }

    static TinyARExecutor load(const std::string& path) {
        const auto meta = ParamStore::read_meta(path);
        if (meta.at("kind") != "executor") throw std::runtime_error("checkpoint is not an executor: " + path);
        ExecutorConfig cfg;
        cfg.d_model = std::stoi(meta.at("d_model"));
        cfg.n_layers = std::stoi(meta.at("n_layers"));
        cfg.n_heads = std::stoi(meta.at("n_heads"));
        cfg.d_ff = std::stoi(meta.at("d_ff"));
        cfg.block_size = std::stoi(meta.at("block_size"));
        TinyARExecutor model(Vocabulary::with_content(std::stoi(meta.at("content"))), cfg, 0);
        model.params_.load(path);
        return model;
    }

private:
    static TransformerConfig core_config(const ExecutorConfig& cfg, const Vocabulary& vocab) {
        TransformerConfig tc;
        tc.d_model = cfg.d_model;
        tc.n_layers = cfg.n_layers;
        tc.n_heads = cfg.n_heads;
        tc.d_ff = cfg.d_ff;
        tc.n_out = vocab.size;
        tc.max_seq = 2 * cfg.block_size + 2;
        tc.causal = true;
        return tc;
    }

    int max_rows() const { return 2 * cfg_.block_size + 2; }

    void materialize_row(const PromptRow& row, int position, double* out) const {
        const double* emb = params_.val(emb_);
        if (row.hard) {
            detail::copy_row(emb, row.token, cfg_.d_model, out);
        } else {
            for (int e = 0; e < cfg_.d_model; ++e) out[e] = 0.0;
            for (Token v = 0; v < vocab_.size; ++v) {
                const double w = row.soft.p[v];
                if (w == 0.0) continue;
                const double* erow = emb + static_cast<std::size_t>(v) * cfg_.d_model;
                for (int e = 0; e < cfg_.d_model; ++e) out[e] += w * erow[e];
            }
        }
        const double* prow = params_.val(pos_emb_) + static_cast<std::size_t>(position) * cfg_.d_model;
        for (int e = 0; e < cfg_.d_model; ++e) out[e] += prow[e];
    }

    void backprop_row(const PromptRow& row, int position, const double* drow) {
        double* demb = params_.grd(emb_);
        if (row.hard) {
            double* erow = demb + static_cast<std::size_t>(row.token) * cfg_.d_model;
            for (int e = 0; e < cfg_.d_model; ++e) erow[e] += drow[e];
        } else {
            for (Token v = 0; v < vocab_.size; ++v) {
                const double w = row.soft.p[v];
                if (w == 0.0) continue;
                double* erow = demb + static_cast<std::size_t>(v) * cfg_.d_model;
                for (int e = 0; e < cfg_.d_model; ++e) erow[e] += w * drow[e];
            }
        }
        double* prow = params_.grd(pos_emb_) + static_cast<std::size_t>(position) * cfg_.d_model;
        for (int e = 0; e < cfg_.d_model; ++e) prow[e] += drow[e];
    }

    Categorical softmax_row(const double* logits) const {
        Categorical out(vocab_.size);
        double maxv = -1e300;
        for (Token v = 0; v < vocab_.size; ++v)
            if (output_allowed(v)) maxv = std::max(maxv, logits[v]);
        double z = 0.0;
        for (Token v = 0; v < vocab_.size; ++v) {
            if (!output_allowed(v)) continue;
            out.p[v] = std::exp(logits[v] - maxv);
            z += out.p[v];
        }
        for (Token v = 0; v < vocab_.size; ++v) out.p[v] /= z;
        return out;
    }

    Vocabulary vocab_;
    ExecutorConfig cfg_;
    ParamStore params_;
    TinyTransformer core_;
    int emb_ = -1, pos_emb_ = -1;
};

}  // namespace blockdiff
