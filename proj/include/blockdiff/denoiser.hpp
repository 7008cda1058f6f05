#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "blockdiff/categorical.hpp"
#include "blockdiff/nn.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/vocab.hpp"

namespace blockdiff {

struct DenoiserConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_seq = 64;
};

// Bidirectional token-level denoiser. Output distributions live on content
// tokens plus EOS; MASK and the boundary symbols are excluded from the
// readout. Unmasked positions are copied through as point masses.
class TinyDenoiser {
public:
    TinyDenoiser(const Vocabulary& vocab, DenoiserConfig cfg, std::uint64_t init_seed)
        : vocab_(vocab), cfg_(cfg), core_(core_config(cfg, vocab), params_, "denoiser") {
        vocab_.validate();
        tok_emb_ = params_.add("denoiser.tok_emb", vocab.size, cfg.d_model);
        pos_emb_ = params_.add("denoiser.pos_emb", cfg.max_seq, cfg.d_model);
        Rng rng(init_seed);
        core_.init(params_, rng);
        params_.init_gaussian(tok_emb_, 0.08, rng);
        params_.init_gaussian(pos_emb_, 0.08, rng);
    }

    const Vocabulary& vocab() const { return vocab_; }
    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    bool output_allowed(Token t) const { return t != vocab_.mask_id && t != vocab_.bot_id && t != vocab_.eot_id; }

    std::vector<Categorical> predict(const TokenSeq& x_t) const {
        const int n = static_cast<int>(x_t.size());
        const auto pass = core_.forward(params_, embed(x_t).data(), n);
        std::vector<Categorical> out;
        out.reserve(n);
        for (int i = 0; i < n; ++i) {
            if (x_t[i] != vocab_.mask_id) {
                out.push_back(Categorical::point_mass(x_t[i], vocab_.size));
            } else {
                out.push_back(softmax_row(pass.logits.data() + static_cast<std::size_t>(i) * vocab_.size));
            }
        }
        return out;
    }

    // Weighted cross-entropy on masked positions; accumulates gradients when
    // train is set. Returns the summed loss.
    double masked_nll(const TokenSeq& x0, const TokenSeq& masked, double weight, bool train) {
        const int n = static_cast<int>(x0.size());
        if (masked.size() != x0.size()) throw std::invalid_argument("denoiser: sequence length mismatch");
        const auto rows = embed(masked);
        const auto pass = core_.forward(params_, rows.data(), n);
        double loss = 0.0;
        std::vector<double> dlogits(static_cast<std::size_t>(n) * vocab_.size, 0.0);
        for (int i = 0; i < n; ++i) {
            if (masked[i] != vocab_.mask_id) continue;
            const double* lrow = pass.logits.data() + static_cast<std::size_t>(i) * vocab_.size;
            const Categorical probs = softmax_row(lrow);
            loss += weight * (-std::log(probs.p[x0[i]]));
            if (train) {
                double* drow = dlogits.data() + static_cast<std::size_t>(i) * vocab_.size;
                for (Token v = 0; v < vocab_.size; ++v) drow[v] = weight * probs.p[v];
                drow[x0[i]] -= weight;
            }
        }
        if (train) {
            std::vector<double> dinput(static_cast<std::size_t>(n) * cfg_.d_model);
            core_.backward(params_, pass, dlogits.data(), dinput.data());
            for (int i = 0; i < n; ++i) {
                double* dtok = params_.grd(tok_emb_) + static_cast<std::size_t>(masked[i]) * cfg_.d_model;
                double* dpos = params_.grd(pos_emb_) + static_cast<std::size_t>(i) * cfg_.d_model;
                const double* drow = dinput.data() + static_cast<std::size_t>(i) * cfg_.d_model;
                for (int j = 0; j < cfg_.d_model; ++j) {
                    dtok[j] += drow[j];
                    dpos[j] += drow[j];
                }
            }
        }
        return loss;
    }

    void save(const std::string& path) const {
        std::map<std::string, std::string> meta{
            {"kind", "denoiser"},
            {"content", std::to_string(vocab_.content_count())},
            {"d_model", std::to_string(cfg_.d_model)},
            {"n_layers", std::to_string(cfg_.n_layers)},
            {"n_heads", std::to_string(cfg_.n_heads)},
            {"d_ff", std::to_string(cfg_.d_ff)},
            {"max_seq", std::to_string(cfg_.max_seq)},
        };
        params_.save(path, meta);
    }

    static TinyDenoiser load(const std::string& path) {
        const auto meta = ParamStore::read_meta(path);
        if (meta.at("kind") != "denoiser") throw std::runtime_error("checkpoint is not a denoiser: " + path);
        DenoiserConfig cfg;
        cfg.d_model = std::stoi(meta.at("d_model"));
        cfg.n_layers = std::stoi(meta.at("n_layers"));
        cfg.n_heads = std::stoi(meta.at("n_heads"));
        cfg.d_ff = std::stoi(meta.at("d_ff"));
        cfg.max_seq = std::stoi(meta.at("max_seq"));
        TinyDenoiser model(Vocabulary::with_content(std::stoi(meta.at("content"))), cfg, 0);
        model.params_.load(path);
        return model;
    }

private:
    static TransformerConfig core_config(const DenoiserConfig& cfg, const Vocabulary& vocab) {
        TransformerConfig tc;
        tc.d_model = cfg.d_model;
        tc.n_layers = cfg.n_layers;
        tc.n_heads = cfg.n_heads;
        tc.d_ff = cfg.d_ff;
        tc.n_out = vocab.size;
        tc.max_seq = cfg.max_seq;
        tc.causal = false;
        return tc;
    }

    std::vector<double> embed(const TokenSeq& seq) const {
        const int n = static_cast<int>(seq.size());
        if (n > cfg_.max_seq) throw std::invalid_argument("denoiser: sequence longer than max_seq");
        std::vector<double> rows(static_cast<std::size_t>(n) * cfg_.d_model);
        const double* tok = params_.val(tok_emb_);
        const double* pos = params_.val(pos_emb_);
        for (int i = 0; i < n; ++i) {
            double* r = rows.data() + static_cast<std::size_t>(i) * cfg_.d_model;
            const double* tr = tok + static_cast<std::size_t>(seq[i]) * cfg_.d_model;
            const double* pr = pos + static_cast<std::size_t>(i) * cfg_.d_model;
            for (int j = 0; j < cfg_.d_model; ++j) r[j] = tr[j] + pr[j];
        }
        return rows;
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
    DenoiserConfig cfg_;
    ParamStore params_;
    TinyTransformer core_;
    int tok_emb_ = -1, pos_emb_ = -1;
};

}  // namespace blockdiff
