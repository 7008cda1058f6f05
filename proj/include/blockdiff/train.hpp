#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdiff/denoiser.hpp"
#include "blockdiff/executor.hpp"
#include "blockdiff/forward.hpp"
#include "blockdiff/rng.hpp"
#include "blockdiff/sequence.hpp"

namespace blockdiff {

enum class MaskingScheme {
    kBlockIid,  // blocks i.i.d. at a drawn level, one forced if none
    kSpan8,     // fixed contiguous 8-token span, unit weight
};

// Block-wise training objective: denoiser marginals -> block prompt ->
// teacher-forced executor NLL of the ground-truth block, summed over masked
// blocks and scaled by the loss weight of the sampled masking level.
// Positions outside masked blocks contribute nothing.
inline double block_loss(const TinyDenoiser& denoiser, TinyARExecutor& executor, const TokenSeq& x0,
                         const TokenSeq& masked, const BlockPartition& part, double mask_level, Conditioning cond,
                         bool train) {
    const Vocabulary& vocab = executor.vocab();
    if (x0.size() != masked.size() || static_cast<int>(x0.size()) != part.length())
        throw std::invalid_argument("block_loss: sequence/partition mismatch");
    if (part.block_size != executor.block_size()) throw std::invalid_argument("block_loss: executor block size mismatch");
    if (mask_level <= 0.0 || mask_level > 1.0) throw std::invalid_argument("block_loss: mask level out of (0,1]");

    std::vector<int> masked_blocks;
    for (int b = 0; b < part.num_blocks; ++b) {
        if (!block_has_mask(masked, part, b, vocab)) continue;
        if (!block_fully_masked(masked, part, b, vocab))
            throw std::invalid_argument("block_loss: partially masked block; use the block masking sampler");
        masked_blocks.push_back(b);
    }
    if (masked_blocks.empty()) throw std::invalid_argument("block_loss: no masked block");

    const double weight = 1.0 / block_mask_probability(mask_level);
    const auto marginals = denoiser.predict(masked);

    double loss = 0.0;
    for (int b : masked_blocks) {
        MarginalSet slice(marginals.begin() + part.block_begin(b), marginals.begin() + part.block_end(b));
        const auto prompt = executor.prompt_rows({}, slice, cond);
        TokenSeq target(x0.begin() + part.block_begin(b), x0.begin() + part.block_end(b));
        loss += executor.teacher_forced_nll(prompt, target, weight, train);
    }
    if (!std::isfinite(loss)) throw std::runtime_error("block_loss: non-finite loss");
    return loss;
}

struct TrainConfig {
    int steps = 1000;
    int batch = 8;
    double lr = 3e-3;
    double warmup_ratio = 0.03;
    double max_grad_norm = 7.0;
    std::uint64_t seed = 1;
    Conditioning conditioning = Conditioning::kSoft;
    MaskingScheme masking = MaskingScheme::kBlockIid;
};

struct LossRecord {
    int step = 0;
    double loss = 0.0;
    double mask_level = 0.0;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss curve: " + path);
    out << "step,loss,mask_level\n";
    char buf[96];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", r.step, r.loss, r.mask_level);
        out << buf;
    }
}

// Mean of the last `window` entries, the smoothing used for trend checks.
inline double smoothed_tail(const std::vector<LossRecord>& curve, int window) {
    if (curve.empty()) throw std::invalid_argument("smoothed_tail: empty curve");
    const int n = static_cast<int>(curve.size());
    const int take = std::min(window, n);
    double acc = 0.0;
    for (int i = n - take; i < n; ++i) acc += curve[i].loss;
    return acc / take;
}

// Executor training with a frozen denoiser. Deterministic given the seed:
// fixed batch order, fixed reduction order, one optimizer step per batch.
inline std::vector<LossRecord> train_executor(TinyARExecutor& executor, const TinyDenoiser& denoiser,
                                              const std::vector<TokenSeq>& data, const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train_executor: empty dataset");
    const int length = static_cast<int>(data.front().size());
    const auto part = BlockPartition::make(length, executor.block_size());
    const Vocabulary& vocab = executor.vocab();
    if (cfg.masking == MaskingScheme::kSpan8 && (length % 8 != 0 || 8 % executor.block_size() != 0))
        throw std::invalid_argument("train_executor: span8 masking needs L % 8 == 0 and B | 8");

    OptimizerConfig oc;
    oc.lr = cfg.lr;
    oc.warmup_ratio = cfg.warmup_ratio;
    oc.max_grad_norm = cfg.max_grad_norm;
    oc.total_steps = cfg.steps;
    AdamOptimizer opt(executor.params().size(), oc);
    const Rng root(cfg.seed);

    std::vector<LossRecord> curve;
    curve.reserve(cfg.steps);
    for (int step = 1; step <= cfg.steps; ++step) {
        executor.params().zero_grad();
        double loss = 0.0;
        double level_sum = 0.0;
        for (int item = 0; item < cfg.batch; ++item) {
            auto rng = root.split("train", static_cast<std::uint64_t>(step) * cfg.batch + item);
            const TokenSeq& x0 = data[rng.uniform_int(static_cast<int>(data.size()))];
            TokenSeq masked;
            double level;
            if (cfg.masking == MaskingScheme::kBlockIid) {
                level = draw_mask_level(rng);
                masked = sample_block_masking(x0, part, vocab, level, rng).masked;
            } else {
                level = 1.0;  // fixed-span protocol carries unit weight
                masked = x0;
                const int start = 8 * rng.uniform_int(length / 8);
                for (int p = start; p < start + 8; ++p) masked[p] = vocab.mask_id;
            }
            level_sum += level;
            loss += block_loss(denoiser, executor, x0, masked, part, level, cfg.conditioning, true);
        }
        loss /= cfg.batch;
        for (double& g : executor.params().grad) g /= cfg.batch;
        if (!std::isfinite(loss))
            throw std::runtime_error("train_executor: diverged at step " + std::to_string(step));
        opt.step(executor.params());
        curve.push_back(LossRecord{step, loss, level_sum / cfg.batch});
    }
    return curve;
}

struct PretrainConfig {
    int steps = 800;
    int batch = 8;
    double lr = 3e-3;
    double warmup_ratio = 0.03;
    double max_grad_norm = 7.0;
    std::uint64_t seed = 1;
};

// Token-level masked-diffusion cross-entropy; the denoiser is trained here
// once and then frozen for every executor run.
inline std::vector<LossRecord> pretrain_denoiser(TinyDenoiser& denoiser, const std::vector<TokenSeq>& data,
                                                 const PretrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("pretrain_denoiser: empty dataset");
    const int length = static_cast<int>(data.front().size());
    const auto token_part = BlockPartition::make(length, 1);
    const Vocabulary& vocab = denoiser.vocab();

    OptimizerConfig oc;
    oc.lr = cfg.lr;
    oc.warmup_ratio = cfg.warmup_ratio;
    oc.max_grad_norm = cfg.max_grad_norm;
    oc.total_steps = cfg.steps;
    AdamOptimizer opt(denoiser.params().size(), oc);
    const Rng root(cfg.seed);

    std::vector<LossRecord> curve;
    curve.reserve(cfg.steps);
    for (int step = 1; step <= cfg.steps; ++step) {
        denoiser.params().zero_grad();
        double loss = 0.0;
        double level_sum = 0.0;
        for (int item = 0; item < cfg.batch; ++item) {
            auto rng = root.split("pretrain", static_cast<std::uint64_t>(step) * cfg.batch + item);
            const TokenSeq& x0 = data[rng.uniform_int(static_cast<int>(data.size()))];
            const double level = draw_mask_level(rng);
            const auto masking = sample_block_masking(x0, token_part, vocab, level, rng);
            const double weight = 1.0 / block_mask_probability(level);
            level_sum += level;
            loss += denoiser.masked_nll(x0, masking.masked, weight, true);
        }
        loss /= cfg.batch;
        for (double& g : denoiser.params().grad) g /= cfg.batch;
        if (!std::isfinite(loss))
            throw std::runtime_error("pretrain_denoiser: diverged at step " + std::to_string(step));
        opt.step(denoiser.params());
        curve.push_back(LossRecord{step, loss, level_sum / cfg.batch});
    }
    return curve;
}

}  // namespace blockdiff
