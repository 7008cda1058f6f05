#pragma once

#include <stdexcept>
#include <vector>

#include "blockdiff/rng.hpp"
#include "blockdiff/schedule.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/vocab.hpp"

namespace blockdiff {

// Two-point distribution over {original token, MASK}; the only shapes the
// absorbing forward process and its posterior can take.
struct AbsorbDist {
    Token token = -1;
    double p_token = 0.0;
    double p_mask = 0.0;
};

// q(x_t | x_0) = alpha_t on x_0, 1 - alpha_t on MASK.
inline AbsorbDist forward_marginal(Token x0, int t, const NoiseSchedule& sched, const Vocabulary& vocab) {
    if (t < 1 || t > sched.T) throw std::out_of_range("forward_marginal: step out of range");
    if (x0 == vocab.mask_id) throw std::invalid_argument("forward_marginal: x_0 cannot be MASK");
    const double a = sched.alpha(t);
    return AbsorbDist{x0, a, 1.0 - a};
}

// q(x_{t-1} | x_t, x_0): point mass on x_t when x_t is unmasked; otherwise
// mass (alpha_{t-1} - alpha_t)/(1 - alpha_t) moves back to x_0 and the rest
// stays on MASK.
inline AbsorbDist posterior_step(Token x_t, Token x0, int t, const NoiseSchedule& sched, const Vocabulary& vocab) {
    if (t < 1 || t > sched.T) throw std::out_of_range("posterior_step: step out of range");
    if (x0 == vocab.mask_id) throw std::invalid_argument("posterior_step: x_0 cannot be MASK");
    if (x_t != vocab.mask_id) {
        if (x_t != x0) throw std::invalid_argument("posterior_step: unmasked x_t must equal x_0");
        return AbsorbDist{x0, 1.0, 0.0};
    }
    const double a_prev = sched.alpha(t - 1);
    const double a_cur = sched.alpha(t);
    const double denom = 1.0 - a_cur;
    if (denom <= 0.0) throw std::domain_error("posterior_step: alpha_t = 1, no position can be masked at this step");
    return AbsorbDist{x0, (a_prev - a_cur) / denom, (1.0 - a_prev) / denom};
}

// Per-masked-position loss coefficient (alpha_{t-1} - alpha_t)/(1 - alpha_t).
inline double loss_weight(int t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw std::out_of_range("loss_weight: step out of range");
    const double a_prev = sched.alpha(t - 1);
    const double a_cur = sched.alpha(t);
    if (a_cur >= 1.0) throw std::domain_error("loss_weight: alpha_t = 1 gives a zero-mass masking event");
    return (a_prev - a_cur) / (1.0 - a_cur);
}

constexpr double kMaskLevelEpsilon = 1e-3;

// Masking probability applied to each block for a sampled level t in (0,1).
inline double block_mask_probability(double mask_level) {
    return (1.0 - kMaskLevelEpsilon) * mask_level + kMaskLevelEpsilon;
}

// Training draws the masking level uniformly from (0.2, 0.8).
inline double draw_mask_level(Rng& rng) { return rng.uniform(0.2, 0.8); }

struct BlockMasking {
    TokenSeq masked;
    std::vector<char> block_masked;  // one flag per block
    bool fallback_applied = false;   // no block drawn; one was forced
    int forced_block = -1;
};

// Masks whole blocks i.i.d. with probability (1-eps)*mask_level + eps. If no
// block is drawn, exactly one uniformly random block is force-masked.
inline BlockMasking sample_block_masking(const TokenSeq& x0, const BlockPartition& part, const Vocabulary& vocab,
                                         double mask_level, Rng& rng) {
    if (static_cast<int>(x0.size()) != part.length())
        throw std::invalid_argument("sample_block_masking: sequence length does not match partition");
    if (has_mask(x0, vocab)) throw std::invalid_argument("sample_block_masking: x_0 must not contain MASK");
    if (mask_level < 0.0 || mask_level > 1.0) throw std::invalid_argument("sample_block_masking: mask level out of [0,1]");

    const double p = block_mask_probability(mask_level);
    BlockMasking out;
    out.masked = x0;
    out.block_masked.assign(part.num_blocks, 0);
    int masked_count = 0;
    for (int b = 0; b < part.num_blocks; ++b) {
        if (rng.bernoulli(p)) {
            out.block_masked[b] = 1;
            ++masked_count;
        }
    }
    if (masked_count == 0) {
        out.fallback_applied = true;
        out.forced_block = rng.uniform_int(part.num_blocks);
        out.block_masked[out.forced_block] = 1;
    }
    for (int b = 0; b < part.num_blocks; ++b) {
        if (!out.block_masked[b]) continue;
        for (int pos = part.block_begin(b); pos < part.block_end(b); ++pos) out.masked[pos] = vocab.mask_id;
    }
    return out;
}

}  // namespace blockdiff
