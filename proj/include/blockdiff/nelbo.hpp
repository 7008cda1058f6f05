#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "blockdiff/oracle.hpp"
#include "blockdiff/schedule.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/tabular_joint.hpp"

namespace blockdiff {

// Exact lowest-achievable NELBO under block independence, computed by
// exhaustive expectation over the forward process. For each step t the joint
// mass of (x_{t-1}, x_t) is enumerated over the data support and all
// mask-pattern pairs M_{t-1} subseteq M_t, then reduced to the conditional
// entropies the bound needs:
//   bound  = H[x_0] + sum_t ( sum_i H[b^i_{t-1}|x_t] - H[x_{t-1}|x_t] )
//   gap    = sum_t sum_i ( sum_j H[x^{(i-1)B+j}_{t-1}|x_t] - H[b^i_{t-1}|x_t] )
struct NelboBreakdown {
    double data_entropy = 0.0;
    std::vector<double> across_per_t;  // total correlation across blocks, per step
    std::vector<double> within_per_t;  // total correlation within blocks, per step

    double bound() const {
        double b = data_entropy;
        for (double v : across_per_t) b += v;
        return b;
    }
    double gap() const {
        double g = 0.0;
        for (double v : within_per_t) g += v;
        return g;
    }
};

namespace detail {

struct MaskedKeyMaps {
    // all keyed by the encoded x_t
    std::unordered_map<std::uint64_t, double> pt;
    std::unordered_map<std::uint64_t, std::unordered_map<std::uint64_t, double>> prev;
    std::vector<std::unordered_map<std::uint64_t, std::unordered_map<std::uint64_t, double>>> block;
    std::vector<std::unordered_map<std::uint64_t, std::unordered_map<int, double>>> pos;
};

inline double conditional_entropy_sum(const std::unordered_map<std::uint64_t, double>& pt, const auto& joint) {
    double h = 0.0;
    for (const auto& [xt, inner] : joint) {
        const double pxt = pt.at(xt);
        for (const auto& [a, pab] : inner) {
            if (pab > 0.0) h += pab * (std::log(pxt) - std::log(pab));
        }
    }
    return h;
}

}  // namespace detail

inline NelboBreakdown nelbo_breakdown(const TabularJoint& q, const NoiseSchedule& sched, int block_size) {
    const int L = q.length();
    const BlockPartition part = BlockPartition::make(L, block_size);
    const double cost = static_cast<double>(q.support().size()) * std::pow(3.0, L) * sched.T;
    if (L > 20 || cost > 2e8)
        throw std::invalid_argument("nelbo: instance too large (support=" + std::to_string(q.support().size()) +
                                    ", L=" + std::to_string(L) + ", T=" + std::to_string(sched.T) + ")");

    const auto vsize = static_cast<std::uint64_t>(q.vocab().size);
    const Token mask = q.vocab().mask_id;
    // place-value factors for re-keying one position
    std::vector<std::uint64_t> place(L, 1);
    for (int i = 1; i < L; ++i) place[i] = place[i - 1] * vsize;

    NelboBreakdown out;
    out.data_entropy = q.entropy();
    out.across_per_t.assign(sched.T, 0.0);
    out.within_per_t.assign(sched.T, 0.0);

    const int full = (1 << L) - 1;
    for (int t = 1; t <= sched.T; ++t) {
        const double a_prev = sched.alpha(t - 1);
        const double b_t = sched.beta_at(t);
        std::vector<double> pow_aprev(L + 1, 1.0), pow_1maprev(L + 1, 1.0), pow_beta(L + 1, 1.0), pow_1mbeta(L + 1, 1.0);
        for (int i = 1; i <= L; ++i) {
            pow_aprev[i] = pow_aprev[i - 1] * a_prev;
            pow_1maprev[i] = pow_1maprev[i - 1] * (1.0 - a_prev);
            pow_beta[i] = pow_beta[i - 1] * b_t;
            pow_1mbeta[i] = pow_1mbeta[i - 1] * (1.0 - b_t);
        }

        detail::MaskedKeyMaps maps;
        maps.block.resize(part.num_blocks);
        maps.pos.resize(L);

        for (const auto& [key0, q0] : q.support()) {
            // cache the masked key per pattern incrementally is overkill at
            // these sizes; recompute per pattern instead.
            for (int mprev = 0; mprev <= full; ++mprev) {
                const int nprev = __builtin_popcount(static_cast<unsigned>(mprev));
                const double wprev = q0 * pow_1maprev[nprev] * pow_aprev[L - nprev];
                if (wprev <= 0.0) continue;
                std::uint64_t prev_key = key0;
                for (int i = 0; i < L; ++i) {
                    if (mprev & (1 << i)) prev_key += (mask - q.token_at(key0, i)) * place[i];
                }
                const int comp = full & ~mprev;
                int add = comp;
                while (true) {
                    const int mnext = mprev | add;
                    const int nadd = __builtin_popcount(static_cast<unsigned>(add));
                    const int nfree = L - __builtin_popcount(static_cast<unsigned>(mnext));
                    const double w = wprev * pow_beta[nadd] * pow_1mbeta[nfree];
                    if (w > 0.0) {
                        std::uint64_t next_key = prev_key;
                        for (int i = 0; i < L; ++i) {
                            if (add & (1 << i)) next_key += (mask - q.token_at(key0, i)) * place[i];
                        }
                        maps.pt[next_key] += w;
                        maps.prev[next_key][prev_key] += w;
                        for (int blk = 0; blk < part.num_blocks; ++blk) {
                            std::uint64_t bk = 0;
                            for (int p = part.block_end(blk) - 1; p >= part.block_begin(blk); --p) {
                                const Token tok = (mprev & (1 << p)) ? mask : q.token_at(key0, p);
                                bk = bk * vsize + tok;
                            }
                            maps.block[blk][next_key][bk] += w;
                        }
                        for (int p = 0; p < L; ++p) {
                            const Token tok = (mprev & (1 << p)) ? mask : q.token_at(key0, p);
                            maps.pos[p][next_key][tok] += w;
                        }
                    }
                    if (add == 0) break;
                    add = (add - 1) & comp;
                }
            }
        }

        const double h_prev = detail::conditional_entropy_sum(maps.pt, maps.prev);
        double sum_block = 0.0;
        for (int blk = 0; blk < part.num_blocks; ++blk) sum_block += detail::conditional_entropy_sum(maps.pt, maps.block[blk]);
        double sum_pos = 0.0;
        for (int p = 0; p < L; ++p) sum_pos += detail::conditional_entropy_sum(maps.pt, maps.pos[p]);

        out.across_per_t[t - 1] = sum_block - h_prev;
        out.within_per_t[t - 1] = sum_pos - sum_block;
    }
    return out;
}

inline double nelbo_bound(const TabularJoint& q, const NoiseSchedule& sched, int block_size) {
    return nelbo_breakdown(q, sched, block_size).bound();
}

inline double nelbo_gap(const TabularJoint& q, const NoiseSchedule& sched, int block_size) {
    return nelbo_breakdown(q, sched, block_size).gap();
}

struct KlCheckResult {
    double closed = 0.0;
    double brute = 0.0;
};

// Proposition check: the closed-form weighted cross-entropy against the KL
// divergence D(q(x_{t-1}|x_t,x_0) || p_theta(x_{t-1}|x_t)) summed literally
// over all x_{t-1}, with p_theta the exact conditional-marginal oracle. Both
// sides are averaged exactly over q(x_t | x_0) by enumerating mask patterns.
inline KlCheckResult kl_closed_form_check(const TabularJoint& q, const NoiseSchedule& sched, const TokenSeq& x0, int t) {
    const int L = q.length();
    if (static_cast<int>(x0.size()) != L) throw std::invalid_argument("kl_closed_form_check: length mismatch");
    if (has_mask(x0, q.vocab())) throw std::invalid_argument("kl_closed_form_check: x_0 must not contain MASK");
    if (t < 1 || t > sched.T) throw std::out_of_range("kl_closed_form_check: step out of range");
    if (L > 12) throw std::invalid_argument("kl_closed_form_check: L too large for exhaustive patterns");
    if (q.prob(x0) <= 0.0) throw std::invalid_argument("kl_closed_form_check: x_0 must lie in the support of q");

    const double a_prev = sched.alpha(t - 1);
    const double a_cur = sched.alpha(t);
    const Token mask = q.vocab().mask_id;
    const int vsize = q.vocab().size;

    KlCheckResult res;
    const int full = (1 << L) - 1;
    for (int m = 0; m <= full; ++m) {
        const int nm = __builtin_popcount(static_cast<unsigned>(m));
        const double pw = std::pow(1.0 - a_cur, nm) * std::pow(a_cur, L - nm);
        if (pw <= 0.0) continue;
        TokenSeq x_t = x0;
        std::vector<int> masked_pos;
        for (int i = 0; i < L; ++i) {
            if (m & (1 << i)) {
                x_t[i] = mask;
                masked_pos.push_back(i);
            }
        }
        if (masked_pos.empty()) continue;  // both terms vanish with no masked position

        const double w = (a_prev - a_cur) / (1.0 - a_cur);
        const double p_stay_mask = (1.0 - a_prev) / (1.0 - a_cur);

        std::vector<Categorical> pi;
        pi.reserve(masked_pos.size());
        for (int p : masked_pos) pi.push_back(conditional_marginal(q, x_t, p));

        double closed = 0.0;
        for (std::size_t j = 0; j < masked_pos.size(); ++j) closed += -w * std::log(pi[j].p[x0[masked_pos[j]]]);

        // literal sum over x_{t-1}: every masked position ranges over the
        // whole vocabulary (unmasked positions are pinned by the posterior)
        double brute = 0.0;
        const auto n_masked = static_cast<int>(masked_pos.size());
        std::vector<int> assign(n_masked, 0);
        while (true) {
            double q_mass = 1.0;
            double log_q = 0.0, log_p = 0.0;
            for (int j = 0; j < n_masked; ++j) {
                const Token v = assign[j];
                const Token orig = x0[masked_pos[j]];
                double qv;
                if (v == orig) qv = w;
                else if (v == mask) qv = 1.0 - w;
                else qv = 0.0;
                if (qv <= 0.0) {
                    q_mass = 0.0;
                    break;
                }
                const double pv = (v == mask) ? p_stay_mask : pi[j].p[v] * w;
                q_mass *= qv;
                log_q += std::log(qv);
                log_p += std::log(pv);
            }
            if (q_mass > 0.0) brute += q_mass * (log_q - log_p);
            int j = 0;
            for (; j < n_masked; ++j) {
                if (++assign[j] < vsize) break;
                assign[j] = 0;
            }
            if (j == n_masked) break;
        }

        res.closed += pw * closed;
        res.brute += pw * brute;
    }
    return res;
}

}  // namespace blockdiff
