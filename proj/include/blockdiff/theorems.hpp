#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "blockdiff/frechet.hpp"
#include "blockdiff/nelbo.hpp"
#include "blockdiff/oracle.hpp"
#include "blockdiff/schedule.hpp"
#include "blockdiff/tabular_joint.hpp"

namespace blockdiff {

struct VerifySizes {
    int content_max = 5;  // content alphabet sizes 2..content_max
    int length_max = 4;
    int steps_max = 4;
};

struct TheoremReport {
    // closed-form KL identity
    double kl_max_dev = 0.0;
    long long kl_cases = 0;
    bool kl_pass = false;

    // block-size bound: monotonicity and the gap identity
    double bound_worst_monotonicity = 0.0;  // most negative B_B - B_{B'} for B' > B
    double gap_max_dev = 0.0;
    double ln2_dev = 0.0;
    bool bound_pass = false;

    // marginal-truncation mode exclusion
    bool counterexample_excluded_k1 = false;
    bool counterexample_included_k2 = false;
    int product_false_exclusions = 0;
    int product_trials = 0;
    bool truncation_pass = false;

    bool all_pass() const { return kl_pass && bound_pass && truncation_pass; }

    std::string to_string() const {
        std::ostringstream out;
        char buf[256];
        std::snprintf(buf, sizeof(buf), "[%s] closed-form KL identity: max |closed - brute| = %.3e over %lld cases\n",
                      kl_pass ? "PASS" : "FAIL", kl_max_dev, kl_cases);
        out << buf;
        std::snprintf(buf, sizeof(buf),
                      "[%s] block NELBO bound: worst monotonicity slack = %.3e, max |gap - diff| = %.3e, "
                      "|gap - ln2| on the two-token instance = %.3e\n",
                      bound_pass ? "PASS" : "FAIL", bound_worst_monotonicity, gap_max_dev, ln2_dev);
        out << buf;
        std::snprintf(buf, sizeof(buf),
                      "[%s] top-k mode exclusion: counterexample excluded@k=1 %s, included@k=2 %s, "
                      "false exclusions on %d product joints = %d\n",
                      truncation_pass ? "PASS" : "FAIL", counterexample_excluded_k1 ? "yes" : "no",
                      counterexample_included_k2 ? "yes" : "no", product_trials, product_false_exclusions);
        out << buf;
        return out.str();
    }
};

// Exact executable checks: exhaustive small-instance sweep for the KL
// identity, random tiny joints for the block bound, and the fixed two-token
// counterexample plus random product joints for mode exclusion.
inline TheoremReport verify_theorems(const VerifySizes& sizes, int trials, std::uint64_t seed) {
    TheoremReport rep;
    Rng root(seed);

    // --- closed-form KL vs brute force ---
    {
        auto check_joint = [&](const TabularJoint& q, const NoiseSchedule& sched, int max_x0) {
            int used = 0;
            for (const auto& [key, p] : q.support()) {
                if (used++ >= max_x0) break;
                const TokenSeq x0 = q.decode(key);
                for (int t = 1; t <= sched.T; ++t) {
                    const auto r = kl_closed_form_check(q, sched, x0, t);
                    rep.kl_max_dev = std::max(rep.kl_max_dev, std::abs(r.closed - r.brute));
                    ++rep.kl_cases;
                }
            }
        };
        // exhaustive sweep over small sizes, every support point and step
        for (int content = 2; content <= sizes.content_max; ++content) {
            for (int length = 1; length <= sizes.length_max; ++length) {
                for (int steps = 1; steps <= sizes.steps_max; ++steps) {
                    auto rng = root.split("kl-sweep", (static_cast<std::uint64_t>(content) << 16) ^
                                                          (static_cast<std::uint64_t>(length) << 8) ^ steps);
                    const auto vocab = Vocabulary::with_content(content);
                    const auto q = random_joint(vocab, length, rng);
                    check_joint(q, NoiseSchedule::linear_alpha(steps), 1 << 30);
                }
            }
        }
        // extra random joints, sampled support points
        for (int trial = 0; trial < trials; ++trial) {
            auto rng = root.split("kl-random", static_cast<std::uint64_t>(trial));
            const int content = 2 + rng.uniform_int(sizes.content_max - 1);
            const int length = 1 + rng.uniform_int(sizes.length_max);
            const int steps = 1 + rng.uniform_int(sizes.steps_max);
            const auto vocab = Vocabulary::with_content(content);
            const auto q = random_joint(vocab, length, rng);
            check_joint(q, NoiseSchedule::linear_alpha(steps), 10);
        }
        rep.kl_pass = rep.kl_max_dev < 1e-9;
    }

    // --- block bound: B_1 >= B_2 >= B_4 and gap identity ---
    {
        rep.bound_worst_monotonicity = 1e300;
        const auto vocab = Vocabulary::with_content(3);
        const auto sched = NoiseSchedule::linear_alpha(2);
        for (int trial = 0; trial < trials; ++trial) {
            auto rng = root.split("bound", static_cast<std::uint64_t>(trial));
            const auto q = random_joint(vocab, 4, rng);
            const double b1 = nelbo_bound(q, sched, 1);
            const double b2 = nelbo_bound(q, sched, 2);
            const double b4 = nelbo_bound(q, sched, 4);
            rep.bound_worst_monotonicity = std::min({rep.bound_worst_monotonicity, b1 - b2, b2 - b4});
            rep.gap_max_dev = std::max(rep.gap_max_dev, std::abs(nelbo_gap(q, sched, 2) - (b1 - b2)));
            rep.gap_max_dev = std::max(rep.gap_max_dev, std::abs(nelbo_gap(q, sched, 4) - (b1 - b4)));
        }
        const auto pair_vocab = Vocabulary::with_content(2);
        const TabularJoint aabb(pair_vocab, 2, {{{0, 0}, 0.5}, {{1, 1}, 0.5}});
        const auto one_step = NoiseSchedule::linear_alpha(1);
        rep.ln2_dev = std::abs(nelbo_gap(aabb, one_step, 2) - std::log(2.0));
        rep.bound_pass = rep.bound_worst_monotonicity > -1e-9 && rep.gap_max_dev < 1e-9 && rep.ln2_dev < 1e-12;
    }

    // --- mode exclusion under top-k truncation ---
    {
        const auto vocab = Vocabulary::with_content(5);  // Roger, Houston, You, I, They
        const TabularJoint q(vocab, 2, {{{0, 0}, 0.45}, {{1, 2}, 0.25}, {{1, 3}, 0.25}, {{1, 4}, 0.05}});
        rep.counterexample_excluded_k1 = mode_exclusion_witness(q, 1).excluded;
        rep.counterexample_included_k2 = !mode_exclusion_witness(q, 2).excluded;
        rep.product_trials = std::max(100, trials);
        for (int trial = 0; trial < rep.product_trials; ++trial) {
            auto rng = root.split("product", static_cast<std::uint64_t>(trial));
            const auto pv = Vocabulary::with_content(2 + rng.uniform_int(4));
            const int block = 2 + rng.uniform_int(2);
            const auto pq = random_product_joint(pv, block, rng);
            const int k = 1 + rng.uniform_int(4);
            rep.product_false_exclusions += mode_exclusion_witness(pq, k).excluded ? 1 : 0;
        }
        rep.truncation_pass =
            rep.counterexample_excluded_k1 && rep.counterexample_included_k2 && rep.product_false_exclusions == 0;
    }

    return rep;
}

}  // namespace blockdiff
