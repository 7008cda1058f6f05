#pragma once

#include <stdexcept>
#include <vector>

#include "blockdiff/categorical.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/tabular_joint.hpp"

namespace blockdiff {

namespace detail {

// True iff the support sequence agrees with x_t on every unmasked position.
inline bool agrees_with_evidence(const TabularJoint& q, std::uint64_t key, const TokenSeq& x_t) {
    const auto vsize = static_cast<std::uint64_t>(q.vocab().size);
    for (int pos = 0; pos < q.length(); ++pos) {
        const Token obs = x_t[pos];
        const auto tok = static_cast<Token>(key % vsize);
        key /= vsize;
        if (obs != q.vocab().mask_id && obs != tok) return false;
    }
    return true;
}

}  // namespace detail

// Exact q(x_0^pos | x_t): condition the joint on the unmasked evidence.
// Conditioning on zero-mass evidence is an error, not a fallback.
inline Categorical conditional_marginal(const TabularJoint& q, const TokenSeq& x_t, int pos) {
    if (static_cast<int>(x_t.size()) != q.length()) throw std::invalid_argument("conditional_marginal: length mismatch");
    if (pos < 0 || pos >= q.length()) throw std::out_of_range("conditional_marginal: position out of range");
    if (x_t[pos] != q.vocab().mask_id) throw std::invalid_argument("conditional_marginal: position is not masked");
    Categorical out(q.vocab().size);
    double total = 0.0;
    for (const auto& [key, p] : q.support()) {
        if (!detail::agrees_with_evidence(q, key, x_t)) continue;
        out.p[q.token_at(key, pos)] += p;
        total += p;
    }
    if (total <= 0.0) throw std::domain_error("conditional_marginal: x_t is unreachable under q");
    for (double& v : out.p) v /= total;
    return out;
}

// Exact next-token conditional of q restricted to a fully masked block, given
// the unmasked context and the decoded block prefix. This is the ideal
// block-autoregressive executor.
inline Categorical block_conditional(const TabularJoint& q, const TokenSeq& x_t, const BlockPartition& part, int block,
                                     const TokenSeq& prefix) {
    if (static_cast<int>(x_t.size()) != q.length()) throw std::invalid_argument("block_conditional: length mismatch");
    if (part.length() != q.length()) throw std::invalid_argument("block_conditional: partition mismatch");
    if (block < 0 || block >= part.num_blocks) throw std::out_of_range("block_conditional: block out of range");
    if (!block_fully_masked(x_t, part, block, q.vocab()))
        throw std::invalid_argument("block_conditional: block must be fully masked in x_t");
    if (static_cast<int>(prefix.size()) >= part.block_size)
        throw std::invalid_argument("block_conditional: prefix must be shorter than the block");

    const int begin = part.block_begin(block);
    const int next = begin + static_cast<int>(prefix.size());
    Categorical out(q.vocab().size);
    double total = 0.0;
    for (const auto& [key, p] : q.support()) {
        if (!detail::agrees_with_evidence(q, key, x_t)) continue;
        bool match = true;
        for (int j = 0; j < static_cast<int>(prefix.size()); ++j) {
            if (q.token_at(key, begin + j) != prefix[j]) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        out.p[q.token_at(key, next)] += p;
        total += p;
    }
    if (total <= 0.0) throw std::domain_error("block_conditional: zero-mass prefix under q");
    for (double& v : out.p) v /= total;
    return out;
}

}  // namespace blockdiff
