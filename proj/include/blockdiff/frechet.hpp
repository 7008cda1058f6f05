#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "blockdiff/categorical.hpp"
#include "blockdiff/sequence.hpp"
#include "blockdiff/tabular_joint.hpp"

namespace blockdiff {

// Per-position categorical marginals over a block.
using MarginalSet = std::vector<Categorical>;

// Per-position top-k token sets and, when small enough, the materialized
// Cartesian product they induce. Any joint whose marginals are truncated to
// these sets has its support contained in the product.
struct FrechetSupport {
    int k = 0;
    std::vector<std::vector<Token>> sets;         // ascending token id per position
    std::optional<std::vector<TokenSeq>> product; // lexicographic, when <= kMaxProduct

    static constexpr std::size_t kMaxProduct = 100000;

    bool contains(const TokenSeq& block) const {
        if (block.size() != sets.size()) return false;
        for (std::size_t j = 0; j < sets.size(); ++j) {
            if (!std::binary_search(sets[j].begin(), sets[j].end(), block[j])) return false;
        }
        return true;
    }
};

// Top-k truncation of each positional marginal. Rank is by descending mass;
// equal masses resolve to the lower token index.
inline FrechetSupport frechet_truncate(const MarginalSet& marginals, int k) {
    if (k < 1) throw std::invalid_argument("frechet_truncate: k must be >= 1");
    if (marginals.empty()) throw std::invalid_argument("frechet_truncate: empty marginal set");
    FrechetSupport out;
    out.k = k;
    out.sets.reserve(marginals.size());
    std::size_t product_size = 1;
    for (const auto& pi : marginals) {
        std::vector<int> order;
        for (int t = 0; t < pi.size(); ++t)
            if (pi.p[t] > 0.0) order.push_back(t);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return pi.p[a] > pi.p[b]; });
        const auto keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
        std::vector<Token> set(order.begin(), order.begin() + keep);
        std::sort(set.begin(), set.end());
        product_size *= std::max<std::size_t>(set.size(), 1);
        out.sets.push_back(std::move(set));
    }
    if (product_size <= FrechetSupport::kMaxProduct) {
        std::vector<TokenSeq> product;
        product.reserve(product_size);
        TokenSeq current(out.sets.size());
        std::vector<std::size_t> idx(out.sets.size(), 0);
        while (true) {
            for (std::size_t j = 0; j < out.sets.size(); ++j) current[j] = out.sets[j][idx[j]];
            product.push_back(current);
            std::size_t j = out.sets.size();
            while (j > 0) {
                --j;
                if (++idx[j] < out.sets[j].size()) break;
                idx[j] = 0;
                if (j == 0) {
                    out.product = std::move(product);
                    return out;
                }
            }
        }
    }
    return out;
}

struct ModeExclusion {
    bool excluded = false;
    TokenSeq mode;
    FrechetSupport support;
};

// Whether truncating q's own marginals to top-k excludes the global mode of q
// from the reachable product support.
inline ModeExclusion mode_exclusion_witness(const TabularJoint& block_joint, int k) {
    ModeExclusion out;
    out.mode = block_joint.mode();
    out.support = frechet_truncate(block_joint.marginal_set(), k);
    out.excluded = !out.support.contains(out.mode);
    return out;
}

}  // namespace blockdiff
