#pragma once

#include <stdexcept>
#include <vector>

#include "blockdiff/vocab.hpp"

namespace blockdiff {

// A sequence of token ids; masked positions hold vocab.mask_id.
using TokenSeq = std::vector<Token>;

// Contiguous, disjoint blocks covering positions [i*B, (i+1)*B).
struct BlockPartition {
    int block_size = 0;
    int num_blocks = 0;

    static BlockPartition make(int length, int block_size) {
        if (length <= 0 || block_size <= 0) throw std::invalid_argument("length and block size must be positive");
        if (length % block_size != 0) throw std::invalid_argument("sequence length must be a multiple of the block size");
        return BlockPartition{block_size, length / block_size};
    }

    int length() const { return block_size * num_blocks; }
    int block_begin(int block) const { return block * block_size; }
    int block_end(int block) const { return (block + 1) * block_size; }
    int block_of(int pos) const { return pos / block_size; }
};

inline void validate_tokens(const TokenSeq& seq, const Vocabulary& vocab) {
    for (Token t : seq)
        if (t < 0 || t >= vocab.size) throw std::invalid_argument("token id out of vocabulary range");
}

inline bool has_mask(const TokenSeq& seq, const Vocabulary& vocab) {
    for (Token t : seq)
        if (t == vocab.mask_id) return true;
    return false;
}

inline int count_masks(const TokenSeq& seq, const Vocabulary& vocab) {
    int n = 0;
    for (Token t : seq) n += (t == vocab.mask_id);
    return n;
}

inline bool block_fully_masked(const TokenSeq& seq, const BlockPartition& part, int block, const Vocabulary& vocab) {
    for (int p = part.block_begin(block); p < part.block_end(block); ++p)
        if (seq[p] != vocab.mask_id) return false;
    return true;
}

inline bool block_has_mask(const TokenSeq& seq, const BlockPartition& part, int block, const Vocabulary& vocab) {
    for (int p = part.block_begin(block); p < part.block_end(block); ++p)
        if (seq[p] == vocab.mask_id) return true;
    return false;
}

// Number of committed positions at the front of a block. Engine state keeps
// blocks prefix-decoded: masked positions, if any, form the block's suffix.
inline int block_prefix_len(const TokenSeq& seq, const BlockPartition& part, int block, const Vocabulary& vocab) {
    int k = 0;
    for (int p = part.block_begin(block); p < part.block_end(block); ++p) {
        if (seq[p] == vocab.mask_id) break;
        ++k;
    }
    return k;
}

}  // namespace blockdiff
