#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace blockdiff {

using Token = int;

// Token alphabet. The four reserved symbols (absorbing MASK, EOS, and the
// <think>/</think>-style boundary pair) live alongside the content tokens.
struct Vocabulary {
    int size = 0;
    Token mask_id = -1;
    Token eos_id = -1;
    Token bot_id = -1;  // block-prompt opening boundary
    Token eot_id = -1;  // block-prompt closing boundary

    // Content tokens 0..content-1, reserved symbols appended after them.
    static Vocabulary with_content(int content) {
        if (content < 1) throw std::invalid_argument("vocabulary needs at least one content token");
        Vocabulary v;
        v.size = content + 4;
        v.mask_id = content;
        v.eos_id = content + 1;
        v.bot_id = content + 2;
        v.eot_id = content + 3;
        return v;
    }

    void validate() const {
        if (size < 5) throw std::invalid_argument("vocabulary must hold 4 reserved symbols and >= 1 content token");
        const Token ids[4] = {mask_id, eos_id, bot_id, eot_id};
        for (int i = 0; i < 4; ++i) {
            if (ids[i] < 0 || ids[i] >= size) throw std::invalid_argument("reserved token id out of range");
            for (int j = i + 1; j < 4; ++j)
                if (ids[i] == ids[j]) throw std::invalid_argument("reserved token ids must be distinct");
        }
    }

    bool is_reserved(Token t) const { return t == mask_id || t == eos_id || t == bot_id || t == eot_id; }
    bool is_content(Token t) const { return t >= 0 && t < size && !is_reserved(t); }
    bool is_boundary(Token t) const { return t == bot_id || t == eot_id; }

    int content_count() const { return size - 4; }

    std::vector<Token> content_tokens() const {
        std::vector<Token> out;
        out.reserve(content_count());
        for (Token t = 0; t < size; ++t)
            if (!is_reserved(t)) out.push_back(t);
        return out;
    }
};

}  // namespace blockdiff
