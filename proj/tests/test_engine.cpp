#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "blockdiff/engine.hpp"

using namespace blockdiff;

namespace {

const Vocabulary kVocab = Vocabulary::with_content(4);

// Emits a fixed token pattern; used to exercise EOS and boundary policies.
class FixedExecutor : public BlockExecutor {
public:
    explicit FixedExecutor(TokenSeq pattern, const Vocabulary& vocab) : pattern_(std::move(pattern)), vocab_(vocab) {}
    BlockDecodeResult decode_suffix(const TokenSeq& x_t, const BlockPartition& part, int block,
                                    const std::vector<Categorical>&, const DecodeParams&, Rng&) const override {
        const int prefix = block_prefix_len(x_t, part, block, vocab_);
        BlockDecodeResult res;
        for (int j = prefix; j < part.block_size; ++j) {
            const Token tok = pattern_[cursor_++ % pattern_.size()];
            res.tokens.push_back(tok);
            res.dists.push_back(Categorical::point_mass(tok, vocab_.size));
        }
        return res;
    }

private:
    TokenSeq pattern_;
    Vocabulary vocab_;
    mutable std::size_t cursor_ = 0;
};

// Replays a trace against a fresh sequence, checking scope containment and
// monotone progress from the recorded commits alone.
void replay_and_check(const TokenSeq& prompt, const BlockPartition& part, const GenResult& res, int scope) {
    TokenSeq seq = prompt;
    seq.resize(part.length(), kVocab.mask_id);
    detail::apply_eos_termination(seq, kVocab);
    int iter = 0;
    std::vector<int> candidates;
    std::size_t row_idx = 0;
    while (row_idx < res.trace.size()) {
        ++iter;
        candidates = candidate_scope(seq, part, kVocab, scope);
        const int before = count_masks(seq, kVocab);
        while (row_idx < res.trace.size() && res.trace[row_idx].iter == iter) {
            const TraceRow& row = res.trace[row_idx];
            bool in_scope = false;
            for (int c : candidates) in_scope = in_scope || c == row.block;
            REQUIRE(in_scope);
            const int start = part.block_begin(row.block) + block_prefix_len(seq, part, row.block, kVocab);
            for (int j = 0; j < row.k; ++j) seq[start + j] = row.committed[j];
            ++row_idx;
        }
        detail::apply_eos_termination(seq, kVocab);
        REQUIRE(count_masks(seq, kVocab) < before);  // monotone progress
    }
    REQUIRE(seq == res.seq);
}

}  // namespace

TEST_CASE("block_entropy is the mean of the first k entropies") {
    std::vector<Categorical> points(3, Categorical::point_mass(1, kVocab.size));
    REQUIRE(block_entropy(points, 3) == 0.0);

    std::vector<Categorical> uniform(4, Categorical::uniform_over(kVocab.content_tokens(), kVocab.size));
    REQUIRE(block_entropy(uniform, 3) == Catch::Approx(std::log(4.0)).margin(1e-12));

    REQUIRE_THROWS(block_entropy(points, 0));
    REQUIRE_THROWS(block_entropy(points, 4));
}

TEST_CASE("k_star follows max{k : h(k) <= tau}") {
    const std::vector<double> ent{0.1, 0.2, 0.9, 0.9};
    REQUIRE(k_star(ent, 0.2) == 2);  // h(1)=0.1, h(2)=0.15, h(3)=0.4
    REQUIRE(k_star(ent, 0.05) == 0);
    REQUIRE(k_star(ent, 1e9) == 4);
    const std::vector<double> pair{0.1, 0.2};
    REQUIRE(k_star(pair, 0.150001) == 2);  // h(2) = 0.15
    REQUIRE(k_star(pair, 0.149) == 1);
}

TEST_CASE("k_star is monotone in tau") {
    Rng rng(88);
    for (int trial = 0; trial < 200; ++trial) {
        auto rr = rng.split(static_cast<std::uint64_t>(trial));
        std::vector<double> ent(1 + rr.uniform_int(8));
        for (auto& e : ent) e = rr.uniform(0.0, 2.0);
        const double t1 = rr.uniform(0.0, 2.0);
        const double t2 = t1 + rr.uniform(0.0, 2.0);
        REQUIRE(k_star(ent, t1) <= k_star(ent, t2));
    }
}

TEST_CASE("select_static picks the lowest-entropy blocks with index ties") {
    REQUIRE(select_static({3, 4, 5}, {0.5, 0.2, 0.9}, 1) == std::vector<int>{4});
    REQUIRE(select_static({3, 4}, {0.2, 0.2}, 1) == std::vector<int>{3});
    REQUIRE(select_static({3, 4, 5}, {0.5, 0.2, 0.9}, 2) == std::vector<int>{4, 3});
    REQUIRE_THROWS(select_static({}, {}, 1));
}

TEST_CASE("candidate_scope returns masked blocks from the frontier") {
    const auto part = BlockPartition::make(46, 2);  // 23 blocks
    TokenSeq seq(46, kVocab.mask_id);
    for (int p = 0; p < 6; ++p) seq[p] = 0;  // blocks 0..2 done
    auto c = candidate_scope(seq, part, kVocab, 10);
    REQUIRE(c.size() == 10);
    REQUIRE(c.front() == 3);
    REQUIRE(c.back() == 12);

    c = candidate_scope(seq, part, kVocab, 50);
    REQUIRE(c.size() == 20);  // all remaining

    TokenSeq done(46, 0);
    REQUIRE(candidate_scope(done, part, kVocab, 10).empty());
}

TEST_CASE("static accounting: B=4, L=64, no EOS completes in exactly 16 iterations") {
    const auto part = BlockPartition::make(64, 4);
    UniformMarginalPredictor pred(kVocab);
    IndependentBlockExecutor exec(kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 7);
    REQUIRE(res.stats.completed);
    REQUIRE(res.stats.steps == 16);
    REQUIRE(res.stats.decoded_tokens == 64);
    REQUIRE(res.stats.tokens_per_step == Catch::Approx(4.0));
    replay_and_check({}, part, res, cfg.scope);
}

TEST_CASE("static accounting with blocks_per_step = 2") {
    const auto part = BlockPartition::make(32, 4);
    UniformMarginalPredictor pred(kVocab);
    IndependentBlockExecutor exec(kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    cfg.blocks_per_step = 2;
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 7);
    REQUIRE(res.stats.completed);
    REQUIRE(res.stats.steps == 4);
    for (int it = 1; it <= 4; ++it) {
        int committed = 0;
        for (const auto& row : res.trace)
            if (row.iter == it) committed += row.k;
        REQUIRE(committed == 8);  // n * B exactly
    }
}

TEST_CASE("dynamic with tiny tau commits one token per iteration via the DLM fallback") {
    const auto part = BlockPartition::make(24, 4);
    UniformMarginalPredictor pred(kVocab);
    IndependentBlockExecutor exec(kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kDynamic;
    cfg.tau = 1e-9;
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 19);
    REQUIRE(res.stats.completed);
    REQUIRE(res.stats.steps == 24);
    REQUIRE(res.stats.tokens_per_step == Catch::Approx(1.0));
    for (const auto& row : res.trace) {
        REQUIRE(row.fallback);
        REQUIRE(row.k == 1);
    }
    replay_and_check({}, part, res, cfg.scope);
}

TEST_CASE("dynamic with huge tau commits whole blocks") {
    const auto part = BlockPartition::make(24, 4);
    UniformMarginalPredictor pred(kVocab);
    IndependentBlockExecutor exec(kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kDynamic;
    cfg.tau = 1e9;
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 19);
    REQUIRE(res.stats.completed);
    REQUIRE(res.stats.steps == 6);
    for (const auto& row : res.trace) REQUIRE(row.k == 4);
}

TEST_CASE("oracle predictor and executor never commit incoherent blocks") {
    const auto vocab = Vocabulary::with_content(2);
    const TabularJoint q(vocab, 2, {{{0, 0}, 0.5}, {{1, 1}, 0.5}});
    const auto part = BlockPartition::make(2, 2);
    OracleMarginalPredictor pred(q);
    OracleBlockExecutor exec(q);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const auto res = generate({}, part, pred, exec, vocab, cfg, seed);
        REQUIRE(res.stats.completed);
        const bool aa = res.seq == TokenSeq{0, 0};
        const bool bb = res.seq == TokenSeq{1, 1};
        REQUIRE((aa || bb));
    }
}

TEST_CASE("token-independent baseline is incoherent about half the time on {AA,BB}") {
    const auto vocab = Vocabulary::with_content(2);
    const TabularJoint q(vocab, 2, {{{0, 0}, 0.5}, {{1, 1}, 0.5}});
    const auto part = BlockPartition::make(2, 2);
    OracleMarginalPredictor pred(q);
    IndependentBlockExecutor exec(vocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    int incoherent = 0;
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) {
        const auto res = generate({}, part, pred, exec, vocab, cfg, 1000 + i);
        incoherent += (res.seq[0] != res.seq[1]);
    }
    const double rate = static_cast<double>(incoherent) / trials;
    REQUIRE(std::abs(rate - 0.5) < 3.0 * std::sqrt(0.25 / trials));
}

TEST_CASE("oracle generation yields sequences with positive probability under q") {
    const auto vocab = Vocabulary::with_content(3);
    Rng rng(3);
    const auto q = random_joint(vocab, 4, rng);
    const auto part = BlockPartition::make(4, 2);
    OracleMarginalPredictor pred(q);
    OracleBlockExecutor exec(q);
    for (ScheduleMode mode : {ScheduleMode::kStatic, ScheduleMode::kDynamic}) {
        SchedulerConfig cfg;
        cfg.mode = mode;
        cfg.tau = 0.4;
        for (std::uint64_t seed = 0; seed < 16; ++seed) {
            const auto res = generate({}, part, pred, exec, vocab, cfg, seed);
            REQUIRE(res.stats.completed);
            REQUIRE(q.prob(res.seq) > 0.0);
            replay_and_check({}, part, res, cfg.scope);
        }
    }
}

TEST_CASE("prompt positions are pinned and partial prompt blocks continue") {
    const auto part = BlockPartition::make(8, 4);
    UniformMarginalPredictor pred(kVocab);
    IndependentBlockExecutor exec(kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    const TokenSeq prompt{2, 3};  // half of block 0
    const auto res = generate(prompt, part, pred, exec, kVocab, cfg, 5);
    REQUIRE(res.stats.completed);
    REQUIRE(res.seq[0] == 2);
    REQUIRE(res.seq[1] == 3);
    REQUIRE(res.stats.decoded_tokens == 6);
    REQUIRE(res.stats.steps == 2);
    replay_and_check(prompt, part, res, cfg.scope);
    REQUIRE_THROWS(generate({kVocab.mask_id}, part, pred, exec, kVocab, cfg, 5));
}

TEST_CASE("EOS termination autofills the tail") {
    const auto part = BlockPartition::make(12, 4);
    UniformMarginalPredictor pred(kVocab);
    FixedExecutor exec({0, 1, kVocab.eos_id, 2}, kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 5);
    REQUIRE(res.stats.completed);
    REQUIRE(res.seq[2] == kVocab.eos_id);
    REQUIRE(res.seq[3] == 2);  // decoded in the same block commit, never remasked
    for (int p = 4; p < 12; ++p) REQUIRE(res.seq[p] == kVocab.eos_id);
    REQUIRE(res.stats.steps == 1);
    REQUIRE(res.stats.autofilled == 8);  // masked positions 4..11
}

TEST_CASE("boundary tokens inside a block are replaced by EOS and logged") {
    const auto part = BlockPartition::make(4, 4);
    UniformMarginalPredictor pred(kVocab);
    FixedExecutor exec({0, kVocab.bot_id, 1, 2}, kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kStatic;
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 5);
    REQUIRE(res.stats.boundary_replacements == 1);
    REQUIRE(res.seq[1] == kVocab.eos_id);
}

TEST_CASE("safety cap aborts a slow run with a partial trace") {
    const auto part = BlockPartition::make(32, 16);  // cap = 10 * 2 = 20 < 32
    UniformMarginalPredictor pred(kVocab);
    IndependentBlockExecutor exec(kVocab);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kDynamic;
    cfg.tau = 1e-9;  // one token per iteration
    const auto res = generate({}, part, pred, exec, kVocab, cfg, 2);
    REQUIRE_FALSE(res.stats.completed);
    REQUIRE(res.stats.steps == 20);
    REQUIRE(count_masks(res.seq, kVocab) == 12);
    REQUIRE(res.trace.size() == 20);
}

TEST_CASE("generation is deterministic given the seed") {
    const auto vocab = Vocabulary::with_content(3);
    Rng rng(9);
    const auto q = random_joint(vocab, 4, rng);
    const auto part = BlockPartition::make(4, 2);
    OracleMarginalPredictor pred(q);
    OracleBlockExecutor exec(q);
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kDynamic;
    cfg.tau = 0.5;
    const auto a = generate({}, part, pred, exec, vocab, cfg, 123);
    const auto b = generate({}, part, pred, exec, vocab, cfg, 123);
    REQUIRE(a.seq == b.seq);
    REQUIRE(trace_to_csv(a.trace) == trace_to_csv(b.trace));
}

TEST_CASE("scheduler config validation") {
    SchedulerConfig cfg;
    cfg.mode = ScheduleMode::kDynamic;
    cfg.tau = 0.0;
    REQUIRE_THROWS(cfg.validate());
    cfg.tau = 0.5;
    cfg.scope = 0;
    REQUIRE_THROWS(cfg.validate());
}

TEST_CASE("trace CSV has the documented schema") {
    std::vector<TraceRow> trace{{1, 2, 3, false, 0.25, {0, 1, 2}}};
    const auto csv = trace_to_csv(trace);
    REQUIRE(csv == "iter,block,k,fallback,entropy,committed_tokens\n1,2,3,0,0.25,0 1 2\n");
    GenStats s;
    s.tokens_per_step = 4.0;
    s.steps = 16;
    s.executor_calls = 16;
    REQUIRE(stats_to_csv(s) == "tokens_per_step,steps,executor_calls\n4,16,16\n");
}
