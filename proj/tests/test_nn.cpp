#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "blockdiff/denoiser.hpp"
#include "blockdiff/executor.hpp"
#include "blockdiff/train.hpp"

using namespace blockdiff;

namespace {

const Vocabulary kVocab = Vocabulary::with_content(4);

Categorical random_content_dist(Rng& rng) {
    Categorical pi(kVocab.size);
    double s = 0.0;
    for (Token v : kVocab.content_tokens()) {
        pi.p[v] = rng.uniform01() + 1e-3;
        s += pi.p[v];
    }
    for (double& v : pi.p) v /= s;
    return pi;
}

std::vector<TokenSeq> toy_dataset(int n, int length, Rng& rng) {
    std::vector<TokenSeq> data;
    for (int i = 0; i < n; ++i) {
        TokenSeq s(length);
        for (auto& t : s) t = rng.uniform_int(kVocab.content_count());
        data.push_back(std::move(s));
    }
    return data;
}

}  // namespace

TEST_CASE("soft_embed: degenerate, uniform, and brute-force cases") {
    const int d = 8;
    Rng rng(7);
    std::vector<double> emb(static_cast<std::size_t>(kVocab.size) * d);
    for (auto& v : emb) v = rng.normal();

    // point mass reproduces the embedding row exactly
    MarginalSet point{Categorical::point_mass(2, kVocab.size)};
    auto rows = soft_embed(point, emb.data(), kVocab.size, d);
    for (int e = 0; e < d; ++e) REQUIRE(rows[e] == emb[2 * d + e]);

    // uniform over {0,1} averages the rows
    Categorical two(kVocab.size);
    two.p[0] = 0.5;
    two.p[1] = 0.5;
    rows = soft_embed({two}, emb.data(), kVocab.size, d);
    for (int e = 0; e < d; ++e) REQUIRE(rows[e] == Catch::Approx(0.5 * (emb[e] + emb[d + e])).margin(1e-12));

    // random mixture matches a direct summation oracle
    const auto pi = random_content_dist(rng);
    rows = soft_embed({pi}, emb.data(), kVocab.size, d);
    for (int e = 0; e < d; ++e) {
        double brute = 0.0;
        for (Token v = 0; v < kVocab.size; ++v) brute += pi.p[v] * emb[static_cast<std::size_t>(v) * d + e];
        REQUIRE(std::abs(rows[e] - brute) < 1e-6);
    }

    Categorical wrong(kVocab.size + 3);
    REQUIRE_THROWS(soft_embed({wrong}, emb.data(), kVocab.size, d));
}

TEST_CASE("soft_embed is linear in the marginals") {
    const int d = 6;
    Rng rng(13);
    std::vector<double> emb(static_cast<std::size_t>(kVocab.size) * d);
    for (auto& v : emb) v = rng.normal();
    for (int trial = 0; trial < 10; ++trial) {
        auto rr = rng.split(static_cast<std::uint64_t>(trial));
        const auto a = random_content_dist(rr);
        const auto b = random_content_dist(rr);
        const double lam = rr.uniform01();
        Categorical mix(kVocab.size);
        for (Token v = 0; v < kVocab.size; ++v) mix.p[v] = lam * a.p[v] + (1.0 - lam) * b.p[v];
        const auto ra = soft_embed({a}, emb.data(), kVocab.size, d);
        const auto rb = soft_embed({b}, emb.data(), kVocab.size, d);
        const auto rm = soft_embed({mix}, emb.data(), kVocab.size, d);
        for (int e = 0; e < d; ++e) REQUIRE(std::abs(rm[e] - (lam * ra[e] + (1.0 - lam) * rb[e])) < 1e-6);
    }
}

TEST_CASE("build_block_prompt frames soft rows with boundary embeddings") {
    const int d = 5;
    Rng rng(3);
    std::vector<double> emb(static_cast<std::size_t>(kVocab.size) * d);
    for (auto& v : emb) v = rng.normal();

    MarginalSet pis(4, random_content_dist(rng));
    auto rows = build_block_prompt(pis, emb.data(), kVocab, d);
    REQUIRE(rows.size() == 6u * d);
    for (int e = 0; e < d; ++e) {
        REQUIRE(rows[e] == emb[static_cast<std::size_t>(kVocab.bot_id) * d + e]);
        REQUIRE(rows[5 * d + e] == emb[static_cast<std::size_t>(kVocab.eot_id) * d + e]);
    }

    MarginalSet one(1, random_content_dist(rng));
    REQUIRE(build_block_prompt(one, emb.data(), kVocab, d).size() == 3u * d);

    // EOS-predicted position gets the hard EOS embedding
    Categorical eosish(kVocab.size);
    eosish.p[kVocab.eos_id] = 0.6;
    eosish.p[0] = 0.4;
    rows = build_block_prompt({eosish}, emb.data(), kVocab, d);
    for (int e = 0; e < d; ++e) REQUIRE(rows[d + e] == emb[static_cast<std::size_t>(kVocab.eos_id) * d + e]);
}

TEST_CASE("hard_condition_prompt takes argmax rows") {
    const int d = 4;
    const auto vocab = Vocabulary::with_content(5);  // Roger=0 Houston=1 You=2 I=3 They=4
    Rng rng(9);
    std::vector<double> emb(static_cast<std::size_t>(vocab.size) * d);
    for (auto& v : emb) v = rng.normal();

    Categorical pi1(vocab.size), pi2(vocab.size);
    pi1.p[0] = 0.45;
    pi1.p[1] = 0.55;
    pi2.p[0] = 0.45;
    pi2.p[2] = 0.25;
    pi2.p[3] = 0.25;
    pi2.p[4] = 0.05;
    const auto rows = hard_condition_prompt({pi1, pi2}, emb.data(), vocab, d);
    for (int e = 0; e < d; ++e) {
        REQUIRE(rows[d + e] == emb[1 * d + e]);      // Houston
        REQUIRE(rows[2 * d + e] == emb[0 * d + e]);  // Roger
    }

    // degenerate marginals: hard == soft
    MarginalSet points{Categorical::point_mass(2, vocab.size), Categorical::point_mass(4, vocab.size)};
    const auto hard = hard_condition_prompt(points, emb.data(), vocab, d);
    const auto soft = build_block_prompt(points, emb.data(), vocab, d);
    REQUIRE(hard == soft);

    // uniform marginal: argmax tie resolves to the lowest index
    Categorical uni(vocab.size);
    for (Token t : vocab.content_tokens()) uni.p[t] = 0.2;
    const auto tied = hard_condition_prompt({uni}, emb.data(), vocab, d);
    for (int e = 0; e < d; ++e) REQUIRE(tied[d + e] == emb[e]);
}

TEST_CASE("denoiser copy-through and output support") {
    DenoiserConfig cfg;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    cfg.max_seq = 8;
    TinyDenoiser den(kVocab, cfg, 42);
    TokenSeq x_t{1, kVocab.mask_id, 3, kVocab.mask_id};
    const auto pis = den.predict(x_t);
    REQUIRE(pis.size() == 4);
    REQUIRE(pis[0].p[1] == 1.0);
    REQUIRE(pis[2].p[3] == 1.0);
    for (const auto& pi : pis) {
        REQUIRE(pi.sum() == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(pi.p[kVocab.mask_id] == 0.0);
        REQUIRE(pi.p[kVocab.bot_id] == 0.0);
        REQUIRE(pi.p[kVocab.eot_id] == 0.0);
    }
}

TEST_CASE("executor likelihoods follow the chain rule") {
    ExecutorConfig cfg;
    cfg.block_size = 3;
    TinyARExecutor ex(kVocab, cfg, 5);
    Rng rng(77);
    MarginalSet pis(3, random_content_dist(rng));
    const auto prompt = ex.prompt_rows({}, pis, Conditioning::kSoft);
    const TokenSeq target{0, 2, 1};
    const double nll = ex.teacher_forced_nll(prompt, target, 1.0, false);
    const auto steps = ex.step_probabilities(prompt, target);
    double prod = 1.0;
    for (double p : steps) prod *= p;
    REQUIRE(std::abs(std::exp(-nll) - prod) < 1e-6);
    for (const auto& d : ex.decode(prompt, 3, DecodeParams{true, 1.0, 1.0}, rng).dists)
        REQUIRE(d.sum() == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("executor decode stops at EOS and pads to the block") {
    ExecutorConfig cfg;
    cfg.block_size = 4;
    TinyARExecutor ex(kVocab, cfg, 8);
    // force EOS as the first sampled token via the readout bias
    const int bias_id = ex.params().find("executor.readout_b");
    ex.params().val(bias_id)[kVocab.eos_id] = 1e4;
    Rng rng(1);
    MarginalSet pis(4, Categorical::point_mass(0, kVocab.size));
    const auto prompt = ex.prompt_rows({}, pis, Conditioning::kSoft);
    const auto dec = ex.decode(prompt, 4, DecodeParams{true, 1.0, 1.0}, rng);
    REQUIRE(dec.stopped_at_eos);
    REQUIRE(dec.tokens.size() == 4);
    for (Token t : dec.tokens) REQUIRE(t == kVocab.eos_id);
    REQUIRE(dec.dists.size() == 4);
}

TEST_CASE("block_loss: point-mass executor gives zero loss, uniform gives ln|content|") {
    const int L = 2;
    const auto part = BlockPartition::make(L, 1);
    const auto vocab8 = Vocabulary::with_content(8);

    DenoiserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.d_ff = 32;
    dcfg.n_heads = 2;
    dcfg.max_seq = L;
    TinyDenoiser den(vocab8, dcfg, 3);

    ExecutorConfig cfg;
    cfg.block_size = 1;
    TinyARExecutor ex(vocab8, cfg, 4);
    // zero the trunk readout, push reserved symbols out of the support:
    // predictions become uniform over the 8 content tokens
    for (double& v : ex.params().value) v = 0.0;
    const int bias_id = ex.params().find("executor.readout_b");
    ex.params().val(bias_id)[vocab8.eos_id] = -1e4;
    ex.params().val(bias_id)[vocab8.bot_id] = -1e4;
    ex.params().val(bias_id)[vocab8.eot_id] = -1e4;

    TokenSeq x0{3, 5};
    TokenSeq masked{vocab8.mask_id, vocab8.mask_id};
    const double loss = block_loss(den, ex, x0, masked, part, 1.0, Conditioning::kSoft, false);
    REQUIRE(loss == Catch::Approx(2.0 * std::log(8.0)).margin(1e-9));

    // point mass on the ground-truth token: zero loss
    ex.params().val(bias_id)[x0[0]] = 1e4;
    TokenSeq one_masked{vocab8.mask_id, x0[1]};
    const double zero = block_loss(den, ex, x0, one_masked, part, 1.0, Conditioning::kSoft, false);
    REQUIRE(zero == Catch::Approx(0.0).margin(1e-9));

    // no masked block is a contract violation
    REQUIRE_THROWS(block_loss(den, ex, x0, x0, part, 1.0, Conditioning::kSoft, false));
}

TEST_CASE("block_loss gradient matches central finite differences") {
    const int L = 4, B = 2;
    const auto part = BlockPartition::make(L, B);
    DenoiserConfig dcfg;
    dcfg.d_model = 32;
    dcfg.d_ff = 64;
    dcfg.max_seq = L;
    TinyDenoiser den(kVocab, dcfg, 11);
    ExecutorConfig cfg;
    cfg.block_size = B;
    TinyARExecutor ex(kVocab, cfg, 12);

    Rng rng(2024);
    for (int trial = 0; trial < 2; ++trial) {
        auto rr = rng.split(static_cast<std::uint64_t>(trial));
        TokenSeq x0(L);
        for (auto& t : x0) t = rr.uniform_int(kVocab.content_count());
        auto masking = sample_block_masking(x0, part, kVocab, 0.7, rr);
        const Conditioning cond = trial % 2 ? Conditioning::kTop1 : Conditioning::kSoft;

        ex.params().zero_grad();
        block_loss(den, ex, x0, masking.masked, part, 0.7, cond, true);
        std::vector<double> analytic = ex.params().grad;

        const double h = 1e-5;
        for (int probe = 0; probe < 8; ++probe) {
            const auto idx = static_cast<std::size_t>(rr.uniform_int(static_cast<int>(ex.params().size())));
            const double keep = ex.params().value[idx];
            ex.params().value[idx] = keep + h;
            const double up = block_loss(den, ex, x0, masking.masked, part, 0.7, cond, false);
            ex.params().value[idx] = keep - h;
            const double down = block_loss(den, ex, x0, masking.masked, part, 0.7, cond, false);
            ex.params().value[idx] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic[idx]), 1e-8});
            REQUIRE(std::abs(fd - analytic[idx]) / denom < 1e-4);
        }
    }
}

TEST_CASE("denoiser masked_nll gradient matches finite differences") {
    DenoiserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.d_ff = 32;
    dcfg.n_heads = 2;
    dcfg.max_seq = 4;
    TinyDenoiser den(kVocab, dcfg, 21);
    TokenSeq x0{0, 1, 2, 3};
    TokenSeq masked{kVocab.mask_id, 1, kVocab.mask_id, 3};

    den.params().zero_grad();
    den.masked_nll(x0, masked, 1.3, true);
    std::vector<double> analytic = den.params().grad;

    Rng rng(31);
    const double h = 1e-5;
    for (int probe = 0; probe < 8; ++probe) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(den.params().size())));
        const double keep = den.params().value[idx];
        den.params().value[idx] = keep + h;
        const double up = den.masked_nll(x0, masked, 1.3, false);
        den.params().value[idx] = keep - h;
        const double down = den.masked_nll(x0, masked, 1.3, false);
        den.params().value[idx] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[idx]), 1e-8});
        REQUIRE(std::abs(fd - analytic[idx]) / denom < 1e-4);
    }
}

TEST_CASE("training is deterministic and zero steps keep the initialization") {
    Rng rng(555);
    auto data = toy_dataset(32, 4, rng);

    DenoiserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.d_ff = 32;
    dcfg.n_heads = 2;
    dcfg.max_seq = 4;
    TinyDenoiser den(kVocab, dcfg, 77);

    ExecutorConfig cfg;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.n_heads = 2;
    cfg.block_size = 2;

    TrainConfig tc;
    tc.steps = 5;
    tc.seed = 99;

    TinyARExecutor ex1(kVocab, cfg, 1);
    TinyARExecutor ex2(kVocab, cfg, 1);
    const auto c1 = train_executor(ex1, den, data, tc);
    const auto c2 = train_executor(ex2, den, data, tc);
    REQUIRE(c1.size() == c2.size());
    for (std::size_t i = 0; i < c1.size(); ++i) {
        REQUIRE(c1[i].loss == c2[i].loss);  // bitwise
        REQUIRE(c1[i].mask_level == c2[i].mask_level);
    }
    REQUIRE(ex1.params().value == ex2.params().value);

    TinyARExecutor fresh(kVocab, cfg, 1);
    TrainConfig zero = tc;
    zero.steps = 0;
    TinyARExecutor untouched(kVocab, cfg, 1);
    train_executor(untouched, den, data, zero);
    REQUIRE(untouched.params().value == fresh.params().value);
}

TEST_CASE("checkpoints round-trip bitwise") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "blockdiff_ckpt_test";
    fs::create_directories(dir);

    ExecutorConfig cfg;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.n_heads = 2;
    cfg.block_size = 2;
    TinyARExecutor ex(kVocab, cfg, 31);
    const auto path = (dir / "exec.ckpt").string();
    ex.save(path);
    const auto back = TinyARExecutor::load(path);
    REQUIRE(back.params().value == ex.params().value);
    REQUIRE(back.block_size() == 2);

    DenoiserConfig dcfg;
    dcfg.d_model = 16;
    dcfg.d_ff = 32;
    dcfg.n_heads = 2;
    dcfg.max_seq = 6;
    TinyDenoiser den(kVocab, dcfg, 32);
    const auto dpath = (dir / "den.ckpt").string();
    den.save(dpath);
    const auto dback = TinyDenoiser::load(dpath);
    REQUIRE(dback.params().value == den.params().value);
    REQUIRE_THROWS(TinyARExecutor::load(dpath));  // kind mismatch
    fs::remove_all(dir);
}

TEST_CASE("optimizer schedule warms up then decays") {
    OptimizerConfig oc;
    oc.lr = 1.0;
    oc.warmup_ratio = 0.1;
    oc.total_steps = 100;
    AdamOptimizer opt(4, oc);
    REQUIRE(opt.lr_at(1) == Catch::Approx(0.1));
    REQUIRE(opt.lr_at(10) == Catch::Approx(1.0));
    REQUIRE(opt.lr_at(55) == Catch::Approx(0.5).margin(1e-9));
    REQUIRE(opt.lr_at(100) == Catch::Approx(0.0).margin(1e-9));
}
