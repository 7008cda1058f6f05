// Command-line front end: theorem verification, data generation, training,
// single decodes with trace dumps, benchmark grids, and report tables.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "blockdiff/config.hpp"
#include "blockdiff/engine.hpp"
#include "blockdiff/experiment.hpp"
#include "blockdiff/synthetic.hpp"
#include "blockdiff/theorems.hpp"
#include "blockdiff/train.hpp"

namespace fs = std::filesystem;
using namespace blockdiff;

namespace {

std::string resolve_outdir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("BLOCKDIFF_OUTDIR")) return env;
    return ".";
}

DataSplits splits_from_config(const Config& cfg, const SyntheticLanguage& lang) {
    const int n_train = cfg.get_int_or("splits", "train", 2000);
    const int n_val = cfg.get_int_or("splits", "val", 200);
    const std::uint64_t seed = cfg.get_u64_or("splits", "seed", 7);
    return make_splits(lang, n_train, n_val, seed);
}

DenoiserConfig denoiser_config(const Config& cfg, int length) {
    DenoiserConfig dc;
    dc.d_model = cfg.get_int_or("model", "d_model", 64);
    dc.n_layers = cfg.get_int_or("model", "n_layers", 2);
    dc.n_heads = cfg.get_int_or("model", "n_heads", 4);
    dc.d_ff = cfg.get_int_or("model", "d_ff", 128);
    dc.max_seq = length;
    return dc;
}

ExecutorConfig executor_config(const Config& cfg, int block_size) {
    ExecutorConfig ec;
    ec.d_model = cfg.get_int_or("model", "d_model", 64);
    ec.n_layers = cfg.get_int_or("model", "n_layers", 2);
    ec.n_heads = cfg.get_int_or("model", "n_heads", 4);
    ec.d_ff = cfg.get_int_or("model", "d_ff", 128);
    ec.block_size = block_size;
    return ec;
}

int cmd_verify(int trials, std::uint64_t seed, const VerifySizes& sizes) {
    const auto report = verify_theorems(sizes, trials, seed);
    std::cout << report.to_string();
    return report.all_pass() ? 0 : 1;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_flag) {
    const auto cfg = Config::load(config_path);
    const auto lang = language_from_config(cfg);
    const auto splits = splits_from_config(cfg, lang);
    const fs::path dir = resolve_outdir(out_flag);
    fs::create_directories(dir);
    save_corpus((dir / "train.txt").string(), splits.train);
    save_corpus((dir / "val.txt").string(), splits.val);
    lang.joint().save((dir / "joint.tsv").string());
    std::printf("%s: %zu train / %zu val sequences, support %zu, wrote %s\n", to_string(lang.kind()),
                splits.train.size(), splits.val.size(), lang.support().size(), dir.string().c_str());
    return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_flag) {
    const auto cfg = Config::load(config_path);
    const auto lang = language_from_config(cfg);
    const auto splits = splits_from_config(cfg, lang);
    TinyDenoiser den(lang.vocab(), denoiser_config(cfg, lang.length()), cfg.get_u64_or("pretrain", "init_seed", 11));
    PretrainConfig pc;
    pc.steps = cfg.get_int_or("pretrain", "steps", 800);
    pc.batch = cfg.get_int_or("pretrain", "batch", 8);
    pc.lr = cfg.get_double_or("pretrain", "lr", 3e-3);
    pc.seed = cfg.get_u64_or("pretrain", "seed", 1);
    const auto curve = pretrain_denoiser(den, splits.train, pc);
    const fs::path dir = resolve_outdir(out_flag);
    fs::create_directories(dir);
    den.save((dir / "denoiser.ckpt").string());
    write_loss_csv((dir / "denoiser_curve.csv").string(), curve);
    std::printf("pretrained denoiser for %d steps, final loss %.4f -> %s\n", pc.steps,
                curve.empty() ? 0.0 : curve.back().loss, (dir / "denoiser.ckpt").string().c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& denoiser_path, const std::string& out_flag) {
    const auto cfg = Config::load(config_path);
    const auto lang = language_from_config(cfg);
    const auto splits = splits_from_config(cfg, lang);
    const auto den = TinyDenoiser::load(denoiser_path);

    TrainConfig tc;
    tc.steps = cfg.get_int_or("train", "steps", 1000);
    tc.batch = cfg.get_int_or("train", "batch", 8);
    tc.lr = cfg.get_double_or("train", "lr", 3e-3);
    tc.seed = cfg.get_u64_or("train", "seed", 1);
    tc.conditioning = conditioning_from_string(cfg.get_or("train", "conditioning", "soft"));
    const std::string masking = cfg.get_or("train", "masking", "block-iid");
    tc.masking = masking == "span8" ? MaskingScheme::kSpan8 : MaskingScheme::kBlockIid;
    const int block_size = cfg.get_int_or("train", "B", 4);

    TinyARExecutor ex(lang.vocab(), executor_config(cfg, block_size), cfg.get_u64_or("train", "init_seed", 21));
    const auto curve = train_executor(ex, den, splits.train, tc);

    const fs::path dir = resolve_outdir(out_flag);
    fs::create_directories(dir);
    const std::string stem = "executor_B" + std::to_string(block_size) + "_" + to_string(tc.conditioning);
    ex.save((dir / (stem + ".ckpt")).string());
    write_loss_csv((dir / (stem + "_curve.csv")).string(), curve);
    std::printf("trained %s for %d steps, final loss %.4f, smoothed %.4f\n", stem.c_str(), tc.steps,
                curve.empty() ? 0.0 : curve.back().loss, smoothed_tail(curve, 100));
    return 0;
}

int cmd_decode(const std::string& config_path, std::uint64_t seed, const std::string& out_flag) {
    const auto cfg = Config::load(config_path);
    const auto lang = language_from_config(cfg);
    const TabularJoint joint = lang.joint();
    const auto source = model_source_from_config(cfg, joint);

    const int block_size = cfg.get_int_or("decode", "B", 2);
    const std::string cond = cfg.get_or("decode", "conditioning", source->conditionings().front());
    const auto models = source->build(block_size, cond);

    SchedulerConfig sc;
    sc.mode = schedule_mode_from_string(cfg.get_or("decode", "mode", "static"));
    sc.tau = cfg.get_double_or("decode", "tau", 0.3);
    sc.scope = cfg.get_int_or("decode", "scope", 10);
    sc.blocks_per_step = cfg.get_int_or("decode", "blocks_per_step", 1);
    sc.sampling.greedy = cfg.get_int_or("decode", "greedy", 0) != 0;
    sc.sampling.temperature = cfg.get_double_or("decode", "temperature", 1.0);
    sc.sampling.top_p = cfg.get_double_or("decode", "top_p", 1.0);

    TokenSeq prompt;
    if (cfg.has("decode", "prompt"))
        for (int t : cfg.get_int_list("decode", "prompt")) prompt.push_back(t);

    const auto part = BlockPartition::make(lang.length(), block_size);
    const auto res = generate(prompt, part, *models.predictor, *models.executor, lang.vocab(), sc, seed);

    std::ostringstream seq;
    for (std::size_t i = 0; i < res.seq.size(); ++i) {
        if (i) seq << ' ';
        seq << res.seq[i];
    }
    std::printf("sequence: %s\nvalid: %s\n", seq.str().c_str(), lang.valid(res.seq) ? "yes" : "no");
    std::printf("%s", stats_to_csv(res.stats).c_str());
    std::printf("wall_time_s=%.6f completed=%d decoded=%d autofilled=%d boundary_replacements=%d\n",
                res.stats.wall_time_s, res.stats.completed ? 1 : 0, res.stats.decoded_tokens, res.stats.autofilled,
                res.stats.boundary_replacements);

    const fs::path dir = resolve_outdir(out_flag);
    fs::create_directories(dir);
    std::ofstream trace(dir / "trace.csv");
    trace << trace_to_csv(res.trace);
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& out_flag) {
    const auto cfg = Config::load(config_path);
    const auto out = run_experiment(cfg);
    const fs::path dir = resolve_outdir(out_flag);
    write_bench_output(out, dir.string());
    std::cout << summarize_runs(out.records);
    std::printf("wrote %zu run records to %s\n", out.records.size(), (dir / "runs.csv").string().c_str());
    return 0;
}

int cmd_report(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) {
        std::fprintf(stderr, "cannot open %s\n", csv_path.c_str());
        return 1;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    std::cout << summarize_runs(parse_runs_csv(buf.str()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"block-granular masked diffusion with locally coherent parallel decoding"};
    app.require_subcommand(1);

    // verify
    auto* verify = app.add_subcommand("verify", "run the exact theorem checks and print a report");
    int trials = 50;
    std::uint64_t vseed = 1;
    VerifySizes sizes;
    verify->add_option("--trials", trials, "random joints per check");
    verify->add_option("--seed", vseed, "rng seed");
    verify->add_option("--content-max", sizes.content_max, "largest content alphabet in the sweep");
    verify->add_option("--length-max", sizes.length_max, "largest sequence length in the sweep");
    verify->add_option("--steps-max", sizes.steps_max, "largest schedule T in the sweep");

    std::string config_path, out_flag, denoiser_path, csv_path;
    std::uint64_t dseed = 1;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and its exact joint");
    gen->add_option("--config", config_path, "config file")->required();
    gen->add_option("--out", out_flag, "output directory (default $BLOCKDIFF_OUTDIR or .)");

    auto* pre = app.add_subcommand("pretrain-denoiser", "pretrain the token-level denoiser");
    pre->add_option("--config", config_path, "config file")->required();
    pre->add_option("--out", out_flag, "output directory");

    auto* train = app.add_subcommand("train-executor", "train the block executor against a frozen denoiser");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--denoiser", denoiser_path, "denoiser checkpoint")->required();
    train->add_option("--out", out_flag, "output directory");

    auto* dec = app.add_subcommand("decode", "run one generation and dump its trace");
    dec->add_option("--config", config_path, "config file")->required();
    dec->add_option("--seed", dseed, "generation seed");
    dec->add_option("--out", out_flag, "output directory");

    auto* bench = app.add_subcommand("bench", "run the benchmark grid from a config");
    bench->add_option("--config", config_path, "config file")->required();
    bench->add_option("--out", out_flag, "output directory");

    auto* rep = app.add_subcommand("report", "summarize a runs.csv");
    rep->add_option("--csv", csv_path, "runs.csv path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return cmd_verify(trials, vseed, sizes);
        if (gen->parsed()) return cmd_gen_data(config_path, out_flag);
        if (pre->parsed()) return cmd_pretrain(config_path, out_flag);
        if (train->parsed()) return cmd_train(config_path, denoiser_path, out_flag);
        if (dec->parsed()) return cmd_decode(config_path, dseed, out_flag);
        if (bench->parsed()) return cmd_bench(config_path, out_flag);
        if (rep->parsed()) return cmd_report(csv_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
