#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdiff/config.hpp"
#include "blockdiff/engine.hpp"
#include "blockdiff/synthetic.hpp"
#include "blockdiff/train.hpp"

namespace blockdiff {

struct RunRecord {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string mode;          // static | dynamic
    std::string conditioning;  // oracle | independent | soft | top1
    int block_size = 0;
    double tau = 0.0;
    int scope = 0;
    int samples = 0;
    double validity_rate = 0.0;
    double exact_match_rate = 0.0;
    double tokens_per_step = 0.0;
    double mean_steps = 0.0;
    double mean_entropy = 0.0;

    std::string cell_slug() const {
        std::ostringstream s;
        char taubuf[32];
        std::snprintf(taubuf, sizeof(taubuf), "%g", tau);
        s << mode << "_" << conditioning << "_B" << block_size << "_tau" << taubuf << "_scope" << scope;
        return s.str();
    }
};

inline const char* run_record_header() {
    return "config_hash,seed,mode,conditioning,B,tau,scope,samples,validity_rate,exact_match_rate,tokens_per_step,"
           "mean_steps,mean_entropy";
}

inline std::string to_csv_row(const RunRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%llu,%llu,%s,%s,%d,%.17g,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(r.config_hash), static_cast<unsigned long long>(r.seed),
                  r.mode.c_str(), r.conditioning.c_str(), r.block_size, r.tau, r.scope, r.samples, r.validity_rate,
                  r.exact_match_rate, r.tokens_per_step, r.mean_steps, r.mean_entropy);
    return buf;
}

inline std::vector<RunRecord> parse_runs_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("runs csv: empty");
    if (line != run_record_header()) throw std::invalid_argument("runs csv: unexpected header");
    std::vector<RunRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (cells.size() != 13) throw std::invalid_argument("runs csv: malformed row");
        RunRecord r;
        r.config_hash = std::stoull(cells[0]);
        r.seed = std::stoull(cells[1]);
        r.mode = cells[2];
        r.conditioning = cells[3];
        r.block_size = std::stoi(cells[4]);
        r.tau = std::stod(cells[5]);
        r.scope = std::stoi(cells[6]);
        r.samples = std::stoi(cells[7]);
        r.validity_rate = std::stod(cells[8]);
        r.exact_match_rate = std::stod(cells[9]);
        r.tokens_per_step = std::stod(cells[10]);
        r.mean_steps = std::stod(cells[11]);
        r.mean_entropy = std::stod(cells[12]);
        out.push_back(std::move(r));
    }
    return out;
}

// Models backing one benchmark cell.
struct CellModels {
    std::unique_ptr<MarginalPredictor> predictor;
    std::unique_ptr<BlockExecutor> executor;
};

class ModelSource {
public:
    virtual ~ModelSource() = default;
    virtual CellModels build(int block_size, const std::string& conditioning) const = 0;
    virtual std::vector<std::string> conditionings() const = 0;
};

// Exact oracle models over the language joint ("oracle"), or the oracle
// predictor with token-independent sampling ("independent").
class OracleModelSource : public ModelSource {
public:
    OracleModelSource(const TabularJoint& joint, bool independent)
        : joint_(&joint), independent_(independent) {}
    CellModels build(int, const std::string&) const override {
        CellModels m;
        m.predictor = std::make_unique<OracleMarginalPredictor>(*joint_);
        if (independent_)
            m.executor = std::make_unique<IndependentBlockExecutor>(joint_->vocab());
        else
            m.executor = std::make_unique<OracleBlockExecutor>(*joint_);
        return m;
    }
    std::vector<std::string> conditionings() const override {
        return {independent_ ? std::string("independent") : std::string("oracle")};
    }

private:
    const TabularJoint* joint_;
    bool independent_;
};

// Trained tiny models from checkpoints, one executor per (B, conditioning).
class CheckpointModelSource : public ModelSource {
public:
    CheckpointModelSource(const std::string& denoiser_path, std::map<std::string, std::string> executor_paths,
                          std::vector<std::string> conds)
        : denoiser_(TinyDenoiser::load(denoiser_path)), executor_paths_(std::move(executor_paths)),
          conds_(std::move(conds)) {}

    CellModels build(int block_size, const std::string& conditioning) const override {
        const std::string key = "executor_B" + std::to_string(block_size) + "_" + conditioning;
        auto it = executor_paths_.find(key);
        if (it == executor_paths_.end()) throw std::runtime_error("bench: missing checkpoint for " + key);
        auto [cache_it, inserted] = executors_.try_emplace(key, nullptr);
        if (inserted) cache_it->second = std::make_unique<TinyARExecutor>(TinyARExecutor::load(it->second));
        CellModels m;
        m.predictor = std::make_unique<DenoiserMarginalPredictor>(denoiser_);
        m.executor = std::make_unique<NeuralBlockExecutor>(*cache_it->second, conditioning_from_string(conditioning));
        return m;
    }
    std::vector<std::string> conditionings() const override { return conds_; }

private:
    TinyDenoiser denoiser_;
    std::map<std::string, std::string> executor_paths_;
    std::vector<std::string> conds_;
    mutable std::map<std::string, std::unique_ptr<TinyARExecutor>> executors_;
};

inline std::unique_ptr<ModelSource> model_source_from_config(const Config& cfg, const TabularJoint& joint) {
    const std::string source = cfg.get_or("models", "source", "oracle");
    if (source == "oracle") return std::make_unique<OracleModelSource>(joint, false);
    if (source == "independent") return std::make_unique<OracleModelSource>(joint, true);
    if (source == "checkpoints") {
        std::map<std::string, std::string> paths;
        std::vector<std::string> conds =
            cfg.has("bench", "conditioning") ? cfg.get_list("bench", "conditioning") : std::vector<std::string>{"soft"};
        for (const auto& [name, body] : cfg.sections()) {
            if (name != "models") continue;
            for (const auto& [k, v] : body)
                if (k.rfind("executor_", 0) == 0) paths[k] = v;
        }
        return std::make_unique<CheckpointModelSource>(cfg.get("models", "denoiser"), std::move(paths), std::move(conds));
    }
    throw std::invalid_argument("unknown model source: " + source);
}

struct BenchOutput {
    std::vector<RunRecord> records;
    std::string runs_csv;
    std::map<std::string, std::string> traces;  // cell slug -> csv (sample-prefixed rows)
};

// Executes the grid over {mode, B, tau, scope, conditioning}. Each cell runs
// `samples` seeded generations; cell seeds derive from the config hash so the
// output is a pure function of (config, seed).
inline BenchOutput run_experiment(const Config& cfg) {
    const SyntheticLanguage lang = language_from_config(cfg);
    const TabularJoint joint = lang.joint();
    const auto source = model_source_from_config(cfg, joint);

    const std::uint64_t seed = cfg.get_u64_or("bench", "seed", 1);
    const int samples = cfg.get_int_or("bench", "samples", 200);
    const std::uint64_t config_hash = cfg.hash();

    std::vector<std::string> modes =
        cfg.has("bench", "modes") ? cfg.get_list("bench", "modes") : std::vector<std::string>{"static"};
    std::vector<int> blocks = cfg.has("bench", "B") ? cfg.get_int_list("bench", "B") : std::vector<int>{2};
    std::vector<double> taus =
        cfg.has("bench", "taus") ? cfg.get_double_list("bench", "taus") : std::vector<double>{0.3};
    std::vector<int> scopes = cfg.has("bench", "scopes") ? cfg.get_int_list("bench", "scopes") : std::vector<int>{10};

    DecodeParams dp;
    dp.greedy = cfg.get_int_or("decode", "greedy", 0) != 0;
    dp.temperature = cfg.get_double_or("decode", "temperature", 1.0);
    dp.top_p = cfg.get_double_or("decode", "top_p", 1.0);
    const int blocks_per_step = cfg.get_int_or("decode", "blocks_per_step", 1);
    const bool prompt_half = cfg.get_int_or("bench", "prompt_half", 0) != 0;
    if (prompt_half && lang.kind() != LangKind::kCopy)
        throw std::invalid_argument("bench: prompt_half only applies to the copy language");

    BenchOutput out;
    std::ostringstream runs;
    runs << run_record_header() << '\n';

    for (const auto& mode : modes) {
        const bool dynamic = schedule_mode_from_string(mode) == ScheduleMode::kDynamic;
        const std::vector<double> cell_taus = dynamic ? taus : std::vector<double>{0.0};
        for (int B : blocks) {
            const BlockPartition part = BlockPartition::make(lang.length(), B);
            for (int scope : scopes) {
                for (double tau : cell_taus) {
                    for (const auto& cond : source->conditionings()) {
                        RunRecord rec;
                        rec.config_hash = config_hash;
                        rec.seed = seed;
                        rec.mode = mode;
                        rec.conditioning = cond;
                        rec.block_size = B;
                        rec.tau = tau;
                        rec.scope = scope;
                        rec.samples = samples;

                        const auto models = source->build(B, cond);
                        SchedulerConfig sc;
                        sc.mode = dynamic ? ScheduleMode::kDynamic : ScheduleMode::kStatic;
                        sc.tau = dynamic ? tau : 0.3;
                        sc.scope = scope;
                        sc.blocks_per_step = blocks_per_step;
                        sc.sampling = dp;

                        std::ostringstream trace_csv;
                        trace_csv << "sample,iter,block,k,fallback,entropy,committed_tokens\n";
                        double valid = 0.0, exact = 0.0, tps = 0.0, steps = 0.0, ent_sum = 0.0;
                        long long ent_count = 0;
                        Rng cell_rng(mix_seed(seed, hash_tag(rec.cell_slug())));
                        for (int s = 0; s < samples; ++s) {
                            TokenSeq prompt;
                            TokenSeq target;
                            if (prompt_half) {
                                auto prng = cell_rng.split("prompt", static_cast<std::uint64_t>(s));
                                const TokenSeq full = lang.sample(prng);
                                prompt.assign(full.begin(), full.begin() + lang.length() / 2);
                                target = full;
                            }
                            const auto res = generate(prompt, part, *models.predictor, *models.executor, lang.vocab(), sc,
                                                      mix_seed(cell_rng.seed(), static_cast<std::uint64_t>(s)));
                            valid += lang.valid(res.seq);
                            if (prompt_half)
                                exact += (res.seq == target);
                            else
                                exact += (joint.prob(res.seq) > 0.0);
                            tps += res.stats.tokens_per_step;
                            steps += res.stats.steps;
                            for (const auto& row : res.trace) {
                                ent_sum += row.entropy;
                                ++ent_count;
                                char buf[64];
                                std::snprintf(buf, sizeof(buf), "%.17g", row.entropy);
                                trace_csv << s << ',' << row.iter << ',' << row.block << ',' << row.k << ','
                                          << (row.fallback ? 1 : 0) << ',' << buf << ',';
                                for (std::size_t i = 0; i < row.committed.size(); ++i) {
                                    if (i) trace_csv << ' ';
                                    trace_csv << row.committed[i];
                                }
                                trace_csv << '\n';
                            }
                        }
                        rec.validity_rate = valid / samples;
                        rec.exact_match_rate = exact / samples;
                        rec.tokens_per_step = tps / samples;
                        rec.mean_steps = steps / samples;
                        rec.mean_entropy = ent_count > 0 ? ent_sum / ent_count : 0.0;

                        out.records.push_back(rec);
                        runs << to_csv_row(rec) << '\n';
                        out.traces[rec.cell_slug()] = trace_csv.str();
                    }
                }
            }
        }
    }
    out.runs_csv = runs.str();
    return out;
}

inline void write_bench_output(const BenchOutput& out, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream f(fs::path(dir) / "runs.csv");
        if (!f) throw std::runtime_error("cannot write runs.csv");
        f << out.runs_csv;
    }
    for (const auto& [slug, csv] : out.traces) {
        std::ofstream f(fs::path(dir) / ("trace_" + slug + ".csv"));
        if (!f) throw std::runtime_error("cannot write trace for " + slug);
        f << csv;
    }
}

// Grouped summary of a runs.csv, one line per (mode, conditioning, B, tau, scope).
inline std::string summarize_runs(const std::vector<RunRecord>& records) {
    std::ostringstream out;
    out << "mode      cond         B   tau     scope  validity  exact    tok/step  steps\n";
    for (const auto& r : records) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-9s %-12s %-3d %-7.3g %-6d %-9.4f %-8.4f %-9.4f %-7.3f\n", r.mode.c_str(),
                      r.conditioning.c_str(), r.block_size, r.tau, r.scope, r.validity_rate, r.exact_match_rate,
                      r.tokens_per_step, r.mean_steps);
        out << buf;
    }
    return out.str();
}

}  // namespace blockdiff
