#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdiff/rng.hpp"

namespace blockdiff {

// Named parameter tensors in one flat value/grad buffer.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        int rows = 0, cols = 0;
        std::size_t count() const { return static_cast<std::size_t>(rows) * cols; }
    };

    int add(std::string name, int rows, int cols) {
        Entry e;
        e.name = std::move(name);
        e.offset = value.size();
        e.rows = rows;
        e.cols = cols;
        entries.push_back(e);
        value.resize(value.size() + e.count(), 0.0);
        grad.resize(value.size(), 0.0);
        return static_cast<int>(entries.size()) - 1;
    }

    double* val(int id) { return value.data() + entries[id].offset; }
    const double* val(int id) const { return value.data() + entries[id].offset; }
    double* grd(int id) { return grad.data() + entries[id].offset; }
    const Entry& entry(int id) const { return entries[id]; }
    std::size_t size() const { return value.size(); }

    int find(std::string_view name) const {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name == name) return static_cast<int>(i);
        throw std::out_of_range("no parameter tensor named " + std::string(name));
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    void init_gaussian(int id, double stddev, Rng& rng) {
        double* p = val(id);
        for (std::size_t i = 0; i < entries[id].count(); ++i) p[i] = stddev * rng.normal();
    }
    void init_constant(int id, double c) {
        double* p = val(id);
        for (std::size_t i = 0; i < entries[id].count(); ++i) p[i] = c;
    }

    // Versioned flat-text checkpoint; meta entries let loaders rebuild the
    // owning model before filling in tensors.
    void save(const std::string& path, const std::map<std::string, std::string>& meta) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
        out << "blockdiff-checkpoint v1\n";
        out << "meta " << meta.size() << '\n';
        for (const auto& [k, v] : meta) out << k << ' ' << v << '\n';
        out << "tensors " << entries.size() << '\n';
        char buf[40];
        for (const auto& e : entries) {
            out << e.name << ' ' << e.rows << ' ' << e.cols << '\n';
            const double* p = value.data() + e.offset;
            for (std::size_t i = 0; i < e.count(); ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g", p[i]);
                out << buf << (i + 1 == e.count() ? '\n' : ' ');
            }
        }
    }

    static std::map<std::string, std::string> read_meta(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
        std::string line;
        std::getline(in, line);
        if (line != "blockdiff-checkpoint v1") throw std::runtime_error("unsupported checkpoint format: " + path);
        std::string word;
        std::size_t n = 0;
        in >> word >> n;
        if (word != "meta") throw std::runtime_error("malformed checkpoint meta block");
        std::map<std::string, std::string> meta;
        for (std::size_t i = 0; i < n; ++i) {
            std::string k, v;
            in >> k >> v;
            meta[k] = v;
        }
        return meta;
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
        std::string line;
        std::getline(in, line);
        if (line != "blockdiff-checkpoint v1") throw std::runtime_error("unsupported checkpoint format: " + path);
        std::string word;
        std::size_t n = 0;
        in >> word >> n;
        for (std::size_t i = 0; i < n; ++i) {
            std::string k, v;
            in >> k >> v;
        }
        in >> word >> n;
        if (word != "tensors" || n != entries.size()) throw std::runtime_error("checkpoint tensor count mismatch");
        for (const auto& e : entries) {
            std::string name;
            int rows = 0, cols = 0;
            in >> name >> rows >> cols;
            if (name != e.name || rows != e.rows || cols != e.cols)
                throw std::runtime_error("checkpoint tensor mismatch at " + e.name);
            double* p = value.data() + e.offset;
            for (std::size_t j = 0; j < e.count(); ++j) in >> p[j];
        }
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    }

    std::vector<double> value, grad;
    std::vector<Entry> entries;
};

namespace nnops {

// C (n x p) = A (n x m) * B (m x p); accumulate optionally
inline void matmul(const double* a, const double* b, double* c, int n, int m, int p, bool accumulate) {
    for (int i = 0; i < n; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * p;
        if (!accumulate)
            for (int j = 0; j < p; ++j) crow[j] = 0.0;
        const double* arow = a + static_cast<std::size_t>(i) * m;
        for (int k = 0; k < m; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(k) * p;
            for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (m x p) += A^T * B with A (n x m), B (n x p); weight gradients
inline void matmul_at_b(const double* a, const double* b, double* c, int n, int m, int p) {
    for (int k = 0; k < n; ++k) {
        const double* arow = a + static_cast<std::size_t>(k) * m;
        const double* brow = b + static_cast<std::size_t>(k) * p;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(i) * p;
            for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (n x m) += A * B^T with A (n x p), B (m x p); input gradients
inline void matmul_a_bt(const double* a, const double* b, double* c, int n, int m, int p) {
    for (int i = 0; i < n; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * p;
        double* crow = c + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * p;
            double acc = 0.0;
            for (int k = 0; k < p; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace nnops

struct TransformerConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int n_out = 0;    // readout width
    int max_seq = 0;  // attention rows upper bound
    bool causal = false;
};

// Pre-norm transformer over externally embedded rows. Forward caches every
// activation the hand-written backward pass needs; backward accumulates
// parameter gradients and returns gradients w.r.t. the input rows so callers
// can push them into embedding tables or soft-prompt mixtures.
class TinyTransformer {
public:
    struct LayerIds {
        int wq, wk, wv, wo, g1, w1, b1, w2, b2, g2;
    };

    struct LayerCache {
        std::vector<double> x0, xhat1, r1, q, k, v, probs, attnout, x1, xhat2, r2, hpre, hact;
    };

    struct Pass {
        int n = 0;
        std::vector<LayerCache> layers;
        std::vector<double> xf, xhatf, rf, fout, logits;
    };

    TinyTransformer(TransformerConfig cfg, ParamStore& ps, const std::string& prefix) : cfg_(cfg) {
        if (cfg_.d_model % cfg_.n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string lp = prefix + ".layer" + std::to_string(l);
            LayerIds ids;
            ids.wq = ps.add(lp + ".wq", cfg_.d_model, cfg_.d_model);
            ids.wk = ps.add(lp + ".wk", cfg_.d_model, cfg_.d_model);
            ids.wv = ps.add(lp + ".wv", cfg_.d_model, cfg_.d_model);
            ids.wo = ps.add(lp + ".wo", cfg_.d_model, cfg_.d_model);
            ids.g1 = ps.add(lp + ".norm1", 1, cfg_.d_model);
            ids.w1 = ps.add(lp + ".mlp_w1", cfg_.d_model, cfg_.d_ff);
            ids.b1 = ps.add(lp + ".mlp_b1", 1, cfg_.d_ff);
            ids.w2 = ps.add(lp + ".mlp_w2", cfg_.d_ff, cfg_.d_model);
            ids.b2 = ps.add(lp + ".mlp_b2", 1, cfg_.d_model);
            ids.g2 = ps.add(lp + ".norm2", 1, cfg_.d_model);
            layers_.push_back(ids);
        }
        gf_ = ps.add(prefix + ".norm_final", 1, cfg_.d_model);
        wout_ = ps.add(prefix + ".readout_w", cfg_.d_model, cfg_.n_out);
        bout_ = ps.add(prefix + ".readout_b", 1, cfg_.n_out);
    }

    void init(ParamStore& ps, Rng& rng, double stddev = 0.08) const {
        for (const auto& ids : layers_) {
            ps.init_gaussian(ids.wq, stddev, rng);
            ps.init_gaussian(ids.wk, stddev, rng);
            ps.init_gaussian(ids.wv, stddev, rng);
            ps.init_gaussian(ids.wo, stddev, rng);
            ps.init_constant(ids.g1, 1.0);
            ps.init_gaussian(ids.w1, stddev, rng);
            ps.init_constant(ids.b1, 0.0);
            ps.init_gaussian(ids.w2, stddev, rng);
            ps.init_constant(ids.b2, 0.0);
            ps.init_constant(ids.g2, 1.0);
        }
        ps.init_constant(gf_, 1.0);
        ps.init_gaussian(wout_, stddev, rng);
        ps.init_constant(bout_, 0.0);
    }

    const TransformerConfig& config() const { return cfg_; }

    Pass forward(const ParamStore& ps, const double* rows, int n) const {
        if (n < 1 || n > cfg_.max_seq) throw std::invalid_argument("transformer: row count out of range");
        const int d = cfg_.d_model;
        const int dh = d / cfg_.n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        Pass pass;
        pass.n = n;
        pass.layers.resize(cfg_.n_layers);
        std::vector<double> x(rows, rows + static_cast<std::size_t>(n) * d);

        for (int l = 0; l < cfg_.n_layers; ++l) {
            auto& c = pass.layers[l];
            const auto& ids = layers_[l];
            c.x0 = x;
            rmsnorm_forward(ps, ids.g1, c.x0, n, c.xhat1, c.r1);
            std::vector<double> n1g(static_cast<std::size_t>(n) * d);
            apply_gain(ps, ids.g1, c.xhat1, n, n1g);

            c.q.resize(static_cast<std::size_t>(n) * d);
            c.k.resize(static_cast<std::size_t>(n) * d);
            c.v.resize(static_cast<std::size_t>(n) * d);
            nnops::matmul(n1g.data(), ps.val(ids.wq), c.q.data(), n, d, d, false);
            nnops::matmul(n1g.data(), ps.val(ids.wk), c.k.data(), n, d, d, false);
            nnops::matmul(n1g.data(), ps.val(ids.wv), c.v.data(), n, d, d, false);

            c.probs.assign(static_cast<std::size_t>(cfg_.n_heads) * n * n, 0.0);
            c.attnout.assign(static_cast<std::size_t>(n) * d, 0.0);
            for (int h = 0; h < cfg_.n_heads; ++h) {
                for (int i = 0; i < n; ++i) {
                    const int limit = cfg_.causal ? i + 1 : n;
                    double* prow = c.probs.data() + (static_cast<std::size_t>(h) * n + i) * n;
                    const double* qi = c.q.data() + static_cast<std::size_t>(i) * d + h * dh;
                    double maxs = -1e300;
                    for (int j = 0; j < limit; ++j) {
                        const double* kj = c.k.data() + static_cast<std::size_t>(j) * d + h * dh;
                        double s = 0.0;
                        for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
                        prow[j] = s * scale;
                        maxs = std::max(maxs, prow[j]);
                    }
                    double z = 0.0;
                    for (int j = 0; j < limit; ++j) {
                        prow[j] = std::exp(prow[j] - maxs);
                        z += prow[j];
                    }
                    for (int j = 0; j < limit; ++j) prow[j] /= z;
                    double* orow = c.attnout.data() + static_cast<std::size_t>(i) * d + h * dh;
                    for (int j = 0; j < limit; ++j) {
                        const double pj = prow[j];
                        const double* vj = c.v.data() + static_cast<std::size_t>(j) * d + h * dh;
                        for (int e = 0; e < dh; ++e) orow[e] += pj * vj[e];
                    }
                }
            }

            c.x1 = c.x0;
            nnops::matmul(c.attnout.data(), ps.val(ids.wo), c.x1.data(), n, d, d, true);

            rmsnorm_forward(ps, ids.g2, c.x1, n, c.xhat2, c.r2);
            std::vector<double> n2g(static_cast<std::size_t>(n) * d);
            apply_gain(ps, ids.g2, c.xhat2, n, n2g);

            c.hpre.resize(static_cast<std::size_t>(n) * cfg_.d_ff);
            nnops::matmul(n2g.data(), ps.val(ids.w1), c.hpre.data(), n, d, cfg_.d_ff, false);
            const double* b1 = ps.val(ids.b1);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cfg_.d_ff; ++j) c.hpre[static_cast<std::size_t>(i) * cfg_.d_ff + j] += b1[j];
            c.hact.resize(c.hpre.size());
            for (std::size_t i = 0; i < c.hpre.size(); ++i) c.hact[i] = nnops::silu(c.hpre[i]);

            x = c.x1;
            nnops::matmul(c.hact.data(), ps.val(ids.w2), x.data(), n, cfg_.d_ff, d, true);
            const double* b2 = ps.val(ids.b2);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(i) * d + j] += b2[j];
        }

        pass.xf = x;
        rmsnorm_forward(ps, gf_, pass.xf, n, pass.xhatf, pass.rf);
        pass.fout.resize(static_cast<std::size_t>(n) * d);
        apply_gain(ps, gf_, pass.xhatf, n, pass.fout);
        pass.logits.resize(static_cast<std::size_t>(n) * cfg_.n_out);
        nnops::matmul(pass.fout.data(), ps.val(wout_), pass.logits.data(), n, d, cfg_.n_out, false);
        const double* bo = ps.val(bout_);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg_.n_out; ++j) pass.logits[static_cast<std::size_t>(i) * cfg_.n_out + j] += bo[j];
        return pass;
    }

    // dinput must hold n * d_model doubles; it is overwritten.
    void backward(ParamStore& ps, const Pass& pass, const double* dlogits, double* dinput) const {
        const int n = pass.n;
        const int d = cfg_.d_model;
        const int dh = d / cfg_.n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        // readout
        nnops::matmul_at_b(pass.fout.data(), dlogits, ps.grd(wout_), n, d, cfg_.n_out);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg_.n_out; ++j) ps.grd(bout_)[j] += dlogits[static_cast<std::size_t>(i) * cfg_.n_out + j];
        std::vector<double> dfout(static_cast<std::size_t>(n) * d, 0.0);
        nnops::matmul_a_bt(dlogits, ps.val(wout_), dfout.data(), n, d, cfg_.n_out);

        std::vector<double> dx(static_cast<std::size_t>(n) * d, 0.0);
        rmsnorm_backward(ps, gf_, pass.xf, pass.xhatf, pass.rf, dfout, n, dx);

        for (int l = cfg_.n_layers - 1; l >= 0; --l) {
            const auto& c = pass.layers[l];
            const auto& ids = layers_[l];

            // mlp: x2 = x1 + hact*W2 + b2
            std::vector<double> dhact(static_cast<std::size_t>(n) * cfg_.d_ff, 0.0);
            nnops::matmul_at_b(c.hact.data(), dx.data(), ps.grd(ids.w2), n, cfg_.d_ff, d);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) ps.grd(ids.b2)[j] += dx[static_cast<std::size_t>(i) * d + j];
            nnops::matmul_a_bt(dx.data(), ps.val(ids.w2), dhact.data(), n, cfg_.d_ff, d);

            std::vector<double> dhpre(dhact.size());
            for (std::size_t i = 0; i < dhact.size(); ++i) dhpre[i] = dhact[i] * nnops::silu_grad(c.hpre[i]);

            std::vector<double> n2g(static_cast<std::size_t>(n) * d);
            apply_gain(ps, ids.g2, c.xhat2, n, n2g);
            nnops::matmul_at_b(n2g.data(), dhpre.data(), ps.grd(ids.w1), n, d, cfg_.d_ff);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cfg_.d_ff; ++j) ps.grd(ids.b1)[j] += dhpre[static_cast<std::size_t>(i) * cfg_.d_ff + j];
            std::vector<double> dn2g(static_cast<std::size_t>(n) * d, 0.0);
            nnops::matmul_a_bt(dhpre.data(), ps.val(ids.w1), dn2g.data(), n, d, cfg_.d_ff);

            // dx currently holds dL/dx2; x2 = x1 + mlp(x1), so dx1 = dx + norm2-path
            std::vector<double> dx1 = dx;
            rmsnorm_backward(ps, ids.g2, c.x1, c.xhat2, c.r2, dn2g, n, dx1);

            // attention: x1 = x0 + attnout*Wo
            nnops::matmul_at_b(c.attnout.data(), dx1.data(), ps.grd(ids.wo), n, d, d);
            std::vector<double> dattnout(static_cast<std::size_t>(n) * d, 0.0);
            nnops::matmul_a_bt(dx1.data(), ps.val(ids.wo), dattnout.data(), n, d, d);

            std::vector<double> dq(static_cast<std::size_t>(n) * d, 0.0);
            std::vector<double> dk(static_cast<std::size_t>(n) * d, 0.0);
            std::vector<double> dv(static_cast<std::size_t>(n) * d, 0.0);
            for (int h = 0; h < cfg_.n_heads; ++h) {
                for (int i = 0; i < n; ++i) {
                    const int limit = cfg_.causal ? i + 1 : n;
                    const double* prow = c.probs.data() + (static_cast<std::size_t>(h) * n + i) * n;
                    const double* dorow = dattnout.data() + static_cast<std::size_t>(i) * d + h * dh;
                    // dP and dV
                    std::vector<double> dprow(limit, 0.0);
                    for (int j = 0; j < limit; ++j) {
                        const double* vj = c.v.data() + static_cast<std::size_t>(j) * d + h * dh;
                        double acc = 0.0;
                        for (int e = 0; e < dh; ++e) acc += dorow[e] * vj[e];
                        dprow[j] = acc;
                        double* dvj = dv.data() + static_cast<std::size_t>(j) * d + h * dh;
                        const double pj = prow[j];
                        for (int e = 0; e < dh; ++e) dvj[e] += pj * dorow[e];
                    }
                    // softmax backward
                    double dot = 0.0;
                    for (int j = 0; j < limit; ++j) dot += dprow[j] * prow[j];
                    const double* qi = c.q.data() + static_cast<std::size_t>(i) * d + h * dh;
                    double* dqi = dq.data() + static_cast<std::size_t>(i) * d + h * dh;
                    for (int j = 0; j < limit; ++j) {
                        const double ds = prow[j] * (dprow[j] - dot) * scale;
                        if (ds == 0.0) continue;
                        const double* kj = c.k.data() + static_cast<std::size_t>(j) * d + h * dh;
                        double* dkj = dk.data() + static_cast<std::size_t>(j) * d + h * dh;
                        for (int e = 0; e < dh; ++e) {
                            dqi[e] += ds * kj[e];
                            dkj[e] += ds * qi[e];
                        }
                    }
                }
            }

            std::vector<double> n1g(static_cast<std::size_t>(n) * d);
            apply_gain(ps, ids.g1, c.xhat1, n, n1g);
            nnops::matmul_at_b(n1g.data(), dq.data(), ps.grd(ids.wq), n, d, d);
            nnops::matmul_at_b(n1g.data(), dk.data(), ps.grd(ids.wk), n, d, d);
            nnops::matmul_at_b(n1g.data(), dv.data(), ps.grd(ids.wv), n, d, d);
            std::vector<double> dn1g(static_cast<std::size_t>(n) * d, 0.0);
            nnops::matmul_a_bt(dq.data(), ps.val(ids.wq), dn1g.data(), n, d, d);
            nnops::matmul_a_bt(dk.data(), ps.val(ids.wk), dn1g.data(), n, d, d);
            nnops::matmul_a_bt(dv.data(), ps.val(ids.wv), dn1g.data(), n, d, d);

            // dx0 = dx1 (residual) + norm1-path
            std::vector<double> dx0 = dx1;
            rmsnorm_backward(ps, ids.g1, c.x0, c.xhat1, c.r1, dn1g, n, dx0);
            dx = std::move(dx0);
        }

        std::copy(dx.begin(), dx.end(), dinput);
    }

private:
    static constexpr double kNormEps = 1e-5;

    static void rmsnorm_forward(const ParamStore&, int, const std::vector<double>& x, int n, std::vector<double>& xhat,
                                std::vector<double>& r) {
        const int d = static_cast<int>(x.size()) / n;
        xhat.resize(x.size());
        r.resize(n);
        for (int i = 0; i < n; ++i) {
            const double* row = x.data() + static_cast<std::size_t>(i) * d;
            double ms = 0.0;
            for (int j = 0; j < d; ++j) ms += row[j] * row[j];
            ms = ms / d + kNormEps;
            const double inv = 1.0 / std::sqrt(ms);
            r[i] = inv;
            double* out = xhat.data() + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < d; ++j) out[j] = row[j] * inv;
        }
    }

    static void apply_gain(const ParamStore& ps, int gid, const std::vector<double>& xhat, int n, std::vector<double>& out) {
        const int d = static_cast<int>(xhat.size()) / n;
        const double* g = ps.val(gid);
        out.resize(xhat.size());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                out[static_cast<std::size_t>(i) * d + j] = xhat[static_cast<std::size_t>(i) * d + j] * g[j];
    }

    // y = xhat * g with xhat = x * r; accumulates dL/dx into dx_accum and
    // gain gradients into the store.
    static void rmsnorm_backward(ParamStore& ps, int gid, const std::vector<double>& x, const std::vector<double>& xhat,
                                 const std::vector<double>& r, const std::vector<double>& dy, int n,
                                 std::vector<double>& dx_accum) {
        const int d = static_cast<int>(x.size()) / n;
        const double* g = ps.val(gid);
        double* dg = ps.grd(gid);
        for (int i = 0; i < n; ++i) {
            const double* xrow = x.data() + static_cast<std::size_t>(i) * d;
            const double* xh = xhat.data() + static_cast<std::size_t>(i) * d;
            const double* dyr = dy.data() + static_cast<std::size_t>(i) * d;
            double* dxr = dx_accum.data() + static_cast<std::size_t>(i) * d;
            double dot = 0.0;  // sum_j dy_j g_j x_j
            for (int j = 0; j < d; ++j) {
                dg[j] += dyr[j] * xh[j];
                dot += dyr[j] * g[j] * xrow[j];
            }
            const double ri = r[i];
            const double coef = ri * ri * ri * dot / d;
            for (int j = 0; j < d; ++j) dxr[j] += ri * dyr[j] * g[j] - coef * xrow[j];
        }
    }

    TransformerConfig cfg_;
    std::vector<LayerIds> layers_;
    int gf_ = -1, wout_ = -1, bout_ = -1;
};

// Adam with linear warmup, cosine decay, and global-norm clipping.
struct OptimizerConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double max_grad_norm = 7.0;
    double warmup_ratio = 0.03;
    int total_steps = 1;
};

class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n_params, OptimizerConfig cfg) : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

    double lr_at(int step) const {  // step is 1-based
        const int warmup = std::max(1, static_cast<int>(cfg_.total_steps * cfg_.warmup_ratio));
        if (step <= warmup) return cfg_.lr * static_cast<double>(step) / warmup;
        const double progress = static_cast<double>(step - warmup) / std::max(1, cfg_.total_steps - warmup);
        return cfg_.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
    }

    void step(ParamStore& ps) {
        ++t_;
        double norm2 = 0.0;
        for (double gv : ps.grad) norm2 += gv * gv;
        const double norm = std::sqrt(norm2);
        const double clip = (cfg_.max_grad_norm > 0 && norm > cfg_.max_grad_norm) ? cfg_.max_grad_norm / norm : 1.0;
        const double lr = lr_at(t_);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < ps.value.size(); ++i) {
            const double gv = ps.grad[i] * clip;
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * gv;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * gv * gv;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            ps.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

    int steps_taken() const { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    int t_ = 0;
};

}  // namespace blockdiff
