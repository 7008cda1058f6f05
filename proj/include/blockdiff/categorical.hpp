#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "blockdiff/rng.hpp"
#include "blockdiff/vocab.hpp"

namespace blockdiff {

// Probability vector indexed by token id.
struct Categorical {
    std::vector<double> p;

    Categorical() = default;
    explicit Categorical(int size) : p(size, 0.0) {}

    static Categorical point_mass(Token t, int size) {
        Categorical c(size);
        c.p[t] = 1.0;
        return c;
    }

    static Categorical uniform_over(const std::vector<Token>& support, int size) {
        Categorical c(size);
        for (Token t : support) c.p[t] = 1.0 / static_cast<double>(support.size());
        return c;
    }

    int size() const { return static_cast<int>(p.size()); }
    double sum() const { return std::accumulate(p.begin(), p.end(), 0.0); }

    void normalize() {
        const double s = sum();
        if (s <= 0.0) throw std::domain_error("cannot normalize a zero-mass distribution");
        for (double& v : p) v /= s;
    }

    // Shannon entropy in nats; 0 log 0 := 0.
    double entropy() const {
        double h = 0.0;
        for (double v : p)
            if (v > 0.0) h -= v * std::log(v);
        return h;
    }

    // Ties resolve to the lowest token index.
    Token argmax() const {
        Token best = 0;
        for (int i = 1; i < size(); ++i)
            if (p[i] > p[best]) best = i;
        return best;
    }
};

inline Token sample(const Categorical& dist, Rng& rng) {
    const double u = rng.uniform01() * dist.sum();
    double acc = 0.0;
    for (int i = 0; i < dist.size(); ++i) {
        acc += dist.p[i];
        if (u < acc) return i;
    }
    for (int i = dist.size() - 1; i >= 0; --i)
        if (dist.p[i] > 0.0) return i;
    throw std::domain_error("cannot sample from a zero-mass distribution");
}

// Sampling transform: sharpen by 1/temperature, then nucleus-truncate to the
// smallest prefix (by descending mass, ties to lower index) reaching top_p.
// temperature <= 0 collapses to the argmax point mass.
inline Categorical apply_temperature_top_p(const Categorical& dist, double temperature, double top_p) {
    if (temperature <= 0.0) return Categorical::point_mass(dist.argmax(), dist.size());
    Categorical out(dist.size());
    double maxlog = -1e300;
    for (int i = 0; i < dist.size(); ++i)
        if (dist.p[i] > 0.0) maxlog = std::max(maxlog, std::log(dist.p[i]) / temperature);
    double s = 0.0;
    for (int i = 0; i < dist.size(); ++i) {
        if (dist.p[i] > 0.0) {
            out.p[i] = std::exp(std::log(dist.p[i]) / temperature - maxlog);
            s += out.p[i];
        }
    }
    for (double& v : out.p) v /= s;
    if (top_p < 1.0) {
        std::vector<int> order(out.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return out.p[a] > out.p[b]; });
        double acc = 0.0;
        std::size_t keep = 0;
        while (keep < order.size() && acc < top_p) {
            acc += out.p[order[keep]];
            ++keep;
        }
        Categorical trunc(out.size());
        for (std::size_t i = 0; i < keep; ++i) trunc.p[order[i]] = out.p[order[i]];
        trunc.normalize();
        return trunc;
    }
    return out;
}

}  // namespace blockdiff
