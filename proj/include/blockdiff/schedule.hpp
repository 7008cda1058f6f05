#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdiff/config.hpp"

namespace blockdiff {

// Per-step masking rates beta_t and cumulative survival alpha_t. alpha(0) = 1
// and alpha(T) = 0: by the terminal step everything is absorbed.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] = beta_t, t = 1..T
    std::vector<double> alpha_bar;  // alpha_bar[t] = prod_{s<=t}(1-beta_s), index 0..T

    double alpha(int t) const {
        if (t < 0 || t > T) throw std::out_of_range("schedule step out of range");
        return alpha_bar[t];
    }

    double beta_at(int t) const {
        if (t < 1 || t > T) throw std::out_of_range("schedule step out of range");
        return beta[t - 1];
    }

    // alpha_t = 1 - t/T, the simplest schedule with alpha_0 = 1, alpha_T = 0.
    static NoiseSchedule linear_alpha(int steps) {
        if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
        NoiseSchedule s;
        s.T = steps;
        s.beta.resize(steps);
        for (int t = 1; t <= steps; ++t) s.beta[t - 1] = 1.0 / static_cast<double>(steps - t + 1);
        s.recompute_alpha();
        s.validate();
        return s;
    }

    static NoiseSchedule from_betas(std::vector<double> betas) {
        if (betas.empty()) throw std::invalid_argument("schedule needs at least one step");
        NoiseSchedule s;
        s.T = static_cast<int>(betas.size());
        s.beta = std::move(betas);
        s.recompute_alpha();
        s.validate();
        return s;
    }

    void recompute_alpha() {
        alpha_bar.assign(T + 1, 1.0);
        for (int t = 1; t <= T; ++t) alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t - 1]);
    }

    void validate() const {
        if (T < 1 || static_cast<int>(beta.size()) != T || static_cast<int>(alpha_bar.size()) != T + 1)
            throw std::invalid_argument("malformed schedule");
        for (double b : beta)
            if (b < 0.0 || b > 1.0) throw std::invalid_argument("beta_t must lie in [0,1]");
        if (std::abs(alpha_bar[0] - 1.0) > 1e-12) throw std::invalid_argument("alpha_0 must be 1");
        if (std::abs(alpha_bar[T]) > 1e-12) throw std::invalid_argument("alpha_T must be 0");
        double run = 1.0;
        for (int t = 1; t <= T; ++t) {
            run *= 1.0 - beta[t - 1];
            if (std::abs(run - alpha_bar[t]) > 1e-12) throw std::invalid_argument("alpha_bar inconsistent with beta");
            if (alpha_bar[t] > alpha_bar[t - 1] + 1e-15) throw std::invalid_argument("alpha_t must be nonincreasing");
        }
    }

    // Config section: T, schedule = linear-alpha | explicit, optional beta list.
    static NoiseSchedule from_config(const Config& cfg, std::string_view section = "schedule") {
        const int steps = cfg.get_int(section, "T");
        const std::string kind = cfg.get_or(section, "schedule", "linear-alpha");
        if (kind == "linear-alpha") return linear_alpha(steps);
        if (kind == "explicit") {
            auto betas = cfg.get_double_list(section, "beta");
            if (static_cast<int>(betas.size()) != steps)
                throw std::invalid_argument("explicit schedule: beta list length must equal T");
            return from_betas(std::move(betas));
        }
        throw std::invalid_argument("unknown schedule kind: " + kind);
    }

    void to_config(Config& cfg, std::string_view section = "schedule", bool force_explicit = false) const {
        cfg.set(section, "T", std::to_string(T));
        bool is_linear = true;
        for (int t = 1; t <= T; ++t)
            if (std::abs(alpha_bar[t] - (1.0 - static_cast<double>(t) / T)) > 1e-12) is_linear = false;
        if (is_linear && !force_explicit) {
            cfg.set(section, "schedule", "linear-alpha");
            return;
        }
        cfg.set(section, "schedule", "explicit");
        std::ostringstream out;
        for (int t = 1; t <= T; ++t) {
            if (t > 1) out << ',';
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", beta[t - 1]);
            out << buf;
        }
        cfg.set(section, "beta", out.str());
    }
};

}  // namespace blockdiff
