#pragma once

#include "diffloss/core/tensor.hpp"

namespace diffloss {

// Precomputed diffusion coefficients. Index t is 1-based in the API; arrays
// store t = 1..T at [t-1]. Convention alpha_bar(0) = 1, so posterior_var(1) = 0
// and the final sampling step is deterministic.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;           // beta_t
    std::vector<double> alpha;          // 1 - beta_t
    std::vector<double> alpha_bar;      // prod_{s<=t} alpha_s
    std::vector<double> posterior_var;  // beta~_t = (1-abar_{t-1})/(1-abar_t) * (1-alpha_t)

    void check_t(int t) const {
        if (t < 1 || t > T) throw ArgumentError("timestep out of range: t=" + std::to_string(t) +
                                                ", T=" + std::to_string(T));
    }

    double alpha_bar_prev(int t) const { return t >= 2 ? alpha_bar[t - 2] : 1.0; }
};

inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ConfigError("make_linear_schedule: T must be >= 2, got " + std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw ConfigError("make_linear_schedule: need 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.posterior_var.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = beta_start + (beta_end - beta_start) * static_cast<double>(i) / (T - 1);
        s.beta[i] = b;
        s.alpha[i] = 1.0 - b;
        double prev = prod;
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        s.posterior_var[i] = (1.0 - prev) / (1.0 - prod) * b;
    }
    if (s.alpha_bar[T - 1] <= 0.0) throw ConfigError("make_linear_schedule: alpha_bar vanished");
    return s;
}

// Serializable one-line descriptor, stored in checkpoint manifests.
struct ScheduleDescriptor {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return make_linear_schedule(T, beta_start, beta_end); }

    bool operator==(const ScheduleDescriptor& o) const {
        return T == o.T && beta_start == o.beta_start && beta_end == o.beta_end;
    }
};

}  // namespace diffloss
