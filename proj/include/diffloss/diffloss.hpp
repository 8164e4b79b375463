#pragma once

// The training constraint this project exists for: run a (clear, restored)
// pair through the frozen denoiser at a shared random (eps, t), and penalise
// the gap between the two branches in eps-space (naturalness) and in h-space
// (semantics). The clear branch is a constant target; gradient reaches the
// restored image through its noisy version and the frozen network.

#include "diffloss/denoiser.hpp"

namespace diffloss {

enum class Variant { epsilon, x0, x_prev };
enum class WeightMode { constant, timestep_adaptive };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::epsilon: return "epsilon";
        case Variant::x0: return "x0";
        case Variant::x_prev: return "x_prev";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "epsilon") return Variant::epsilon;
    if (s == "x0") return Variant::x0;
    if (s == "x_prev") return Variant::x_prev;
    throw ConfigError("unknown diffloss variant '" + s + "' (want epsilon | x0 | x_prev)");
}

inline const char* weight_mode_name(WeightMode m) {
    return m == WeightMode::constant ? "constant" : "timestep_adaptive";
}

inline WeightMode weight_mode_from_string(const std::string& s) {
    if (s == "constant") return WeightMode::constant;
    if (s == "timestep_adaptive") return WeightMode::timestep_adaptive;
    throw ConfigError("unknown weight_mode '" + s + "' (want constant | timestep_adaptive)");
}

struct DiffLossConfig {
    double lambda = 0.01;  // weight of the h-space term inside l_diff
    double gamma = 0.001;  // weight of l_diff inside the total loss
    int t_min = 1;
    int t_max = 0;  // 0 means the schedule's T
    Variant variant = Variant::epsilon;
    WeightMode weight_mode = WeightMode::constant;
    bool share_noise = true;

    int resolved_t_max(const NoiseSchedule& s) const { return t_max == 0 ? s.T : t_max; }

    void validate(const NoiseSchedule& s) const {
        if (lambda < 0 || gamma < 0) throw ConfigError("diffloss config: lambda and gamma must be >= 0");
        int hi = resolved_t_max(s);
        if (t_min < 1 || t_min > hi || hi > s.T)
            throw ConfigError("diffloss config: need 1 <= t_min <= t_max <= T");
    }
};

// Timestep-adaptive factor w(t) = abar_t: close to 1 where little noise was
// added and the denoiser's prediction is most informative, decaying toward 0
// at high noise levels.
inline double timestep_weight(int t, const NoiseSchedule& s) {
    s.check_t(t);
    return s.alpha_bar[t - 1];
}

inline double adaptive_weight(const DiffLossConfig& cfg, int t, const NoiseSchedule& s) {
    return cfg.gamma * timestep_weight(t, s);
}

inline double effective_gamma(const DiffLossConfig& cfg, int t, const NoiseSchedule& s) {
    return cfg.weight_mode == WeightMode::timestep_adaptive ? adaptive_weight(cfg, t, s) : cfg.gamma;
}

// Graph-attached loss terms (scalars) of one evaluation.
struct DiffLossTerms {
    Var l_nat, l_sem, l_diff;
    int t_used = 0;
    Variant variant_used = Variant::epsilon;
};

struct TotalLossTerms {
    Var l_pix, l_total;
    DiffLossTerms diff;
    double gamma_used = 0.0;  // the weight actually applied to l_diff
};

// Plain-number view for logging. Composed in double precision so the
// decomposition identities hold exactly and are assertable on every record.
struct LossReport {
    double l_pix = 0, l_nat = 0, l_sem = 0, l_diff = 0, l_total = 0;
    int t_used = 0;
    Variant variant_used = Variant::epsilon;

    void validate(double lambda, double gamma_used) const {
        auto close = [](double a, double b) {
            return std::abs(a - b) <= 1e-9 * std::max({std::abs(a), std::abs(b), 1.0});
        };
        if (l_pix < 0 || l_nat < 0 || l_sem < 0 || l_diff < 0 || l_total < 0)
            throw NumericError("loss report: negative component");
        if (!close(l_diff, l_nat + lambda * l_sem))
            throw NumericError("loss report: l_diff != l_nat + lambda*l_sem");
        if (!close(l_total, l_pix + gamma_used * l_diff))
            throw NumericError("loss report: l_total != l_pix + gamma*l_diff");
    }
};

namespace detail {

inline void check_pair(const Tensor& x, const Var& z) {
    if (x.shape().size() != 4 || x.shape()[1] != 3)
        throw ArgumentError("diffloss: images must be (N,3,H,W), got " + shape_str(x.shape()));
    check_same_shape(x, z->value, "diffloss clear/restored pair");
}

// [0,1] -> [-1,1] as a graph op for the restored branch.
inline Var to_symmetric_var(const Var& unit) { return scale_shift(unit, 2.f, -1.f); }

}  // namespace detail

// Deterministic core: every random choice (t, the shared eps, and the optional
// independent eps for the restored branch) is an explicit argument, so tests
// and finite-difference oracles can pin them.
inline DiffLossTerms compute_diffloss_at(const Tensor& x_clear_unit, const Var& z_restored_unit,
                                         const DdpmUnet& den, const NoiseSchedule& s,
                                         const DiffLossConfig& cfg, const Tensor& eps, int t,
                                         const Tensor* eps_restored = nullptr) {
    detail::check_pair(x_clear_unit, z_restored_unit);
    if (!den.frozen()) throw ArgumentError("diffloss: denoiser must be frozen during restoration training");
    cfg.validate(s);
    s.check_t(t);
    check_same_shape(x_clear_unit, eps, "diffloss eps");

    // clear branch: all constants, no gradient by construction
    Tensor x_sym = x_clear_unit.clone();
    for (int64_t i = 0; i < x_sym.numel(); ++i) x_sym[i] = 2.f * x_sym[i] - 1.f;
    Var x_t = forward_diffuse(constant(x_sym), constant(eps), t, s);
    DenoiserOutput clr = den.denoise_with_h(x_t, t);

    // restored branch: carries the gradient
    const Tensor& eps_r = eps_restored ? *eps_restored : eps;
    check_same_shape(x_clear_unit, eps_r, "diffloss eps (restored branch)");
    Var z_t = forward_diffuse(detail::to_symmetric_var(z_restored_unit), constant(eps_r), t, s);
    DenoiserOutput rst = den.denoise_with_h(z_t, t);

    Var l_nat;
    switch (cfg.variant) {
        case Variant::epsilon:
            l_nat = mse_mean(rst.eps_hat, clr.eps_hat);
            break;
        case Variant::x0:
            l_nat = mse_mean(reconstruct_x0(z_t, rst.eps_hat, t, s),
                             reconstruct_x0(x_t, clr.eps_hat, t, s));
            break;
        case Variant::x_prev: {
            Var z_prev = posterior_step(z_t, reconstruct_x0(z_t, rst.eps_hat, t, s), t, s, nullptr);
            Var x_prev = posterior_step(x_t, reconstruct_x0(x_t, clr.eps_hat, t, s), t, s, nullptr);
            l_nat = mse_mean(z_prev, x_prev);
            break;
        }
    }
    Var l_sem = mse_mean(rst.h, clr.h);
    Var l_diff = add(l_nat, scale(l_sem, static_cast<float>(cfg.lambda)));
    return DiffLossTerms{l_nat, l_sem, l_diff, t, cfg.variant};
}

inline DiffLossTerms compute_diffloss(const Tensor& x_clear_unit, const Var& z_restored_unit,
                                      const DdpmUnet& den, const NoiseSchedule& s,
                                      const DiffLossConfig& cfg, Rng& rng) {
    cfg.validate(s);
    int t = sample_timestep(rng, cfg.t_min, cfg.resolved_t_max(s));
    Tensor eps = Tensor::randn(x_clear_unit.shape(), rng);
    if (cfg.share_noise) return compute_diffloss_at(x_clear_unit, z_restored_unit, den, s, cfg, eps, t);
    Tensor eps_r = Tensor::randn(x_clear_unit.shape(), rng);
    return compute_diffloss_at(x_clear_unit, z_restored_unit, den, s, cfg, eps, t, &eps_r);
}

// Pixel term plus the weighted constraint: the full training objective.
inline TotalLossTerms compute_total_loss_at(const Tensor& x_clear_unit, const Var& z_restored_unit,
                                            const DdpmUnet& den, const NoiseSchedule& s,
                                            const DiffLossConfig& cfg, const Tensor& eps, int t,
                                            const Tensor* eps_restored = nullptr) {
    DiffLossTerms diff = compute_diffloss_at(x_clear_unit, z_restored_unit, den, s, cfg, eps, t, eps_restored);
    Var l_pix = mse_mean(z_restored_unit, constant(x_clear_unit));
    double g = effective_gamma(cfg, t, s);
    Var l_total = add(l_pix, scale(diff.l_diff, static_cast<float>(g)));
    return TotalLossTerms{l_pix, l_total, std::move(diff), g};
}

inline TotalLossTerms compute_total_loss(const Tensor& x_clear_unit, const Var& z_restored_unit,
                                         const DdpmUnet& den, const NoiseSchedule& s,
                                         const DiffLossConfig& cfg, Rng& rng) {
    cfg.validate(s);
    int t = sample_timestep(rng, cfg.t_min, cfg.resolved_t_max(s));
    Tensor eps = Tensor::randn(x_clear_unit.shape(), rng);
    if (cfg.share_noise) return compute_total_loss_at(x_clear_unit, z_restored_unit, den, s, cfg, eps, t);
    Tensor eps_r = Tensor::randn(x_clear_unit.shape(), rng);
    return compute_total_loss_at(x_clear_unit, z_restored_unit, den, s, cfg, eps, t, &eps_r);
}

inline LossReport make_report(const DiffLossTerms& terms, double lambda) {
    LossReport r;
    r.l_nat = terms.l_nat->scalar();
    r.l_sem = terms.l_sem->scalar();
    r.l_diff = r.l_nat + lambda * r.l_sem;
    r.l_total = r.l_diff;  // no pixel term in this view: validates with gamma_used = 1
    r.t_used = terms.t_used;
    r.variant_used = terms.variant_used;
    return r;
}

inline LossReport make_report(const TotalLossTerms& terms, double lambda) {
    LossReport r = make_report(terms.diff, lambda);
    r.l_pix = terms.l_pix->scalar();
    r.l_total = r.l_pix + terms.gamma_used * r.l_diff;
    return r;
}

}  // namespace diffloss
