#pragma once

#include "diffloss/core/autodiff.hpp"
#include "diffloss/schedule.hpp"

namespace diffloss {

// Closed-form diffusion math. All ops are graph ops: wrap plain tensors with
// constant() when no gradient is wanted.

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Var forward_diffuse(const Var& x0, const Var& eps, int t, const NoiseSchedule& s) {
    s.check_t(t);
    check_same_shape(x0->value, eps->value, "forward_diffuse");
    double ab = s.alpha_bar[t - 1];
    return axpby(static_cast<float>(std::sqrt(ab)), x0, static_cast<float>(std::sqrt(1.0 - ab)), eps);
}

// x0 = (1/sqrt(abar_t)) x_t - sqrt(1/abar_t - 1) eps_hat
inline Var reconstruct_x0(const Var& x_t, const Var& eps_hat, int t, const NoiseSchedule& s) {
    s.check_t(t);
    check_same_shape(x_t->value, eps_hat->value, "reconstruct_x0");
    double ab = s.alpha_bar[t - 1];
    return axpby(static_cast<float>(1.0 / std::sqrt(ab)), x_t,
                 static_cast<float>(-std::sqrt(1.0 / ab - 1.0)), eps_hat);
}

// x_{t-1} = sqrt(abar_{t-1})(1-a_t)/(1-abar_t) x0_hat
//         + sqrt(a_t)(1-abar_{t-1})/(1-abar_t) x_t + sqrt(beta~_t) noise
inline Var posterior_step(const Var& x_t, const Var& x0_hat, int t, const NoiseSchedule& s,
                          const Var& noise) {
    s.check_t(t);
    check_same_shape(x_t->value, x0_hat->value, "posterior_step");
    double ab = s.alpha_bar[t - 1];
    double ab_prev = s.alpha_bar_prev(t);
    double a = s.alpha[t - 1];
    double c0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
    double ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    Var mean = axpby(static_cast<float>(c0), x0_hat, static_cast<float>(ct), x_t);
    if (!noise) return mean;
    check_same_shape(x_t->value, noise->value, "posterior_step");
    if (t == 1) {
        if (noise->value.max_abs() != 0.f)
            throw ArgumentError("posterior_step: t=1 requires zero noise (beta~_1 = 0)");
        return mean;
    }
    double sigma = std::sqrt(s.posterior_var[t - 1]);
    return axpby(1.f, mean, static_cast<float>(sigma), noise);
}

// Anything that maps (x_t, t) to predicted noise. Used by the sampler so tests
// can plug in closed-form denoisers.
using DenoiseFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Eq. 6 training objective: E || eps - f(x_t, t) ||_1 (mean abs over elements).
// `predict` returns the graph-attached eps_hat for the noisy input.
inline Var ddpm_loss(const std::function<Var(const Var&, int)>& predict, const Var& x0, int t,
                     const Var& eps, const NoiseSchedule& s) {
    Var x_t = forward_diffuse(x0, eps, t, s);
    Var eps_hat = predict(x_t, t);
    return l1_mean(eps_hat, eps);
}

inline int sample_timestep(Rng& rng, int t_min, int t_max) {
    if (t_min < 1 || t_min > t_max) throw ArgumentError("sample_timestep: invalid range");
    return static_cast<int>(rng.uniform_int(t_min, t_max));
}

// Ancestral sampling: from x_T ~ N(0,1) apply reconstruct_x0 + posterior_step
// for t = T..1, clamp into [-1,1].
inline ImageBatch sample(const DenoiseFn& denoise, const NoiseSchedule& s, const Shape& shape,
                         Rng& rng) {
    Tensor x = Tensor::randn(shape, rng);
    for (int t = s.T; t >= 1; --t) {
        Tensor eps_hat = denoise(x, t);
        Var x0_hat = reconstruct_x0(constant(x), constant(eps_hat), t, s);
        Var noise = t > 1 ? constant(Tensor::randn(shape, rng)) : constant(Tensor::zeros(shape));
        x = posterior_step(constant(x), x0_hat, t, s, noise)->value;
    }
    x.clamp_(-1.f, 1.f);
    return ImageBatch{x, Range::symmetric};
}

}  // namespace diffloss
