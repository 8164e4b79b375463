#pragma once

#include "diffloss/core/nn_ops.hpp"

namespace diffloss {

// Flat registry of named parameters, the unit of checkpointing and freezing.
class ParamRegistry {
public:
    Var add(const std::string& name, Tensor init) {
        Var p = make_param(std::move(init));
        names_.push_back(name);
        params_.push_back(p);
        return p;
    }

    const std::vector<Var>& params() const { return params_; }
    const std::vector<std::string>& names() const { return names_; }

    Var find(const std::string& name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return params_[i];
        return nullptr;
    }

    int64_t count_scalars() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void set_requires_grad(bool rg) {
        for (auto& p : params_) p->requires_grad = rg;
    }

    bool any_requires_grad() const {
        for (const auto& p : params_)
            if (p->requires_grad) return true;
        return false;
    }

    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& p : params_)
            h = fnv1a64(p->value.data(), static_cast<size_t>(p->value.numel()) * sizeof(float), h);
        return h;
    }

private:
    std::vector<std::string> names_;
    std::vector<Var> params_;
};

// He-normal fan-in init for conv / linear weights.
inline Tensor he_init(Shape shape, int64_t fan_in, Rng& rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.f / static_cast<float>(fan_in)));
}

struct Conv2dLayer {
    Var w, b;
    int64_t stride = 1, pad = -1;

    static Conv2dLayer make(ParamRegistry& reg, const std::string& name, int64_t cin, int64_t cout,
                            int64_t k, int64_t stride, Rng& rng, bool zero_init = false) {
        Conv2dLayer l;
        Tensor wt = zero_init ? Tensor::zeros({cout, cin, k, k}) : he_init({cout, cin, k, k}, cin * k * k, rng);
        l.w = reg.add(name + ".w", std::move(wt));
        l.b = reg.add(name + ".b", Tensor::zeros({cout}));
        l.stride = stride;
        l.pad = k / 2;
        return l;
    }

    Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct LinearLayer {
    Var w, b;

    static LinearLayer make(ParamRegistry& reg, const std::string& name, int64_t din, int64_t dout,
                            Rng& rng, bool zero_init = false) {
        LinearLayer l;
        Tensor wt = zero_init ? Tensor::zeros({dout, din}) : he_init({dout, din}, din, rng);
        l.w = reg.add(name + ".w", std::move(wt));
        l.b = reg.add(name + ".b", Tensor::zeros({dout}));
        return l;
    }

    Var operator()(const Var& x) const { return linear(x, w, b); }
};

struct GroupNormLayer {
    Var gamma, beta;
    int64_t groups = 1;

    static GroupNormLayer make(ParamRegistry& reg, const std::string& name, int64_t channels) {
        GroupNormLayer l;
        l.gamma = reg.add(name + ".g", Tensor::full({channels}, 1.f));
        l.beta = reg.add(name + ".b", Tensor::zeros({channels}));
        for (int64_t g : {8, 4, 2, 1}) {
            if (channels % g == 0) {
                l.groups = g;
                break;
            }
        }
        return l;
    }

    Var operator()(const Var& x) const { return group_norm(x, gamma, beta, groups); }
};

// Sinusoidal embedding of an integer timestep.
inline Tensor sinusoidal_embedding(int64_t t, int64_t dim) {
    Tensor e({dim});
    int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max<int64_t>(half - 1, 1));
        e[i] = static_cast<float>(std::sin(t * freq));
        e[half + i] = static_cast<float>(std::cos(t * freq));
    }
    return e;
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Var> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.push_back(Tensor::zeros(p->value.shape()));
            v_.push_back(Tensor::zeros(p->value.shape()));
        }
    }

    int64_t param_scalar_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void step() {
        ++t_;
        float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
        float corr1 = 1.f - std::pow(b1, static_cast<float>(t_));
        float corr2 = 1.f - std::pow(b2, static_cast<float>(t_));
        float lr = static_cast<float>(cfg_.lr);
        float eps = static_cast<float>(cfg_.eps);
        for (size_t i = 0; i < params_.size(); ++i) {
            Node& p = *params_[i];
            if (!p.grad.defined()) continue;
            float* pm = m_[i].data();
            float* pv = v_[i].data();
            float* pp = p.value.data();
            const float* pg = p.grad.data();
            for (int64_t j = 0, n = p.value.numel(); j < n; ++j) {
                pm[j] = b1 * pm[j] + (1.f - b1) * pg[j];
                pv[j] = b2 * pv[j] + (1.f - b2) * pg[j] * pg[j];
                float mh = pm[j] / corr1;
                float vh = pv[j] / corr2;
                pp[j] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->grad = Tensor();
    }

    // optimizer state, checkpointed so training can resume bit-exactly
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    std::vector<Tensor>& moment1() { return m_; }
    std::vector<Tensor>& moment2() { return v_; }

private:
    std::vector<Var> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

}  // namespace diffloss
