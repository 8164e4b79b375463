#pragma once

#include <Eigen/Dense>
#include <functional>
#include <unordered_set>

#include "diffloss/core/tensor.hpp"

namespace diffloss {

// Reverse-mode autodiff over a dynamically built tape. Nodes hold a value, a
// lazily allocated gradient and a pull-style backward closure that scatters
// the node's gradient into its inputs. Gradients only flow into inputs with
// requires_grad set, which is how a frozen network stays frozen while still
// passing gradients through to its inputs.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward_fn;
    // Double-precision view of scalar outputs. Reductions and scalar arithmetic
    // keep it so loss values are not quantised to float32 — finite-difference
    // oracles and logging read this.
    double scalar_d = 0.0;
    bool has_scalar_d = false;

    Tensor& ensure_grad() {
        if (!grad.defined()) grad = Tensor::zeros(value.shape());
        return grad;
    }

    double scalar() const {
        if (value.numel() != 1) throw ArgumentError("scalar(): node is not scalar");
        return has_scalar_d ? scalar_d : static_cast<double>(value[0]);
    }
};

inline Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

inline Var make_param(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

inline Var detach(const Var& v) { return constant(v->value); }

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Var*> vs) {
    for (const Var* v : vs)
        if (*v && (*v)->requires_grad) return true;
    return false;
}

inline Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->inputs = std::move(inputs);
        n->backward_fn = std::move(backward);
    }
    return n;
}

inline void accum(Node& dst, const float* g, int64_t n, float scale = 1.f) {
    Tensor& t = dst.ensure_grad();
    float* p = t.data();
    for (int64_t i = 0; i < n; ++i) p[i] += scale * g[i];
}

inline void set_scalar_d(const Var& v, double d) {
    v->scalar_d = d;
    v->has_scalar_d = true;
}

}  // namespace detail

// Runs reverse accumulation from a scalar root (numel == 1).
inline void backward(const Var& root) {
    if (root->value.numel() != 1) throw ArgumentError("backward: root must be scalar");
    if (!root->requires_grad) throw NumericError("backward: root does not depend on any parameter");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.fill(1.f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

// sa*a + sb*b
inline Var axpby(float sa, const Var& a, float sb, const Var& b) {
    check_same_shape(a->value, b->value, "axpby");
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = sa * pa[i] + sb * pb[i];
    Var node = detail::make_node(std::move(out), {a, b}, [sa, sb, n](Node& self) {
        const float* g = self.grad.data();
        if (self.inputs[0]->requires_grad) detail::accum(*self.inputs[0], g, n, sa);
        if (self.inputs[1]->requires_grad) detail::accum(*self.inputs[1], g, n, sb);
    });
    if (n == 1)
        detail::set_scalar_d(node, static_cast<double>(sa) * a->scalar() + static_cast<double>(sb) * b->scalar());
    return node;
}

inline Var add(const Var& a, const Var& b) { return axpby(1.f, a, 1.f, b); }
inline Var sub(const Var& a, const Var& b) { return axpby(1.f, a, -1.f, b); }

// s*a + c
inline Var scale_shift(const Var& a, float s, float c = 0.f) {
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = s * pa[i] + c;
    Var node = detail::make_node(std::move(out), {a}, [s, n](Node& self) {
        detail::accum(*self.inputs[0], self.grad.data(), n, s);
    });
    if (n == 1) detail::set_scalar_d(node, static_cast<double>(s) * a->scalar() + static_cast<double>(c));
    return node;
}

inline Var scale(const Var& a, float s) { return scale_shift(a, s, 0.f); }

inline Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    Var node = detail::make_node(std::move(out), {a, b}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* pa = self.inputs[0]->value.data();
        const float* pb = self.inputs[1]->value.data();
        if (self.inputs[0]->requires_grad) {
            Tensor& ga = self.inputs[0]->ensure_grad();
            float* p = ga.data();
            for (int64_t i = 0; i < n; ++i) p[i] += g[i] * pb[i];
        }
        if (self.inputs[1]->requires_grad) {
            Tensor& gb = self.inputs[1]->ensure_grad();
            float* p = gb.data();
            for (int64_t i = 0; i < n; ++i) p[i] += g[i] * pa[i];
        }
    });
    if (n == 1) detail::set_scalar_d(node, a->scalar() * b->scalar());
    return node;
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var abs_val(const Var& a) {
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
    Var node = detail::make_node(std::move(out), {a}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* pa = self.inputs[0]->value.data();
        Tensor& ga = self.inputs[0]->ensure_grad();
        float* p = ga.data();
        for (int64_t i = 0; i < n; ++i) p[i] += g[i] * (pa[i] > 0.f ? 1.f : (pa[i] < 0.f ? -1.f : 0.f));
    });
    if (n == 1) detail::set_scalar_d(node, std::abs(a->scalar()));
    return node;
}

inline Var sigmoid(const Var& a) {
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = 1.f / (1.f + std::exp(-pa[i]));
    Tensor saved = out;  // shares storage
    return detail::make_node(std::move(out), {a}, [n, saved](Node& self) {
        const float* g = self.grad.data();
        const float* s = saved.data();
        Tensor& ga = self.inputs[0]->ensure_grad();
        float* p = ga.data();
        for (int64_t i = 0; i < n; ++i) p[i] += g[i] * s[i] * (1.f - s[i]);
    });
}

// x * sigmoid(x)
inline Var silu(const Var& a) {
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / (1.f + std::exp(-pa[i]));
    return detail::make_node(std::move(out), {a}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* pa = self.inputs[0]->value.data();
        Tensor& ga = self.inputs[0]->ensure_grad();
        float* p = ga.data();
        for (int64_t i = 0; i < n; ++i) {
            float s = 1.f / (1.f + std::exp(-pa[i]));
            p[i] += g[i] * s * (1.f + pa[i] * (1.f - s));
        }
    });
}

inline Var relu(const Var& a) {
    Tensor out(a->value.shape());
    const float* pa = a->value.data();
    float* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0.f ? pa[i] : 0.f;
    return detail::make_node(std::move(out), {a}, [n](Node& self) {
        const float* g = self.grad.data();
        const float* pa = self.inputs[0]->value.data();
        Tensor& ga = self.inputs[0]->ensure_grad();
        float* p = ga.data();
        for (int64_t i = 0; i < n; ++i)
            if (pa[i] > 0.f) p[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, Shape shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    int64_t n = out.numel();
    return detail::make_node(std::move(out), {a}, [n](Node& self) {
        // same element order, flat accumulate
        detail::accum(*self.inputs[0], self.grad.data(), n);
    });
}

inline Var flatten2d(const Var& a) {
    const Shape& s = a->value.shape();
    int64_t rest = a->value.numel() / s[0];
    return reshape(a, {s[0], rest});
}

inline Var concat_channels(const Var& a, const Var& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ArgumentError("concat_channels: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    int64_t N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
    int64_t hw = H * W;
    Tensor out({N, Ca + Cb, H, W});
    float* po = out.data();
    const float* pa = a->value.data();
    const float* pb = b->value.data();
    for (int64_t n = 0; n < N; ++n) {
        std::memcpy(po + (n * (Ca + Cb)) * hw, pa + n * Ca * hw, sizeof(float) * Ca * hw);
        std::memcpy(po + (n * (Ca + Cb) + Ca) * hw, pb + n * Cb * hw, sizeof(float) * Cb * hw);
    }
    return detail::make_node(std::move(out), {a, b}, [N, Ca, Cb, hw](Node& self) {
        const float* g = self.grad.data();
        if (self.inputs[0]->requires_grad) {
            Tensor& ga = self.inputs[0]->ensure_grad();
            for (int64_t n = 0; n < N; ++n) {
                float* p = ga.data() + n * Ca * hw;
                const float* q = g + (n * (Ca + Cb)) * hw;
                for (int64_t i = 0; i < Ca * hw; ++i) p[i] += q[i];
            }
        }
        if (self.inputs[1]->requires_grad) {
            Tensor& gb = self.inputs[1]->ensure_grad();
            for (int64_t n = 0; n < N; ++n) {
                float* p = gb.data() + n * Cb * hw;
                const float* q = g + (n * (Ca + Cb) + Ca) * hw;
                for (int64_t i = 0; i < Cb * hw; ++i) p[i] += q[i];
            }
        }
    });
}

inline Var crop_center(const Var& a, int64_t out_h, int64_t out_w) {
    const Shape& s = a->value.shape();
    if (s.size() != 4) throw ArgumentError("crop_center: want NCHW");
    int64_t N = s[0], C = s[1], H = s[2], W = s[3];
    if (out_h > H || out_w > W) throw ArgumentError("crop_center: crop larger than input");
    int64_t oy = (H - out_h) / 2, ox = (W - out_w) / 2;
    Tensor out({N, C, out_h, out_w});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < out_h; ++y)
                std::memcpy(&out.at(n, c, y, 0), a->value.data() + ((n * C + c) * H + y + oy) * W + ox,
                            sizeof(float) * out_w);
    return detail::make_node(std::move(out), {a}, [N, C, H, W, out_h, out_w, oy, ox](Node& self) {
        Tensor& ga = self.inputs[0]->ensure_grad();
        const float* g = self.grad.data();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t y = 0; y < out_h; ++y) {
                    float* p = ga.data() + ((n * C + c) * H + y + oy) * W + ox;
                    const float* q = g + ((n * C + c) * out_h + y) * out_w;
                    for (int64_t x = 0; x < out_w; ++x) p[x] += q[x];
                }
    });
}

// ---------------------------------------------------------------------------
// broadcast ops
// ---------------------------------------------------------------------------

// x (N,C,H,W) + b (C)
inline Var bias_channel(const Var& x, const Var& b) {
    const Shape& s = x->value.shape();
    if (s.size() != 4 || b->value.numel() != s[1])
        throw ArgumentError("bias_channel: want NCHW and per-channel bias");
    int64_t N = s[0], C = s[1], hw = s[2] * s[3];
    Tensor out(s);
    const float* px = x->value.data();
    const float* pb = b->value.data();
    float* po = out.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            float bv = pb[c];
            const float* xi = px + (n * C + c) * hw;
            float* oi = po + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) oi[i] = xi[i] + bv;
        }
    return detail::make_node(std::move(out), {x, b}, [N, C, hw](Node& self) {
        const float* g = self.grad.data();
        if (self.inputs[0]->requires_grad) detail::accum(*self.inputs[0], g, N * C * hw);
        if (self.inputs[1]->requires_grad) {
            Tensor& gb = self.inputs[1]->ensure_grad();
            float* p = gb.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    const float* gi = g + (n * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) s += gi[i];
                    p[c] += static_cast<float>(s);
                }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var mean_all(const Var& a) {
    int64_t n = a->value.numel();
    double s = 0.0;
    const float* pa = a->value.data();
    for (int64_t i = 0; i < n; ++i) s += pa[i];
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    Var node = detail::make_node(std::move(out), {a}, [n](Node& self) {
        float g = self.grad[0] / static_cast<float>(n);
        Tensor& ga = self.inputs[0]->ensure_grad();
        float* p = ga.data();
        for (int64_t i = 0; i < n; ++i) p[i] += g;
    });
    detail::set_scalar_d(node, s / static_cast<double>(n));
    return node;
}

// mean over H,W: (N,C,H,W) -> (N,C)
inline Var spatial_mean(const Var& a) {
    const Shape& s = a->value.shape();
    if (s.size() != 4) throw ArgumentError("spatial_mean: want NCHW");
    int64_t N = s[0], C = s[1], hw = s[2] * s[3];
    Tensor out({N, C});
    const float* pa = a->value.data();
    float* po = out.data();
    for (int64_t j = 0; j < N * C; ++j) {
        double acc = 0.0;
        const float* p = pa + j * hw;
        for (int64_t i = 0; i < hw; ++i) acc += p[i];
        po[j] = static_cast<float>(acc / static_cast<double>(hw));
    }
    return detail::make_node(std::move(out), {a}, [N, C, hw](Node& self) {
        const float* g = self.grad.data();
        Tensor& ga = self.inputs[0]->ensure_grad();
        float inv = 1.f / static_cast<float>(hw);
        for (int64_t j = 0; j < N * C; ++j) {
            float* p = ga.data() + j * hw;
            float gv = g[j] * inv;
            for (int64_t i = 0; i < hw; ++i) p[i] += gv;
        }
    });
}

inline Var mse_mean(const Var& a, const Var& b) { return mean_all(square(sub(a, b))); }
inline Var l1_mean(const Var& a, const Var& b) { return mean_all(abs_val(sub(a, b))); }

}  // namespace diffloss
