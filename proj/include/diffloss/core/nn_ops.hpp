#pragma once

#include "diffloss/core/autodiff.hpp"

namespace diffloss {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using MatRMd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// col: (Cin*K*K, Ho*Wo) row-major
inline void im2col(const float* x, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride,
                   int64_t pad, int64_t Ho, int64_t Wo, float* col) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ki = 0; ki < K; ++ki) {
            for (int64_t kj = 0; kj < K; ++kj) {
                float* dst = col + ((c * K + ki) * K + kj) * (Ho * Wo);
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    int64_t hi = ho * stride + ki - pad;
                    if (hi < 0 || hi >= H) {
                        std::fill(dst + ho * Wo, dst + (ho + 1) * Wo, 0.f);
                        continue;
                    }
                    const float* src = x + (c * H + hi) * W;
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        int64_t wi = wo * stride + kj - pad;
                        dst[ho * Wo + wo] = (wi >= 0 && wi < W) ? src[wi] : 0.f;
                    }
                }
            }
        }
    }
}

// scatter-add of col gradient back into the input image
inline void col2im_add(const float* col, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride,
                       int64_t pad, int64_t Ho, int64_t Wo, float* dx) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ki = 0; ki < K; ++ki) {
            for (int64_t kj = 0; kj < K; ++kj) {
                const float* src = col + ((c * K + ki) * K + kj) * (Ho * Wo);
                for (int64_t ho = 0; ho < Ho; ++ho) {
                    int64_t hi = ho * stride + ki - pad;
                    if (hi < 0 || hi >= H) continue;
                    float* dst = dx + (c * H + hi) * W;
                    for (int64_t wo = 0; wo < Wo; ++wo) {
                        int64_t wi = wo * stride + kj - pad;
                        if (wi >= 0 && wi < W) dst[wi] += src[ho * Wo + wo];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x (N,Cin,H,W), w (Cout,Cin,K,K), optional b (Cout). Zero padding.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride = 1, int64_t pad = -1) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4) throw ArgumentError("conv2d: want NCHW input and OIKK weight");
    if (xs[1] != ws[1])
        throw ArgumentError("conv2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ws));
    int64_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    int64_t Cout = ws[0], K = ws[2];
    if (pad < 0) pad = K / 2;  // 'same' for stride 1
    int64_t Ho = (H + 2 * pad - K) / stride + 1;
    int64_t Wo = (W + 2 * pad - K) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ArgumentError("conv2d: empty output");
    if (b && b->value.numel() != Cout) throw ArgumentError("conv2d: bias size mismatch");

    Tensor out({N, Cout, Ho, Wo});
    int64_t ck = Cin * K * K, hw = Ho * Wo;
    std::vector<float> col(static_cast<size_t>(ck * hw));
    // Accumulate the forward product in double so the float rounding of the
    // output is just the final store, not ck-term summation noise. Keeps
    // finite-difference probes of deep stacks out of the roundoff floor.
    MatRMd wd = CMapRM(w->value.data(), Cout, ck).cast<double>();
    Eigen::VectorXd bd = Eigen::VectorXd::Zero(Cout);
    if (b) bd = Eigen::Map<const Eigen::VectorXf>(b->value.data(), Cout).cast<double>();
    MatRMd cd(ck, hw), od(Cout, hw);
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(x->value.data() + n * Cin * H * W, Cin, H, W, K, stride, pad, Ho, Wo, col.data());
        cd = CMapRM(col.data(), ck, hw).cast<double>();
        od.noalias() = wd * cd;
        od.colwise() += bd;
        MapRM(out.data() + n * Cout * hw, Cout, hw) = od.cast<float>();
    }

    std::vector<Var> ins = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return detail::make_node(
        std::move(out), std::move(ins), [N, Cin, H, W, Cout, K, stride, pad, Ho, Wo, ck, hw](Node& self) {
            const Var& x = self.inputs[0];
            const Var& w = self.inputs[1];
            const float* g = self.grad.data();
            std::vector<float> col(static_cast<size_t>(ck * hw));
            CMapRM wm(w->value.data(), Cout, ck);

            if (w->requires_grad) {
                Tensor& gw = w->ensure_grad();
                MapRM gwm(gw.data(), Cout, ck);
                for (int64_t n = 0; n < N; ++n) {
                    detail::im2col(x->value.data() + n * Cin * H * W, Cin, H, W, K, stride, pad, Ho, Wo,
                                   col.data());
                    CMapRM cm(col.data(), ck, hw);
                    CMapRM gm(g + n * Cout * hw, Cout, hw);
                    gwm.noalias() += gm * cm.transpose();
                }
            }
            if (x->requires_grad) {
                Tensor& gx = x->ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    CMapRM gm(g + n * Cout * hw, Cout, hw);
                    MapRM cm(col.data(), ck, hw);
                    cm.noalias() = wm.transpose() * gm;
                    detail::col2im_add(col.data(), Cin, H, W, K, stride, pad, Ho, Wo,
                                       gx.data() + n * Cin * H * W);
                }
            }
            if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                Tensor& gb = self.inputs[2]->ensure_grad();
                float* p = gb.data();
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t c = 0; c < Cout; ++c) {
                        double s = 0.0;
                        const float* gi = g + (n * Cout + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) s += gi[i];
                        p[c] += static_cast<float>(s);
                    }
            }
        });
}

// x (N,Din), w (Dout,Din), b (Dout)
inline Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw ArgumentError("linear: shape mismatch " + shape_str(xs) + " vs " + shape_str(ws));
    int64_t N = xs[0], Din = xs[1], Dout = ws[0];
    if (b && b->value.numel() != Dout) throw ArgumentError("linear: bias size mismatch");
    Tensor out({N, Dout});
    // double accumulation, same rationale as conv2d
    MatRMd xd = CMapRM(x->value.data(), N, Din).cast<double>();
    MatRMd wd = CMapRM(w->value.data(), Dout, Din).cast<double>();
    MatRMd od = xd * wd.transpose();
    if (b) od.rowwise() += Eigen::Map<const Eigen::VectorXf>(b->value.data(), Dout).cast<double>().transpose();
    MapRM(out.data(), N, Dout) = od.cast<float>();
    std::vector<Var> ins = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return detail::make_node(std::move(out), std::move(ins), [N, Din, Dout](Node& self) {
        const Var& x = self.inputs[0];
        const Var& w = self.inputs[1];
        CMapRM gm(self.grad.data(), N, Dout);
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            MapRM gxm(gx.data(), N, Din);
            CMapRM wm(w->value.data(), Dout, Din);
            gxm.noalias() += gm * wm;
        }
        if (w->requires_grad) {
            Tensor& gw = w->ensure_grad();
            MapRM gwm(gw.data(), Dout, Din);
            CMapRM xm(x->value.data(), N, Din);
            gwm.noalias() += gm.transpose() * xm;
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
            Tensor& gb = self.inputs[2]->ensure_grad();
            float* p = gb.data();
            const float* g = self.grad.data();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t j = 0; j < Dout; ++j) p[j] += g[n * Dout + j];
        }
    });
}

// GroupNorm over (C/G, H, W) per (n, g), affine per channel.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, int64_t groups,
                      float eps = 1e-5f) {
    const Shape& s = x->value.shape();
    if (s.size() != 4) throw ArgumentError("group_norm: want NCHW");
    int64_t N = s[0], C = s[1], H = s[2], W = s[3];
    if (C % groups != 0) throw ArgumentError("group_norm: channels not divisible by groups");
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw ArgumentError("group_norm: affine size mismatch");
    int64_t cg = C / groups, m = cg * H * W, hw = H * W;

    Tensor out(s);
    auto stats = std::make_shared<std::vector<double>>(N * groups * 2);  // mean, inv_std
    const float* px = x->value.data();
    const float* pg = gamma->value.data();
    const float* pb = beta->value.data();
    float* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t g = 0; g < groups; ++g) {
            const float* xi = px + (n * C + g * cg) * hw;
            double sum = 0.0, sq = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                sum += xi[i];
                sq += static_cast<double>(xi[i]) * xi[i];
            }
            double mean = sum / m;
            double var = sq / m - mean * mean;
            double inv = 1.0 / std::sqrt(std::max(var, 0.0) + eps);
            (*stats)[(n * groups + g) * 2] = mean;
            (*stats)[(n * groups + g) * 2 + 1] = inv;
            for (int64_t c = 0; c < cg; ++c) {
                float ga = pg[g * cg + c], be = pb[g * cg + c];
                const float* xc = xi + c * hw;
                float* oc = po + (n * C + g * cg + c) * hw;
                for (int64_t i = 0; i < hw; ++i)
                    oc[i] = static_cast<float>((xc[i] - mean) * inv) * ga + be;
            }
        }
    }
    return detail::make_node(
        std::move(out), {x, gamma, beta}, [N, C, groups, cg, m, hw, stats](Node& self) {
            const Var& x = self.inputs[0];
            const Var& gamma = self.inputs[1];
            const float* px = x->value.data();
            const float* pg = gamma->value.data();
            const float* g = self.grad.data();

            if (self.inputs[1]->requires_grad || self.inputs[2]->requires_grad) {
                Tensor& ggam = self.inputs[1]->ensure_grad();
                Tensor& gbet = self.inputs[2]->ensure_grad();
                for (int64_t c = 0; c < C; ++c) {
                    int64_t grp = c / cg;
                    double dg = 0.0, db = 0.0;
                    for (int64_t n = 0; n < N; ++n) {
                        double mean = (*stats)[(n * groups + grp) * 2];
                        double inv = (*stats)[(n * groups + grp) * 2 + 1];
                        const float* xc = px + (n * C + c) * hw;
                        const float* gc = g + (n * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            dg += gc[i] * (xc[i] - mean) * inv;
                            db += gc[i];
                        }
                    }
                    ggam.data()[c] += static_cast<float>(dg);
                    gbet.data()[c] += static_cast<float>(db);
                }
            }
            if (x->requires_grad) {
                Tensor& gx = x->ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    for (int64_t grp = 0; grp < groups; ++grp) {
                        double mean = (*stats)[(n * groups + grp) * 2];
                        double inv = (*stats)[(n * groups + grp) * 2 + 1];
                        const float* xi = px + (n * C + grp * cg) * hw;
                        const float* gi = g + (n * C + grp * cg) * hw;
                        // dL/dxhat = g * gamma; reduce mean(dxhat), mean(dxhat*xhat)
                        double s1 = 0.0, s2 = 0.0;
                        for (int64_t c = 0; c < cg; ++c) {
                            float ga = pg[grp * cg + c];
                            const float* xc = xi + c * hw;
                            const float* gc = gi + c * hw;
                            for (int64_t i = 0; i < hw; ++i) {
                                double dxh = static_cast<double>(gc[i]) * ga;
                                s1 += dxh;
                                s2 += dxh * (xc[i] - mean) * inv;
                            }
                        }
                        s1 /= m;
                        s2 /= m;
                        float* go = gx.data() + (n * C + grp * cg) * hw;
                        for (int64_t c = 0; c < cg; ++c) {
                            float ga = pg[grp * cg + c];
                            const float* xc = xi + c * hw;
                            const float* gc = gi + c * hw;
                            float* gd = go + c * hw;
                            for (int64_t i = 0; i < hw; ++i) {
                                double xh = (xc[i] - mean) * inv;
                                double dxh = static_cast<double>(gc[i]) * ga;
                                gd[i] += static_cast<float>((dxh - s1 - xh * s2) * inv);
                            }
                        }
                    }
                }
            }
        });
}

inline Var upsample_nearest2x(const Var& x) {
    const Shape& s = x->value.shape();
    if (s.size() != 4) throw ArgumentError("upsample_nearest2x: want NCHW");
    int64_t N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out({N, C, 2 * H, 2 * W});
    const float* px = x->value.data();
    float* po = out.data();
    for (int64_t j = 0; j < N * C; ++j) {
        const float* xi = px + j * H * W;
        float* oi = po + j * 4 * H * W;
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                float v = xi[h * W + w];
                float* o = oi + (2 * h) * (2 * W) + 2 * w;
                o[0] = v;
                o[1] = v;
                o[2 * W] = v;
                o[2 * W + 1] = v;
            }
    }
    return detail::make_node(std::move(out), {x}, [N, C, H, W](Node& self) {
        Tensor& gx = self.inputs[0]->ensure_grad();
        const float* g = self.grad.data();
        for (int64_t j = 0; j < N * C; ++j) {
            float* p = gx.data() + j * H * W;
            const float* gi = g + j * 4 * H * W;
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const float* q = gi + (2 * h) * (2 * W) + 2 * w;
                    p[h * W + w] += q[0] + q[1] + q[2 * W] + q[2 * W + 1];
                }
        }
    });
}

inline Var avg_pool2x(const Var& x) {
    const Shape& s = x->value.shape();
    if (s.size() != 4 || s[2] % 2 || s[3] % 2) throw ArgumentError("avg_pool2x: want NCHW with even H,W");
    int64_t N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out({N, C, H / 2, W / 2});
    const float* px = x->value.data();
    float* po = out.data();
    for (int64_t j = 0; j < N * C; ++j) {
        const float* xi = px + j * H * W;
        float* oi = po + j * (H / 2) * (W / 2);
        for (int64_t h = 0; h < H / 2; ++h)
            for (int64_t w = 0; w < W / 2; ++w) {
                const float* q = xi + (2 * h) * W + 2 * w;
                oi[h * (W / 2) + w] = 0.25f * (q[0] + q[1] + q[W] + q[W + 1]);
            }
    }
    return detail::make_node(std::move(out), {x}, [N, C, H, W](Node& self) {
        Tensor& gx = self.inputs[0]->ensure_grad();
        const float* g = self.grad.data();
        for (int64_t j = 0; j < N * C; ++j) {
            float* p = gx.data() + j * H * W;
            const float* gi = g + j * (H / 2) * (W / 2);
            for (int64_t h = 0; h < H / 2; ++h)
                for (int64_t w = 0; w < W / 2; ++w) {
                    float gv = 0.25f * gi[h * (W / 2) + w];
                    float* q = p + (2 * h) * W + 2 * w;
                    q[0] += gv;
                    q[1] += gv;
                    q[W] += gv;
                    q[W + 1] += gv;
                }
        }
    });
}

// mean cross-entropy of logits (N,K) against integer labels
inline Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
    const Shape& s = logits->value.shape();
    if (s.size() != 2 || static_cast<int64_t>(labels.size()) != s[0])
        throw ArgumentError("cross_entropy_logits: want (N,K) logits and N labels");
    int64_t N = s[0], K = s[1];
    const float* pl = logits->value.data();
    double loss = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        if (labels[n] < 0 || labels[n] >= K) throw ArgumentError("cross_entropy_logits: label out of range");
        const float* row = pl + n * K;
        double mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
        double lse = 0.0;
        for (int64_t k = 0; k < K; ++k) lse += std::exp(row[k] - mx);
        loss += mx + std::log(lse) - row[labels[n]];
    }
    Tensor out = Tensor::scalar(static_cast<float>(loss / N));
    auto lab = std::make_shared<std::vector<int>>(labels);
    Var node = detail::make_node(std::move(out), {logits}, [N, K, lab](Node& self) {
        float g = self.grad[0] / static_cast<float>(N);
        const float* pl = self.inputs[0]->value.data();
        Tensor& gx = self.inputs[0]->ensure_grad();
        float* p = gx.data();
        for (int64_t n = 0; n < N; ++n) {
            const float* row = pl + n * K;
            double mx = row[0];
            for (int64_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
            double lse = 0.0;
            for (int64_t k = 0; k < K; ++k) lse += std::exp(row[k] - mx);
            for (int64_t k = 0; k < K; ++k) {
                double soft = std::exp(row[k] - mx) / lse;
                p[n * K + k] += g * static_cast<float>(soft - (k == (*lab)[n] ? 1.0 : 0.0));
            }
        }
    });
    detail::set_scalar_d(node, loss / N);
    return node;
}

}  // namespace diffloss
