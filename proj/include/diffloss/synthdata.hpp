#pragma once

// Procedural labeled corpus (colored geometric shapes over smooth textured
// backgrounds) plus parametric degradations: low-light, haze, rain, additive
// noise and gaussian blur. Everything is a pure function of seeds; splits use
// disjoint named seed streams. Emitted pixels are quantized to the 8-bit grid
// so an on-disk PNG cache reproduces the in-memory corpus exactly.

#include <json.hpp>

#include <filesystem>
#include <sstream>
#include <vector>

#include "diffloss/core/fileio.hpp"
#include "diffloss/core/tensor.hpp"
#include "diffloss/image_io.hpp"

namespace diffloss {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw ConfigError("split_name: bad split value");
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (want train|val|test)");
}

struct ShapesDatasetSpec {
    int64_t n_images = 0;
    int resolution = 32;
    int n_classes = 8;
    uint64_t seed = 0;
    Split split = Split::train;

    void validate() const {
        if (n_images < 0) throw ConfigError("ShapesDatasetSpec: n_images must be >= 0");
        if (resolution < 8) throw ConfigError("ShapesDatasetSpec: resolution must be >= 8");
        if (n_classes < 2 || n_classes > 8)
            throw ConfigError("ShapesDatasetSpec: n_classes must be in [2,8] (8 shape types defined)");
    }

    // per-image stream; split name keeps the three splits disjoint
    uint64_t image_seed(int64_t index) const {
        return derive_seed(seed, std::string("shapes-") + split_name(split), static_cast<uint64_t>(index));
    }

    nlohmann::json to_json() const {
        return {{"n_images", n_images},
                {"resolution", resolution},
                {"n_classes", n_classes},
                {"seed", seed},
                {"split", split_name(split)}};
    }

    static ShapesDatasetSpec from_json(const nlohmann::json& j) {
        ShapesDatasetSpec s;
        s.n_images = j.at("n_images").get<int64_t>();
        s.resolution = j.at("resolution").get<int>();
        s.n_classes = j.at("n_classes").get<int>();
        s.seed = j.at("seed").get<uint64_t>();
        s.split = split_from_string(j.at("split").get<std::string>());
        s.validate();
        return s;
    }
};

struct LabeledBatch {
    Tensor images;  // (N,3,R,R) in [0,1]
    std::vector<int> labels;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

namespace detail {

struct Vec2 {
    double x = 0, y = 0;
};

inline double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Signed distances in pixel units, p relative to the shape center (already
// un-rotated). r is the half-extent.
inline double shape_sdf(int cls, Vec2 p, double r) {
    auto len = [](Vec2 v) { return std::sqrt(v.x * v.x + v.y * v.y); };
    auto box = [&](Vec2 q, double hx, double hy) {
        double dx = std::abs(q.x) - hx, dy = std::abs(q.y) - hy;
        Vec2 d{std::max(dx, 0.0), std::max(dy, 0.0)};
        return len(d) + std::min(std::max(dx, dy), 0.0);
    };
    switch (cls) {
        case 0:  // disk
            return len(p) - r;
        case 1:  // square
            return box(p, r, r);
        case 2: {  // equilateral triangle
            const double k = std::sqrt(3.0);
            Vec2 q{std::abs(p.x) - r, p.y + r / k};
            if (q.x + k * q.y > 0) q = {(q.x - k * q.y) / 2, (-k * q.x - q.y) / 2};
            q.x -= clampd(q.x, -2 * r, 0.0);
            return -len(q) * (q.y > 0 ? 1.0 : -1.0);
        }
        case 3:  // ring
            return std::abs(len(p) - 0.8 * r) - 0.32 * r;
        case 4:  // plus
            return std::min(box(p, r, 0.36 * r), box(p, 0.36 * r, r));
        case 5:  // diamond
            return (std::abs(p.x) + std::abs(p.y) - r) / std::sqrt(2.0);
        case 6: {  // capsule along x
            Vec2 q{p.x - clampd(p.x, -0.62 * r, 0.62 * r), p.y};
            return len(q) - 0.45 * r;
        }
        case 7:  // hollow square frame
            return std::abs(box(p, 0.85 * r, 0.85 * r)) - 0.28 * r;
    }
    throw ConfigError("shape_sdf: class out of range");
}

// background: per-channel base tone plus shared low-frequency sinusoids
struct BgField {
    double base[3];
    double amp[2], fx[2], fy[2], phase[2], chan_mix[3];

    static BgField sample(Rng& rng) {
        BgField f;
        for (double& b : f.base) b = rng.uniform(0.25, 0.75);
        for (int k = 0; k < 2; ++k) {
            f.amp[k] = rng.uniform(0.04, 0.10);
            f.fx[k] = rng.uniform(0.4, 1.6);
            f.fy[k] = rng.uniform(0.4, 1.6);
            f.phase[k] = rng.uniform(0.0, 2.0 * M_PI);
        }
        for (double& m : f.chan_mix) m = rng.uniform(0.6, 1.0);
        return f;
    }

    double at(int c, double u, double v) const {  // u,v in [0,1)
        double s = base[c];
        for (int k = 0; k < 2; ++k)
            s += chan_mix[c] * amp[k] * std::sin(2.0 * M_PI * (fx[k] * u + fy[k] * v) + phase[k]);
        return clampd(s, 0.0, 1.0);
    }
};

inline float quantize8(double v) {
    return static_cast<float>(std::lround(clampd(v, 0.0, 1.0) * 255.0) / 255.0);
}

}  // namespace detail

// Render one (3,R,R) image of the given class into `img`; layout, colors and
// texture come from `rng` alone.
inline void render_shape_image(Tensor& img, int cls, int resolution, Rng& rng) {
    int64_t R = resolution;
    detail::BgField bg = detail::BgField::sample(rng);

    double r_max = std::min(0.42 * R, R / 2.0 - 2.5);
    double r_min = std::min(0.25 * R, r_max - 0.5);
    double r = rng.uniform(r_min, r_max);
    double margin = r + 1.5;
    double cx = rng.uniform(margin, R - margin);
    double cy = rng.uniform(margin, R - margin);
    // polygonal classes only jitter so square and diamond stay distinct;
    // triangle and capsule may spin freely
    double angle = (cls == 2 || cls == 6) ? rng.uniform(0.0, 2.0 * M_PI) : rng.uniform(-0.15, 0.15);
    double ca = std::cos(angle), sa = std::sin(angle);

    double color[3];
    for (int tries = 0;; ++tries) {
        double worst = 0;
        for (int c = 0; c < 3; ++c) {
            color[c] = rng.uniform(0.0, 1.0);
            worst = std::max(worst, std::abs(color[c] - bg.base[c]));
        }
        if (worst > 0.3 || tries >= 8) break;
    }

    float* p = img.data();
    for (int64_t y = 0; y < R; ++y)
        for (int64_t x = 0; x < R; ++x) {
            double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            detail::Vec2 q{ca * dx + sa * dy, -sa * dx + ca * dy};
            double d = detail::shape_sdf(cls, q, r);
            double cov = detail::clampd(0.5 - d, 0.0, 1.0);  // ~1px antialias
            for (int64_t c = 0; c < 3; ++c) {
                double b = bg.at(static_cast<int>(c), (x + 0.5) / R, (y + 0.5) / R);
                p[(c * R + y) * R + x] = detail::quantize8(b * (1 - cov) + color[c] * cov);
            }
        }
}

inline LabeledBatch generate_shapes(const ShapesDatasetSpec& spec) {
    spec.validate();
    int64_t R = spec.resolution;
    LabeledBatch out;
    out.images = Tensor({spec.n_images, 3, R, R});
    out.labels.resize(static_cast<size_t>(spec.n_images));
    Tensor one({3, R, R});
    for (int64_t i = 0; i < spec.n_images; ++i) {
        Rng rng(spec.image_seed(i));
        int cls = static_cast<int>(rng.uniform_int(0, spec.n_classes - 1));
        render_shape_image(one, cls, spec.resolution, rng);
        std::memcpy(out.images.data() + i * 3 * R * R, one.data(), static_cast<size_t>(3 * R * R) * sizeof(float));
        out.labels[static_cast<size_t>(i)] = cls;
    }
    return out;
}

// ---- degradations -----------------------------------------------------------

enum class DegKind { lowlight, haze, rain, noise, blur };

inline const char* deg_kind_name(DegKind k) {
    switch (k) {
        case DegKind::lowlight: return "lowlight";
        case DegKind::haze: return "haze";
        case DegKind::rain: return "rain";
        case DegKind::noise: return "noise";
        case DegKind::blur: return "blur";
    }
    throw ConfigError("deg_kind_name: bad kind value");
}

inline DegKind deg_kind_from_string(const std::string& s) {
    if (s == "lowlight") return DegKind::lowlight;
    if (s == "haze") return DegKind::haze;
    if (s == "rain") return DegKind::rain;
    if (s == "noise") return DegKind::noise;
    if (s == "blur") return DegKind::blur;
    throw ConfigError("unknown degradation kind '" + s + "' (want lowlight|haze|rain|noise|blur)");
}

// Kind-specific parameters share one struct; `sample` draws a random severity
// within the standard ranges, explicit construction may use any physically
// sane values (identity settings included).
struct DegradationSpec {
    DegKind kind = DegKind::lowlight;
    uint64_t seed = 0;

    // lowlight: y = clamp((gain*x)^gamma + read noise)
    double gamma = 2.0;
    double gain = 0.4;
    double read_noise_sigma = 0.02;

    // haze: y = x*tr + A*(1 - tr), tr = exp(-beta * depth proxy)
    double beta = 1.2;
    double airlight = 0.85;

    // rain streaks added on top
    double rain_density = 0.10;  // expected streak starts per column
    double rain_length = 9.0;    // px
    double rain_angle_deg = -10.0;
    double rain_intensity = 0.45;

    double noise_sigma = 0.08;  // additive gaussian
    double blur_sigma = 1.4;    // gaussian kernel

    void validate() const {
        if (gamma <= 0) throw ConfigError("DegradationSpec: gamma must be > 0");
        if (gain < 0) throw ConfigError("DegradationSpec: gain must be >= 0");
        if (read_noise_sigma < 0 || noise_sigma < 0 || blur_sigma < 0)
            throw ConfigError("DegradationSpec: sigmas must be >= 0");
        if (beta < 0) throw ConfigError("DegradationSpec: beta must be >= 0");
        if (airlight < 0 || airlight > 1) throw ConfigError("DegradationSpec: airlight must be in [0,1]");
        if (rain_density < 0 || rain_length < 0 || rain_intensity < 0)
            throw ConfigError("DegradationSpec: rain parameters must be >= 0");
    }

    // random severity within the declared ranges
    static DegradationSpec sample(DegKind kind, uint64_t seed) {
        DegradationSpec d;
        d.kind = kind;
        d.seed = seed;
        Rng rng(derive_seed(seed, "degradation-params"));
        switch (kind) {
            case DegKind::lowlight:
                d.gamma = rng.uniform(1.5, 3.0);
                d.gain = rng.uniform(0.2, 0.6);
                d.read_noise_sigma = rng.uniform(0.01, 0.04);
                break;
            case DegKind::haze:
                d.beta = rng.uniform(0.6, 2.0);
                d.airlight = rng.uniform(0.7, 1.0);
                break;
            case DegKind::rain:
                d.rain_density = rng.uniform(0.06, 0.18);
                d.rain_length = rng.uniform(6.0, 14.0);
                d.rain_angle_deg = rng.uniform(-20.0, 20.0);
                d.rain_intensity = rng.uniform(0.3, 0.6);
                break;
            case DegKind::noise:
                d.noise_sigma = rng.uniform(0.04, 0.15);
                break;
            case DegKind::blur:
                d.blur_sigma = rng.uniform(0.8, 2.2);
                break;
        }
        return d;
    }

    DegradationSpec with_seed(uint64_t s) const {
        DegradationSpec d = *this;
        d.seed = s;
        return d;
    }

    nlohmann::json to_json() const {
        return {{"kind", deg_kind_name(kind)},
                {"seed", seed},
                {"gamma", gamma},
                {"gain", gain},
                {"read_noise_sigma", read_noise_sigma},
                {"beta", beta},
                {"airlight", airlight},
                {"rain_density", rain_density},
                {"rain_length", rain_length},
                {"rain_angle_deg", rain_angle_deg},
                {"rain_intensity", rain_intensity},
                {"noise_sigma", noise_sigma},
                {"blur_sigma", blur_sigma}};
    }

    static DegradationSpec from_json(const nlohmann::json& j) {
        DegradationSpec d;
        d.kind = deg_kind_from_string(j.at("kind").get<std::string>());
        d.seed = j.at("seed").get<uint64_t>();
        d.gamma = j.value("gamma", d.gamma);
        d.gain = j.value("gain", d.gain);
        d.read_noise_sigma = j.value("read_noise_sigma", d.read_noise_sigma);
        d.beta = j.value("beta", d.beta);
        d.airlight = j.value("airlight", d.airlight);
        d.rain_density = j.value("rain_density", d.rain_density);
        d.rain_length = j.value("rain_length", d.rain_length);
        d.rain_angle_deg = j.value("rain_angle_deg", d.rain_angle_deg);
        d.rain_intensity = j.value("rain_intensity", d.rain_intensity);
        d.noise_sigma = j.value("noise_sigma", d.noise_sigma);
        d.blur_sigma = j.value("blur_sigma", d.blur_sigma);
        d.validate();
        return d;
    }
};

namespace detail {

// depth proxy: vertical gradient plus low-frequency noise, normalized then
// mapped to [0.1, 1] so infinite scattering sends every pixel to airlight
inline std::vector<double> haze_depth_proxy(int64_t H, int64_t W, Rng& rng) {
    double a[2], fx[2], fy[2], ph[2];
    for (int k = 0; k < 2; ++k) {
        a[k] = rng.uniform(0.2, 0.5);
        fx[k] = rng.uniform(0.3, 1.2);
        fy[k] = rng.uniform(0.3, 1.2);
        ph[k] = rng.uniform(0.0, 2.0 * M_PI);
    }
    std::vector<double> d(static_cast<size_t>(H * W));
    double lo = 1e300, hi = -1e300;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double v = static_cast<double>(y) / std::max<int64_t>(1, H - 1);
            for (int k = 0; k < 2; ++k)
                v += a[k] * std::sin(2.0 * M_PI * (fx[k] * x / W + fy[k] * y / H) + ph[k]);
            d[static_cast<size_t>(y * W + x)] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    double span = hi > lo ? hi - lo : 1.0;
    for (double& v : d) v = 0.1 + 0.9 * ((v - lo) / span);
    return d;
}

// additive streak layer shared across channels
inline std::vector<double> rain_layer(int64_t H, int64_t W, const DegradationSpec& d, Rng& rng) {
    std::vector<double> layer(static_cast<size_t>(H * W), 0.0);
    int64_t n_streaks = static_cast<int64_t>(std::llround(d.rain_density * static_cast<double>(W) *
                                                          static_cast<double>(H) / std::max(1.0, d.rain_length)));
    for (int64_t s = 0; s < n_streaks; ++s) {
        double x0 = rng.uniform(-2.0, W + 2.0);
        double y0 = rng.uniform(-2.0, H + 2.0);
        double ang = (d.rain_angle_deg + rng.uniform(-3.0, 3.0)) * M_PI / 180.0;
        double len = d.rain_length * rng.uniform(0.7, 1.3);
        double amp = d.rain_intensity * rng.uniform(0.5, 1.0);
        double dx = std::sin(ang), dy = std::cos(ang);  // near-vertical at angle 0
        int steps = std::max(2, static_cast<int>(std::ceil(len * 2)));
        for (int i = 0; i <= steps; ++i) {
            double t = static_cast<double>(i) / steps;
            double px = x0 + dx * len * t, py = y0 + dy * len * t;
            // bilinear splat, brightest mid-streak
            double w = amp * (1.0 - std::abs(2 * t - 1)) / 2;
            int64_t ix = static_cast<int64_t>(std::floor(px)), iy = static_cast<int64_t>(std::floor(py));
            double fx = px - ix, fy = py - iy;
            for (int oy = 0; oy < 2; ++oy)
                for (int ox = 0; ox < 2; ++ox) {
                    int64_t X = ix + ox, Y = iy + oy;
                    if (X < 0 || X >= W || Y < 0 || Y >= H) continue;
                    double wt = (ox ? fx : 1 - fx) * (oy ? fy : 1 - fy);
                    layer[static_cast<size_t>(Y * W + X)] += w * wt;
                }
        }
    }
    return layer;
}

inline std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0) return {1.0};
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// separable gaussian with replicate padding, one channel plane
inline void blur_plane(const float* src, int64_t H, int64_t W, const std::vector<double>& k, float* dst,
                       std::vector<double>& tmp) {
    int radius = static_cast<int>(k.size() / 2);
    tmp.resize(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double s = 0;
            for (int i = -radius; i <= radius; ++i) {
                int64_t xx = std::clamp<int64_t>(x + i, 0, W - 1);
                s += k[static_cast<size_t>(i + radius)] * src[y * W + xx];
            }
            tmp[static_cast<size_t>(y * W + x)] = s;
        }
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double s = 0;
            for (int i = -radius; i <= radius; ++i) {
                int64_t yy = std::clamp<int64_t>(y + i, 0, H - 1);
                s += k[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy * W + x)];
            }
            dst[y * W + x] = static_cast<float>(s);
        }
}

}  // namespace detail

// Degrade a (N,3,H,W) unit-range batch. Image n consumes the derived stream
// (spec.seed, "img", n), so per-image results do not depend on batch slicing.
inline Tensor degrade(const Tensor& x, const DegradationSpec& spec) {
    spec.validate();
    if (x.rank() != 4 || x.dim(1) != 3)
        throw ArgumentError("degrade: want (N,3,H,W), got " + shape_str(x.shape()));
    int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    int64_t plane = H * W, img = 3 * plane;
    Tensor y(x.shape());
    const float* px = x.data();
    float* py = y.data();

    for (int64_t n = 0; n < N; ++n) {
        Rng rng(derive_seed(spec.seed, "img", static_cast<uint64_t>(n)));
        const float* xi = px + n * img;
        float* yi = py + n * img;
        switch (spec.kind) {
            case DegKind::lowlight:
                for (int64_t i = 0; i < img; ++i) {
                    double v = std::pow(spec.gain * static_cast<double>(xi[i]), spec.gamma);
                    if (spec.read_noise_sigma > 0) v += spec.read_noise_sigma * rng.normal();
                    yi[i] = static_cast<float>(detail::clampd(v, 0.0, 1.0));
                }
                break;
            case DegKind::haze: {
                std::vector<double> depth = detail::haze_depth_proxy(H, W, rng);
                for (int64_t c = 0; c < 3; ++c)
                    for (int64_t i = 0; i < plane; ++i) {
                        double tr = std::exp(-spec.beta * depth[static_cast<size_t>(i)]);
                        double v = static_cast<double>(xi[c * plane + i]) * tr + spec.airlight * (1.0 - tr);
                        yi[c * plane + i] = static_cast<float>(detail::clampd(v, 0.0, 1.0));
                    }
                break;
            }
            case DegKind::rain: {
                std::vector<double> layer = detail::rain_layer(H, W, spec, rng);
                for (int64_t c = 0; c < 3; ++c)
                    for (int64_t i = 0; i < plane; ++i)
                        yi[c * plane + i] = static_cast<float>(detail::clampd(
                            static_cast<double>(xi[c * plane + i]) + layer[static_cast<size_t>(i)], 0.0, 1.0));
                break;
            }
            case DegKind::noise:
                for (int64_t i = 0; i < img; ++i)
                    yi[i] = static_cast<float>(
                        detail::clampd(static_cast<double>(xi[i]) + spec.noise_sigma * rng.normal(), 0.0, 1.0));
                break;
            case DegKind::blur: {
                std::vector<double> k = detail::gaussian_kernel(spec.blur_sigma);
                std::vector<double> tmp;
                for (int64_t c = 0; c < 3; ++c) detail::blur_plane(xi + c * plane, H, W, k, yi + c * plane, tmp);
                break;
            }
            default:
                throw ConfigError("degrade: unknown degradation kind");
        }
    }
    return y;
}

// ---- aligned pairs ----------------------------------------------------------

struct RestorePair {
    Tensor y;  // degraded (3,H,W)
    Tensor x;  // clean (3,H,W)
    int label = -1;
};

inline int64_t patch_offset(Rng& rng, int64_t size, int64_t patch) {
    if (patch > size) throw ArgumentError("patch_offset: patch larger than image");
    return rng.uniform_int(0, size - patch);
}

// Deterministic (degraded, clean, label) stream over a shapes split. Samples
// are pure functions of their index: re-iterating an epoch replays the same
// order, and each pair's degradation spec is reseeded per index so
// degrade(pair.x, pair spec) == pair.y holds exactly.
class PairDataset {
public:
    PairDataset(ShapesDatasetSpec shapes, DegradationSpec deg, int64_t patch = 0, uint64_t patch_seed = 0)
        : shapes_(shapes), deg_(deg), patch_(patch), patch_seed_(patch_seed) {
        shapes_.validate();
        deg_.validate();
        if (patch_ < 0 || (patch_ > 0 && patch_ > shapes_.resolution))
            throw ConfigError("PairDataset: patch must be in [0, resolution]");
    }

    int64_t size() const { return shapes_.n_images; }
    const ShapesDatasetSpec& shapes_spec() const { return shapes_; }
    const DegradationSpec& degradation() const { return deg_; }
    int64_t patch() const { return patch_ > 0 ? patch_ : shapes_.resolution; }

    DegradationSpec pair_spec(int64_t index) const {
        return deg_.with_seed(derive_seed(deg_.seed, "pair", static_cast<uint64_t>(index)));
    }

    RestorePair get(int64_t index) const {
        if (index < 0 || index >= size()) throw ArgumentError("PairDataset: index out of range");
        int64_t R = shapes_.resolution;
        RestorePair p;
        Tensor clean({1, 3, R, R});
        {
            Rng rng(shapes_.image_seed(index));
            p.label = static_cast<int>(rng.uniform_int(0, shapes_.n_classes - 1));
            Tensor one = clean.reshaped({3, R, R});
            render_shape_image(one, p.label, shapes_.resolution, rng);
        }
        Tensor deg = degrade(clean, pair_spec(index));
        if (patch_ > 0 && patch_ < R) {
            Rng prng(derive_seed(patch_seed_, "patch", static_cast<uint64_t>(index)));
            int64_t oy = patch_offset(prng, R, patch_);
            int64_t ox = patch_offset(prng, R, patch_);
            p.x = crop(clean, oy, ox);
            p.y = crop(deg, oy, ox);
        } else {
            p.x = clean.reshaped({3, R, R});
            p.y = deg.reshaped({3, R, R});
        }
        return p;
    }

    // stack the given indices into (B,3,P,P) batches
    void gather(const std::vector<int64_t>& indices, Tensor& y, Tensor& x, std::vector<int>* labels = nullptr) const {
        int64_t B = static_cast<int64_t>(indices.size()), P = patch();
        y = Tensor({B, 3, P, P});
        x = Tensor({B, 3, P, P});
        if (labels) labels->resize(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            RestorePair p = get(indices[static_cast<size_t>(b)]);
            std::memcpy(y.data() + b * 3 * P * P, p.y.data(), static_cast<size_t>(3 * P * P) * sizeof(float));
            std::memcpy(x.data() + b * 3 * P * P, p.x.data(), static_cast<size_t>(3 * P * P) * sizeof(float));
            if (labels) (*labels)[static_cast<size_t>(b)] = p.label;
        }
    }

private:
    Tensor crop(const Tensor& img, int64_t oy, int64_t ox) const {  // img (1,3,R,R)
        int64_t R = img.dim(2);
        Tensor out({3, patch_, patch_});
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < patch_; ++y)
                std::memcpy(out.data() + (c * patch_ + y) * patch_,
                            img.data() + (c * R + oy + y) * R + ox, static_cast<size_t>(patch_) * sizeof(float));
        return out;
    }

    ShapesDatasetSpec shapes_;
    DegradationSpec deg_;
    int64_t patch_;
    uint64_t patch_seed_;
};

// ---- on-disk cache ----------------------------------------------------------

// Writes <root>/<split>/img_%05d.png plus index.txt lines
// "filename,label,seed" (seed = the per-image stream seed). Returns the split
// directory. Pixels are already 8-bit quantized, so the cache is exact.
inline std::filesystem::path cache_shapes(const std::filesystem::path& root, const ShapesDatasetSpec& spec) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::path dir = root / split_name(spec.split);
    fs::create_directories(dir);
    LabeledBatch batch = generate_shapes(spec);
    int64_t R = spec.resolution;
    std::ostringstream index;
    for (int64_t i = 0; i < batch.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05lld.png", static_cast<long long>(i));
        Tensor img = Tensor::from_vector(
            {3, R, R}, std::vector<float>(batch.images.data() + i * 3 * R * R,
                                          batch.images.data() + (i + 1) * 3 * R * R));
        write_png(dir / name, img);
        index << name << "," << batch.labels[static_cast<size_t>(i)] << "," << spec.image_seed(i) << "\n";
    }
    write_file_atomic(dir / "index.txt", index.str());
    return dir;
}

inline LabeledBatch load_cached_shapes(const std::filesystem::path& dir) {
    std::istringstream index(read_file(dir / "index.txt"));
    std::vector<std::pair<std::string, int>> entries;
    std::string line;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        size_t c1 = line.find(',');
        size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw DataError("shapes cache: malformed index line '" + line + "'");
        entries.emplace_back(line.substr(0, c1), std::stoi(line.substr(c1 + 1, c2 - c1 - 1)));
    }
    LabeledBatch out;
    if (entries.empty()) {
        out.images = Tensor({0, 3, 1, 1});
        return out;
    }
    Tensor first = read_png(dir / entries.front().first);
    int64_t R = first.dim(1);
    out.images = Tensor({static_cast<int64_t>(entries.size()), 3, R, R});
    out.labels.reserve(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        Tensor img = i == 0 ? first : read_png(dir / entries[i].first);
        if (img.shape() != Shape{3, R, R})
            throw DataError("shapes cache: inconsistent image shape in " + entries[i].first);
        std::memcpy(out.images.data() + static_cast<int64_t>(i) * 3 * R * R, img.data(),
                    static_cast<size_t>(3 * R * R) * sizeof(float));
        out.labels.push_back(entries[i].second);
    }
    return out;
}

// Generic loader for user-supplied data: two folders holding equally named
// PNG files (degraded and clean). Labels are unknown (-1).
inline std::vector<RestorePair> load_paired_folder(const std::filesystem::path& degraded_dir,
                                                   const std::filesystem::path& clean_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(degraded_dir) || !fs::is_directory(clean_dir))
        throw IoError("load_paired_folder: both arguments must be directories");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(degraded_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<RestorePair> pairs;
    for (const std::string& name : names) {
        fs::path cp = clean_dir / name;
        if (!fs::exists(cp)) throw DataError("load_paired_folder: missing clean file for " + name);
        RestorePair p;
        p.y = read_png(degraded_dir / name);
        p.x = read_png(cp);
        if (p.y.shape() != p.x.shape())
            throw DataError("load_paired_folder: shape mismatch for " + name);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace diffloss
