#pragma once

// Diffusion denoiser f(x_t, t): a small U-Net whose deepest feature (after the
// bottleneck block, before any decoder stage) is exposed as the semantic
// feature h. Skip connections exist only at stages shallower than that tap, so
// h is the sole path from encoder to decoder at full depth.

#include <optional>

#include "diffloss/checkpoint.hpp"
#include "diffloss/diffusion.hpp"

namespace diffloss {

struct DenoiserConfig {
    int64_t resolution = 32;
    int64_t base_channels = 64;
    int64_t depth = 3;
    int64_t time_embed_dim = 64;
    int64_t h_channels = 128;

    void validate() const {
        if (resolution <= 0 || base_channels <= 0 || depth <= 0 || time_embed_dim <= 0 || h_channels <= 0)
            throw ConfigError("denoiser config: all dimensions must be positive");
        if ((resolution & (resolution - 1)) != 0)
            throw ConfigError("denoiser config: resolution must be a power of two, got " +
                              std::to_string(resolution));
        if (resolution % (int64_t{1} << depth) != 0 || (resolution >> depth) < 1)
            throw ConfigError("denoiser config: resolution " + std::to_string(resolution) +
                              " not divisible by 2^depth");
        if (time_embed_dim % 2 != 0) throw ConfigError("denoiser config: time_embed_dim must be even");
    }

    json to_json() const {
        return json{{"resolution", resolution},
                    {"base_channels", base_channels},
                    {"depth", depth},
                    {"time_embed_dim", time_embed_dim},
                    {"h_channels", h_channels}};
    }

    static DenoiserConfig from_json(const json& j) {
        DenoiserConfig c;
        c.resolution = j.at("resolution").get<int64_t>();
        c.base_channels = j.at("base_channels").get<int64_t>();
        c.depth = j.at("depth").get<int64_t>();
        c.time_embed_dim = j.at("time_embed_dim").get<int64_t>();
        c.h_channels = j.at("h_channels").get<int64_t>();
        return c;
    }

    bool operator==(const DenoiserConfig& o) const {
        return resolution == o.resolution && base_channels == o.base_channels && depth == o.depth &&
               time_embed_dim == o.time_embed_dim && h_channels == o.h_channels;
    }
};

struct DenoiserOutput {
    Var eps_hat;  // predicted noise, same shape as the input
    Var h;        // bottleneck feature (N, h_channels, res/2^depth, res/2^depth)
};

// Optional interception of h before the decoder consumes it. The replacement
// enters the graph as a constant, so this is for no-gradient generation paths.
using HHook = std::function<Tensor(const Tensor&)>;

namespace detail {

// GroupNorm -> SiLU -> conv, per-channel time bias, GroupNorm -> SiLU -> conv,
// plus a (1x1-projected) residual.
struct ResBlock {
    GroupNormLayer gn1, gn2;
    Conv2dLayer conv1, conv2;
    LinearLayer time_proj;
    std::optional<Conv2dLayer> skip;  // 1x1 when channel count changes

    static ResBlock make(ParamRegistry& reg, const std::string& name, int64_t cin, int64_t cout,
                         int64_t temb_dim, Rng& rng) {
        ResBlock b;
        b.gn1 = GroupNormLayer::make(reg, name + ".gn1", cin);
        b.conv1 = Conv2dLayer::make(reg, name + ".conv1", cin, cout, 3, 1, rng);
        b.time_proj = LinearLayer::make(reg, name + ".temb", temb_dim, cout, rng);
        b.gn2 = GroupNormLayer::make(reg, name + ".gn2", cout);
        b.conv2 = Conv2dLayer::make(reg, name + ".conv2", cout, cout, 3, 1, rng);
        if (cin != cout) b.skip = Conv2dLayer::make(reg, name + ".skip", cin, cout, 1, 1, rng);
        return b;
    }

    Var operator()(const Var& x, const Var& temb_row) const {
        Var hidden = conv1(silu(gn1(x)));
        Var bias = reshape(time_proj(temb_row), {time_proj.b->value.numel()});
        hidden = bias_channel(hidden, bias);
        hidden = conv2(silu(gn2(hidden)));
        return add(hidden, skip ? (*skip)(x) : x);
    }
};

}  // namespace detail

class DdpmUnet {
public:
    DdpmUnet(DenoiserConfig cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, "denoiser-init"));
        int64_t temb = cfg_.time_embed_dim;
        time_mlp1_ = LinearLayer::make(reg_, "time.mlp1", temb, temb, rng);
        time_mlp2_ = LinearLayer::make(reg_, "time.mlp2", temb, temb, rng);

        int64_t c = cfg_.base_channels;
        stem_ = Conv2dLayer::make(reg_, "stem", 3, c, 3, 1, rng);
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            int64_t ci = cfg_.base_channels << i;
            int64_t cnext = i + 1 < cfg_.depth ? (ci << 1) : cfg_.h_channels;
            enc_.push_back(detail::ResBlock::make(reg_, "enc" + std::to_string(i), ci, ci, temb, rng));
            down_.push_back(Conv2dLayer::make(reg_, "down" + std::to_string(i), ci, cnext, 3, 2, rng));
        }
        bottleneck_ = detail::ResBlock::make(reg_, "bottleneck", cfg_.h_channels, cfg_.h_channels, temb, rng);
        for (int64_t i = cfg_.depth - 1; i >= 0; --i) {
            int64_t ci = cfg_.base_channels << i;
            int64_t cabove = i + 1 < cfg_.depth ? (ci << 1) : cfg_.h_channels;
            up_.push_back(Conv2dLayer::make(reg_, "up" + std::to_string(i), cabove, ci, 3, 1, rng));
            dec_.push_back(detail::ResBlock::make(reg_, "dec" + std::to_string(i), 2 * ci, ci, temb, rng));
        }
        head_gn_ = GroupNormLayer::make(reg_, "head.gn", c);
        head_ = Conv2dLayer::make(reg_, "head.conv", c, 3, 3, 1, rng, /*zero_init=*/true);
    }

    const DenoiserConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }
    int64_t parameter_count() const { return reg_.count_scalars(); }

    // Excludes the parameters from optimization; inputs keep their gradients.
    void freeze() {
        reg_.set_requires_grad(false);
        frozen_ = true;
    }
    bool frozen() const { return frozen_; }

    DenoiserOutput denoise_with_h(const Var& x_t, int t, const HHook& h_hook = nullptr) const {
        const Shape& s = x_t->value.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.resolution || s[3] != cfg_.resolution)
            throw ArgumentError("denoise_with_h: want (N,3," + std::to_string(cfg_.resolution) + "," +
                                std::to_string(cfg_.resolution) + "), got " + shape_str(s));
        if (t < 1) throw ArgumentError("denoise_with_h: t must be >= 1");

        Var temb = constant(sinusoidal_embedding(t, cfg_.time_embed_dim).reshaped({1, cfg_.time_embed_dim}));
        temb = time_mlp2_(silu(time_mlp1_(temb)));

        Var cur = stem_(x_t);
        std::vector<Var> skips;
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            cur = enc_[static_cast<size_t>(i)](cur, temb);
            skips.push_back(cur);
            cur = down_[static_cast<size_t>(i)](cur);
        }
        Var h = bottleneck_(cur, temb);
        if (h_hook) h = constant(h_hook(h->value));

        cur = h;
        for (int64_t k = 0; k < cfg_.depth; ++k) {
            cur = up_[static_cast<size_t>(k)](upsample_nearest2x(cur));
            cur = dec_[static_cast<size_t>(k)](concat_channels(cur, skips[static_cast<size_t>(cfg_.depth - 1 - k)]),
                                               temb);
        }
        Var eps_hat = head_(silu(head_gn_(cur)));
        return DenoiserOutput{eps_hat, h};
    }

    // Plain-tensor denoiser for the sampler.
    DenoiseFn as_denoise_fn() const {
        return [this](const Tensor& x, int t) { return denoise_with_h(constant(x), t).eps_hat->value; };
    }

private:
    DenoiserConfig cfg_;
    ParamRegistry reg_;
    bool frozen_ = false;

    LinearLayer time_mlp1_, time_mlp2_;
    Conv2dLayer stem_;
    std::vector<detail::ResBlock> enc_;
    std::vector<Conv2dLayer> down_;
    detail::ResBlock bottleneck_;
    std::vector<Conv2dLayer> up_;
    std::vector<detail::ResBlock> dec_;
    GroupNormLayer head_gn_;
    Conv2dLayer head_;
};

inline void save_denoiser(const std::filesystem::path& path, const DdpmUnet& net,
                          const ScheduleDescriptor& schedule, int64_t step, uint64_t seed) {
    CheckpointManifest m;
    m.kind = "denoiser";
    m.config = net.config().to_json();
    m.schedule = schedule;
    m.step = step;
    m.seed = seed;
    save_checkpoint(path, m, net.params());
}

struct LoadedDenoiser {
    std::shared_ptr<DdpmUnet> net;
    CheckpointManifest manifest;
};

inline LoadedDenoiser load_denoiser(const std::filesystem::path& path,
                                    const std::optional<DenoiserConfig>& expected = std::nullopt) {
    CheckpointData data = read_checkpoint(path);
    if (data.manifest.kind != "denoiser")
        throw CheckpointMismatchError("expected kind 'denoiser', file " + path.string() + " has '" +
                                      data.manifest.kind + "'");
    DenoiserConfig cfg = DenoiserConfig::from_json(data.manifest.config);
    if (expected && !(cfg == *expected))
        throw CheckpointMismatchError("denoiser config in " + path.string() +
                                      " differs from the requested configuration");
    auto net = std::make_shared<DdpmUnet>(cfg, data.manifest.seed);
    fill_params(net->params(), data);
    return LoadedDenoiser{std::move(net), data.manifest};
}

}  // namespace diffloss
