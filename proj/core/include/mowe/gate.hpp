#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mowe/kernels.hpp"
#include "mowe/rng.hpp"

namespace mowe {

/// Architecture hyperparameters plus the problem dimensions the network is
/// built for. `lead_hours` is the set of forecast leads the paired dataset
/// stores; the conditioning embedding itself accepts any positive lead.
struct GateConfig {
    std::size_t n_experts = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t patch = 8;
    std::size_t hidden = 256;
    std::size_t depth = 3;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    std::vector<std::uint32_t> lead_hours;
    std::size_t noise_dim = 0;

    static constexpr std::size_t kFreqCount = 256;  // sinusoidal lead-time features
    static constexpr double kLnEps = 1e-6;

    std::size_t tokens() const { return (height / patch) * (width / patch); }
    std::size_t token_width() const { return n_experts * channels * patch * patch; }
    std::size_t head_width() const { return (n_experts + 1) * channels * patch * patch; }
    std::size_t mlp_width() const {
        return static_cast<std::size_t>(static_cast<double>(hidden) * mlp_ratio + 0.5);
    }

    void validate() const {
        if (n_experts < 2) throw ConfigError("gate needs at least 2 experts");
        if (channels < 1) throw ConfigError("gate needs at least 1 channel");
        if (patch == 0 || height % patch != 0 || width % patch != 0)
            throw ConfigError("patch size " + std::to_string(patch) + " does not divide grid " +
                              std::to_string(height) + "x" + std::to_string(width));
        if (heads == 0 || hidden % heads != 0)
            throw ConfigError("hidden size " + std::to_string(hidden) + " not divisible by " +
                              std::to_string(heads) + " heads");
        if (hidden % 4 != 0)
            throw ConfigError("hidden size must be a multiple of 4 for the 2d positional embedding");
        if (mlp_width() < 1) throw ConfigError("mlp_ratio too small");
        if (lead_hours.empty()) throw ConfigError("lead set must not be empty");
        std::uint32_t prev = 0;
        for (std::uint32_t h : lead_hours) {
            if (h <= prev) throw ConfigError("lead set must be strictly ascending and positive");
            prev = h;
        }
    }

    /// Base architecture preset: patch 8, hidden 384, depth 6, heads 6, mlp 4.0.
    static GateConfig base_preset() {
        GateConfig c;
        c.patch = 8;
        c.hidden = 384;
        c.depth = 6;
        c.heads = 6;
        c.mlp_ratio = 4.0;
        return c;
    }

    /// Small architecture preset: patch 8, hidden 256, depth 3, heads 4, mlp 4.0.
    static GateConfig small_preset() {
        GateConfig c;
        c.patch = 8;
        c.hidden = 256;
        c.depth = 3;
        c.heads = 4;
        c.mlp_ratio = 4.0;
        return c;
    }
};

/// Exact number of scalar parameters for the architecture.
inline std::size_t count_params(const GateConfig& cfg) {
    const std::size_t d = cfg.hidden;
    const std::size_t m = cfg.mlp_width();
    std::size_t n = 0;
    n += (cfg.token_width() + 1) * d;                   // patch embedding
    n += (2 * GateConfig::kFreqCount + 1) * d;          // lead-time mlp, layer 1
    if (cfg.noise_dim > 0) n += cfg.noise_dim * d;      // noise projection
    n += (d + 1) * d;                                   // lead-time mlp, layer 2
    n += cfg.depth * ((d + 1) * 6 * d                   // block modulation
                      + 4 * (d + 1) * d                 // q, k, v, o projections
                      + (d + 1) * m + (m + 1) * d);     // mlp
    n += (d + 1) * 2 * d;                               // output modulation
    n += (d + 1) * cfg.head_width();                    // head
    return n;
}

template <typename T>
struct GateOutput {
    Var<T> expert_logits;  // [N x C x H x W], pre-softmax
    Var<T> bias_field;     // [C x H x W], standardized units
};

/// The gating network. Parameters are held as shared storage so a constructed
/// network can be bound read-only into many concurrent tapes; training updates
/// the storage in place between steps.
template <typename T>
class GateNet {
public:
    struct Param {
        std::string name;
        Shape shape;
        std::shared_ptr<std::vector<T>> data;
    };

    GateConfig cfg;
    std::vector<Param> params;

    GateNet(GateConfig config, std::uint64_t seed) : cfg(std::move(config)) {
        cfg.validate();
        build(seed);
        pos_embed_ = std::make_shared<std::vector<T>>(positional_embedding());
    }

    const Param& param(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return p;
        throw InternalError("unknown parameter '" + name + "'");
    }

    /// The fixed positional embedding, [tokens x hidden]. Deterministic in the
    /// config alone; carries no seed.
    const std::vector<T>& pos_embedding() const { return *pos_embed_; }

    Param& param(const std::string& name) {
        for (auto& p : params)
            if (p.name == name) return p;
        throw InternalError("unknown parameter '" + name + "'");
    }

    /// Raw sinusoidal lead-time features: cos(t w_k) then sin(t w_k) over the
    /// geometric ladder w_k = 10000^(-k / kFreqCount).
    static std::vector<double> lead_features(double t_hours) {
        std::vector<double> f(2 * GateConfig::kFreqCount);
        for (std::size_t k = 0; k < GateConfig::kFreqCount; ++k) {
            const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                      static_cast<double>(GateConfig::kFreqCount));
            f[k] = std::cos(t_hours * w);
            f[GateConfig::kFreqCount + k] = std::sin(t_hours * w);
        }
        return f;
    }

    /// Bind every parameter into the tape as a leaf; `train` makes the leaves
    /// gradient-taking. The list is aligned with `params`.
    std::vector<Var<T>> bind(Tape<T>& tape, bool train) const {
        std::vector<Var<T>> bound;
        bound.reserve(params.size());
        for (const auto& p : params) bound.push_back(tape.leaf_shared(p.shape, p.data, train));
        return bound;
    }

    /// Conditioning vector of width `hidden` from lead time and the optional
    /// noise sample: mlp2(gelu(mlp1(features(t))) [+ z W_z]). Deterministic
    /// in (t, z, parameters).
    Var<T> embed_condition(Tape<T>& tape, double t_hours, const std::vector<T>* z,
                           const std::vector<Var<T>>& bound) const {
        if (t_hours <= 0) throw ConfigError("lead time must be positive, got " +
                                            std::to_string(t_hours));
        if (cfg.noise_dim > 0) {
            if (!z || z->size() != cfg.noise_dim)
                throw ShapeError("noise vector must have " + std::to_string(cfg.noise_dim) +
                                 " elements");
        } else if (z) {
            throw ShapeError("noise vector passed to a gate with noise_dim = 0");
        }
        std::vector<double> fd = lead_features(t_hours);
        Tensor<T> ft({1, fd.size()});
        for (std::size_t i = 0; i < fd.size(); ++i) ft.v[i] = static_cast<T>(fd[i]);
        Var<T> f = tape.leaf(std::move(ft));
        Var<T> h = add_rowvec(tape, matmul(tape, f, bound[idx_.cond1_w]), bound[idx_.cond1_b]);
        h = gelu(tape, h);
        if (cfg.noise_dim > 0) {
            Tensor<T> zt({1, cfg.noise_dim});
            std::copy(z->begin(), z->end(), zt.v.begin());
            Var<T> zv = tape.leaf(std::move(zt));
            h = add(tape, h, matmul(tape, zv, bound[idx_.noise_w]));
        }
        return add_rowvec(tape, matmul(tape, h, bound[idx_.cond2_w]), bound[idx_.cond2_b]);
    }

    /// One conditioned transformer block: the conditioning vector produces
    /// (shift1, scale1, gate1, shift2, scale2, gate2); attention and mlp
    /// branches are modulated as x*(1+scale)+shift and scaled by their gate
    /// before the residual add. The modulation projection starts at zero, so
    /// a fresh block is the identity map.
    Var<T> dit_block(Tape<T>& tape, Var<T> tok, const Var<T>& cond, std::size_t layer,
                     const std::vector<Var<T>>& bound) const {
        const std::size_t b = idx_.blk0 + layer * idx_.per_block;
        const std::size_t d = cfg.hidden;
        auto at = [&](std::size_t off) -> const Var<T>& { return bound[b + off]; };
        Var<T> ones = tape.leaf(Tensor<T>::full({d}, T(1)));
        Var<T> zeros = tape.leaf(Tensor<T>(Shape{d}));

        Var<T> mod = add_rowvec(tape, matmul(tape, cond, at(0)), at(1));
        mod = reshape(tape, mod, {6, d});
        Var<T> shift1 = take_rows(tape, mod, 0, 1);
        Var<T> scale1 = take_rows(tape, mod, 1, 1);
        Var<T> gate1 = take_rows(tape, mod, 2, 1);
        Var<T> shift2 = take_rows(tape, mod, 3, 1);
        Var<T> scale2 = take_rows(tape, mod, 4, 1);
        Var<T> gate2 = take_rows(tape, mod, 5, 1);

        Var<T> h = layer_norm(tape, tok, ones, zeros, GateConfig::kLnEps);
        h = add_rowvec(tape, mul_rowvec(tape, h, add_scalar(tape, scale1, 1.0)), shift1);
        Var<T> q = add_rowvec(tape, matmul(tape, h, at(2)), at(3));
        Var<T> k = add_rowvec(tape, matmul(tape, h, at(4)), at(5));
        Var<T> v = add_rowvec(tape, matmul(tape, h, at(6)), at(7));
        Var<T> a = attention(tape, q, k, v, cfg.heads);
        a = add_rowvec(tape, matmul(tape, a, at(8)), at(9));
        tok = add(tape, tok, mul_rowvec(tape, a, gate1));

        h = layer_norm(tape, tok, ones, zeros, GateConfig::kLnEps);
        h = add_rowvec(tape, mul_rowvec(tape, h, add_scalar(tape, scale2, 1.0)), shift2);
        h = add_rowvec(tape, matmul(tape, h, at(10)), at(11));
        h = gelu(tape, h);
        h = add_rowvec(tape, matmul(tape, h, at(12)), at(13));
        return add(tape, tok, mul_rowvec(tape, h, gate2));
    }

    /// Runs the network on one standardized expert stack. When `bound_out` is
    /// given, every parameter is bound as a gradient-taking leaf and the leaf
    /// list (aligned with `params`) is returned there for gradient harvest.
    GateOutput<T> forward(Tape<T>& tape, const Var<T>& experts, double t_hours,
                          const std::vector<T>* z, std::vector<Var<T>>* bound_out = nullptr) const {
        std::vector<Var<T>> bound = bind(tape, bound_out != nullptr);
        GateOutput<T> out = forward_with(tape, experts, t_hours, z, bound);
        if (bound_out) *bound_out = std::move(bound);
        return out;
    }

    /// Same pipeline over an externally bound parameter list (must align with
    /// `params`); the gradient-verification harness drives the network this way.
    GateOutput<T> forward_with(Tape<T>& tape, const Var<T>& experts, double t_hours,
                               const std::vector<T>* z, const std::vector<Var<T>>& bound) const {
        const std::size_t N = cfg.n_experts, C = cfg.channels, H = cfg.height, W = cfg.width;
        detail::require(experts->shape == Shape{N, C, H, W},
                        "gate input must be " + shape_str({N, C, H, W}) + ", got " +
                            shape_str(experts->shape));
        if (bound.size() != params.size())
            throw InternalError("bound parameter list does not match the network");
        if (t_hours > 0 &&
            (t_hours < cfg.lead_hours.front() || t_hours > cfg.lead_hours.back()))
            std::fprintf(stderr, "warning: lead %g h outside dataset range [%u, %u] h\n", t_hours,
                         cfg.lead_hours.front(), cfg.lead_hours.back());

        auto at = [&](std::size_t i) -> const Var<T>& { return bound[i]; };
        const std::size_t d = cfg.hidden;

        Var<T> cond = embed_condition(tape, t_hours, z, bound);

        // patchify and embed
        Var<T> planes = reshape(tape, experts, {N * C, H, W});
        Var<T> tok = patchify(tape, planes, cfg.patch);
        tok = add_rowvec(tape, matmul(tape, tok, at(idx_.embed_w)), at(idx_.embed_b));
        Var<T> pos = tape.leaf_shared({cfg.tokens(), d}, pos_embed_);
        tok = add(tape, tok, pos);

        for (std::size_t l = 0; l < cfg.depth; ++l)
            tok = dit_block(tape, tok, cond, l, bound);

        // final adaptive layer norm, then linear head
        {
            Var<T> ones = tape.leaf(Tensor<T>::full({d}, T(1)));
            Var<T> zeros = tape.leaf(Tensor<T>(Shape{d}));
            Var<T> mod = add_rowvec(tape, matmul(tape, cond, at(idx_.final_w)), at(idx_.final_b));
            mod = reshape(tape, mod, {2, d});
            Var<T> shift = take_rows(tape, mod, 0, 1);
            Var<T> scale = take_rows(tape, mod, 1, 1);
            Var<T> h = layer_norm(tape, tok, ones, zeros, GateConfig::kLnEps);
            h = mul_rowvec(tape, h, add_scalar(tape, scale, 1.0));
            h = add_rowvec(tape, h, shift);
            tok = add_rowvec(tape, matmul(tape, h, at(idx_.head_w)), at(idx_.head_b));
        }

        Var<T> grid = unpatchify(tape, tok, cfg.patch, H, W);  // [(N+1)C x H x W]
        Var<T> flat = reshape(tape, grid, {(N + 1) * C, H * W});
        GateOutput<T> out;
        out.expert_logits = reshape(tape, take_rows(tape, flat, 0, N * C), {N, C, H, W});
        out.bias_field = reshape(tape, take_rows(tape, flat, N * C, C), {C, H, W});
        return out;
    }

private:
    struct Indices {
        std::size_t embed_w = 0, embed_b = 0;
        std::size_t cond1_w = 0, cond1_b = 0, noise_w = 0, cond2_w = 0, cond2_b = 0;
        std::size_t blk0 = 0;       // index of first block parameter
        std::size_t per_block = 0;  // parameters per block
        std::size_t final_w = 0, final_b = 0, head_w = 0, head_b = 0;
    };
    Indices idx_;
    std::shared_ptr<std::vector<T>> pos_embed_;

    std::size_t add_param(const std::string& name, Shape shape) {
        params.push_back({name, shape,
                          std::make_shared<std::vector<T>>(mowe::numel(shape), T(0))});
        return params.size() - 1;
    }

    /// Xavier-uniform for a [fan_in x fan_out] weight; draws happen in double
    /// so float and double instantiations follow the same sample path.
    void fill_xavier(std::size_t p, Rng& rng) {
        const Shape& s = params[p].shape;
        const double limit = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
        for (T& x : *params[p].data) x = static_cast<T>(rng.uniform(-limit, limit));
    }

    void build(std::uint64_t seed) {
        const std::size_t d = cfg.hidden, m = cfg.mlp_width();
        Rng rng(seed_of(seed, 0x6761746524ULL));  // parameter stream

        idx_.embed_w = add_param("embed.w", {cfg.token_width(), d});
        idx_.embed_b = add_param("embed.b", {d});
        idx_.cond1_w = add_param("cond.mlp1.w", {2 * GateConfig::kFreqCount, d});
        idx_.cond1_b = add_param("cond.mlp1.b", {d});
        if (cfg.noise_dim > 0) idx_.noise_w = add_param("cond.noise.w", {cfg.noise_dim, d});
        idx_.cond2_w = add_param("cond.mlp2.w", {d, d});
        idx_.cond2_b = add_param("cond.mlp2.b", {d});
        idx_.blk0 = params.size();
        for (std::size_t l = 0; l < cfg.depth; ++l) {
            const std::string b = "blk" + std::to_string(l) + ".";
            add_param(b + "mod.w", {d, 6 * d});  // stays zero: identity at init
            add_param(b + "mod.b", {6 * d});
            add_param(b + "attn.wq", {d, d});
            add_param(b + "attn.bq", {d});
            add_param(b + "attn.wk", {d, d});
            add_param(b + "attn.bk", {d});
            add_param(b + "attn.wv", {d, d});
            add_param(b + "attn.bv", {d});
            add_param(b + "attn.wo", {d, d});
            add_param(b + "attn.bo", {d});
            add_param(b + "mlp.w1", {d, m});
            add_param(b + "mlp.b1", {m});
            add_param(b + "mlp.w2", {m, d});
            add_param(b + "mlp.b2", {d});
        }
        idx_.per_block = (params.size() - idx_.blk0) / cfg.depth;
        idx_.final_w = add_param("final.mod.w", {d, 2 * d});  // stays zero
        idx_.final_b = add_param("final.mod.b", {2 * d});
        idx_.head_w = add_param("head.w", {d, cfg.head_width()});  // stays zero
        idx_.head_b = add_param("head.b", {cfg.head_width()});

        fill_xavier(idx_.embed_w, rng);
        fill_xavier(idx_.cond1_w, rng);
        if (cfg.noise_dim > 0) fill_xavier(idx_.noise_w, rng);
        fill_xavier(idx_.cond2_w, rng);
        for (std::size_t l = 0; l < cfg.depth; ++l) {
            const std::size_t b = idx_.blk0 + l * idx_.per_block;
            fill_xavier(b + 2, rng);   // wq
            fill_xavier(b + 4, rng);   // wk
            fill_xavier(b + 6, rng);   // wv
            fill_xavier(b + 8, rng);   // wo
            fill_xavier(b + 10, rng);  // mlp.w1
            fill_xavier(b + 12, rng);  // mlp.w2
        }
    }

    /// Fixed 2d sine-cosine positional embedding; first half encodes the patch
    /// row, second half the patch column, each as [sin | cos] over a geometric
    /// frequency ladder. Not trained and has no seed.
    std::vector<T> positional_embedding() const {
        const std::size_t d = cfg.hidden, q = d / 4;
        const std::size_t gh = cfg.height / cfg.patch, gw = cfg.width / cfg.patch;
        std::vector<T> pos(gh * gw * d);
        for (std::size_t r = 0; r < gh; ++r)
            for (std::size_t c = 0; c < gw; ++c) {
                T* row = pos.data() + (r * gw + c) * d;
                for (std::size_t j = 0; j < q; ++j) {
                    const double w =
                        1.0 / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(q));
                    row[j] = static_cast<T>(std::sin(static_cast<double>(r) * w));
                    row[q + j] = static_cast<T>(std::cos(static_cast<double>(r) * w));
                    row[2 * q + j] = static_cast<T>(std::sin(static_cast<double>(c) * w));
                    row[3 * q + j] = static_cast<T>(std::cos(static_cast<double>(c) * w));
                }
            }
        return pos;
    }
};

}  // namespace mowe
