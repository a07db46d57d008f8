#include "mowe/synthdata.hpp"

#include <cctype>
#include <cmath>
#include <complex>
#include <numbers>

#include "mowe/dataset.hpp"
#include "mowe/fft.hpp"
#include "mowe/parallel.hpp"
#include "mowe/rng.hpp"

namespace mowe {

namespace {

constexpr std::uint64_t kSaltVelocity = 0x76656c6f63697479ULL;
constexpr std::uint64_t kSaltInitial = 0x696e697469616cULL;
constexpr std::uint64_t kSaltNoise = 0x6e6f697365ULL;
constexpr std::uint64_t kSaltExpert = 0x657870657274ULL;
constexpr std::uint64_t kSaltSplit = 0x73706c6974ULL;

/// Signed frequency in cycles for index k on an axis of length n.
inline double signed_freq(std::size_t k, std::size_t n) {
    return (k <= n / 2) ? static_cast<double>(k)
                        : static_cast<double>(k) - static_cast<double>(n);
}

/// Band-limited Gaussian random field with power spectrum |k|^exponent,
/// normalized to zero mean and unit variance.
std::vector<double> random_field(std::size_t h, std::size_t w, double exponent,
                                 double band_limit, Rng& rng) {
    std::vector<std::complex<double>> g(h * w);
    for (auto& x : g) x = {rng.normal(), 0.0};
    fft2(g, h, w, false);
    const double kmax = band_limit * static_cast<double>(std::min(h, w));
    for (std::size_t ky = 0; ky < h; ++ky)
        for (std::size_t kx = 0; kx < w; ++kx) {
            const double fy = signed_freq(ky, h);
            const double fx = signed_freq(kx, w);
            const double k = std::sqrt(fx * fx + fy * fy);
            double amp = 0.0;
            if (k >= 1.0 && k <= kmax) amp = std::pow(k, exponent / 2.0);
            g[ky * w + kx] *= amp;
        }
    fft2(g, h, w, true);
    std::vector<double> out(h * w);
    double mean = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = g[i].real();
        mean += out[i];
    }
    mean /= static_cast<double>(out.size());
    double var = 0;
    for (double& x : out) {
        x -= mean;
        var += x * x;
    }
    var /= static_cast<double>(out.size());
    const double inv = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
    for (double& x : out) x *= inv;
    return out;
}

/// Spectral Gaussian smoothing with standard deviation `radius` cells.
void gaussian_blur(std::vector<double>& field, std::size_t h, std::size_t w, double radius) {
    if (radius <= 0) return;
    std::vector<std::complex<double>> g(h * w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = {field[i], 0.0};
    fft2(g, h, w, false);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t ky = 0; ky < h; ++ky)
        for (std::size_t kx = 0; kx < w; ++kx) {
            const double wy = two_pi * signed_freq(ky, h) / static_cast<double>(h);
            const double wx = two_pi * signed_freq(kx, w) / static_cast<double>(w);
            const double k2 = wx * wx + wy * wy;
            g[ky * w + kx] *= std::exp(-0.5 * k2 * radius * radius);
        }
    fft2(g, h, w, true);
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = g[i].real();
}

struct Flow {
    std::vector<double> u;  // cells per step
    std::vector<double> v;
};

/// Fixed divergence-free flow from a low-wavenumber streamfunction; the
/// dataset seed selects amplitudes and phases once, not per init.
Flow make_flow(std::uint64_t seed, const SimConfig& cfg) {
    struct Mode {
        int a, b;
        double amp, phase;
    };
    const int pairs[5][2] = {{1, 0}, {0, 1}, {1, 1}, {2, 1}, {1, 2}};
    Rng rng(seed_of(seed, kSaltVelocity));
    std::vector<Mode> modes;
    for (const auto& p : pairs)
        modes.push_back({p[0], p[1], rng.uniform(0.5, 1.0), rng.uniform(0, 2 * std::numbers::pi)});

    const std::size_t h = cfg.height, w = cfg.width;
    Flow f;
    f.u.resize(h * w);
    f.v.resize(h * w);
    const double two_pi = 2.0 * std::numbers::pi;
    double peak = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double u = 0, v = 0;
            for (const Mode& m : modes) {
                const double arg = two_pi * (m.a * static_cast<double>(x) / w +
                                             m.b * static_cast<double>(y) / h) +
                                   m.phase;
                const double c = std::cos(arg);
                // u = d(psi)/dy, v = -d(psi)/dx for psi = sum amp * sin(arg)
                u += m.amp * two_pi * m.b / static_cast<double>(h) * c;
                v -= m.amp * two_pi * m.a / static_cast<double>(w) * c;
            }
            f.u[y * w + x] = u;
            f.v[y * w + x] = v;
            peak = std::max(peak, std::sqrt(u * u + v * v));
        }
    if (peak > 0) {
        const double s = cfg.velocity_amplitude / peak;
        for (double& x : f.u) x *= s;
        for (double& x : f.v) x *= s;
    }
    return f;
}

inline double catmull_rom(double p0, double p1, double p2, double p3, double t) {
    const double t2 = t * t, t3 = t2 * t;
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

/// Semi-Lagrangian advection step with bicubic periodic interpolation at the
/// departure points, followed by a mean fixer so the spatial mean mode is
/// untouched by construction.
void advect(std::vector<double>& field, const Flow& flow, std::size_t h, std::size_t w) {
    std::vector<double> out(h * w);
    const auto at = [&](long y, long x) -> double {
        y = ((y % static_cast<long>(h)) + h) % static_cast<long>(h);
        x = ((x % static_cast<long>(w)) + w) % static_cast<long>(w);
        return field[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    double mean_before = 0, mean_after = 0;
    for (double x : field) mean_before += x;
    mean_before /= static_cast<double>(h * w);

    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double yd = static_cast<double>(y) - flow.v[y * w + x];
            const double xd = static_cast<double>(x) - flow.u[y * w + x];
            const long y0 = static_cast<long>(std::floor(yd));
            const long x0 = static_cast<long>(std::floor(xd));
            const double ty = yd - static_cast<double>(y0);
            const double tx = xd - static_cast<double>(x0);
            double rows[4];
            for (long r = -1; r <= 2; ++r)
                rows[r + 1] = catmull_rom(at(y0 + r, x0 - 1), at(y0 + r, x0), at(y0 + r, x0 + 1),
                                          at(y0 + r, x0 + 2), tx);
            out[y * w + x] = catmull_rom(rows[0], rows[1], rows[2], rows[3], ty);
        }
    for (double x : out) mean_after += x;
    mean_after /= static_cast<double>(h * w);
    const double fix = mean_before - mean_after;
    for (double& x : out) x += fix;
    field = std::move(out);
}

/// Quartic spectral damping; the zero mode keeps unit gain.
void hyperdiffuse(std::vector<double>& field, std::size_t h, std::size_t w, double nu) {
    if (nu <= 0) return;
    std::vector<std::complex<double>> g(h * w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = {field[i], 0.0};
    fft2(g, h, w, false);
    for (std::size_t ky = 0; ky < h; ++ky)
        for (std::size_t kx = 0; kx < w; ++kx) {
            const double ny = signed_freq(ky, h) / (static_cast<double>(h) / 2.0);
            const double nx = signed_freq(kx, w) / (static_cast<double>(w) / 2.0);
            const double k2 = nx * nx + ny * ny;
            g[ky * w + kx] *= std::exp(-nu * k2 * k2);
        }
    fft2(g, h, w, true);
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = g[i].real();
}

}  // namespace

void SimConfig::validate() const {
    if (channels < 1) throw ConfigError("simulator needs at least 1 channel");
    if (!is_pow2(height) || !is_pow2(width))
        throw ConfigError("grid dims must be powers of two for the spectral transform, got " +
                          std::to_string(height) + "x" + std::to_string(width));
    if (lead_hours.empty()) throw ConfigError("lead set must not be empty");
    std::uint32_t prev = 0;
    for (std::uint32_t h : lead_hours) {
        if (h <= prev) throw ConfigError("lead hours must be strictly ascending and positive");
        prev = h;
    }
    if (channel_offset.size() != channels || channel_scale.size() != channels)
        throw ConfigError("channel offset/scale lists must have one entry per channel");
    for (double s : channel_scale)
        if (!(s > 0)) throw ConfigError("channel scales must be positive");
    if (band_limit <= 0 || band_limit > 0.5)
        throw ConfigError("band limit must lie in (0, 0.5]");
    if (velocity_amplitude < 0 || hyperdiffusion < 0)
        throw ConfigError("velocity amplitude and hyperdiffusion must be non-negative");
}

double pattern_value(int id, double x01, double y01) {
    const double two_pi = 2.0 * std::numbers::pi;
    switch (id) {
        case 0:
            return 1.0;
        case 1:
            return std::sin(two_pi * x01);
        case 2:
            return std::sin(two_pi * y01);
        case 3:
            return std::sin(two_pi * (x01 + y01));
        case 4: {
            const double dx = x01 - 0.5, dy = y01 - 0.5;
            return 2.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15)) - 1.0;
        }
        case 5:
            return std::tanh(8.0 * (x01 - 0.5));
        default:
            throw ConfigError("unknown spatial pattern id " + std::to_string(id));
    }
}

void ExpertProfile::validate(std::size_t n_leads) const {
    if (name.empty()) throw ConfigError("expert profile needs a name");
    if (blur_radius.size() != n_leads || noise_amplitude.size() != n_leads)
        throw ConfigError("expert '" + name + "' needs one blur/noise entry per lead");
    for (std::size_t i = 0; i < n_leads; ++i) {
        if (blur_radius[i] < 0 || noise_amplitude[i] < 0)
            throw ConfigError("expert '" + name + "' has negative error amplitudes");
        if (i > 0 && (blur_radius[i] < blur_radius[i - 1] ||
                      noise_amplitude[i] < noise_amplitude[i - 1]))
            throw ConfigError("expert '" + name +
                              "' error magnitudes must be non-decreasing in lead");
    }
    if (mask_low < 0 || mask_low > 1 || mask_high < 0 || mask_high > 1)
        throw ConfigError("expert '" + name + "' skill mask bounds must lie in [0, 1]");
    pattern_value(bias_pattern, 0.25, 0.25);  // validates the ids
    pattern_value(mask_pattern, 0.25, 0.25);
}

std::vector<double> ExpertProfile::skill_mask(std::size_t height, std::size_t width) const {
    std::vector<double> m(height * width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double p01 = 0.5 * (1.0 + pattern_value(mask_pattern,
                                                          (x + 0.5) / static_cast<double>(width),
                                                          (y + 0.5) / static_cast<double>(height)));
            m[y * width + x] = mask_low + (mask_high - mask_low) * p01;
        }
    return m;
}

TruthTrajectory simulate_truth(std::uint64_t seed, std::size_t init_index, const SimConfig& cfg) {
    cfg.validate();
    const std::size_t h = cfg.height, w = cfg.width, hw = h * w, C = cfg.channels;
    TruthTrajectory traj;
    traj.seed = seed;
    traj.init_index = init_index;

    const Flow flow = make_flow(seed, cfg);
    const bool frozen = cfg.velocity_amplitude <= 0;

    // standardized initial state, one independent stream per channel
    std::vector<std::vector<double>> state(C);
    for (std::size_t c = 0; c < C; ++c) {
        Rng rng(seed_of(seed, kSaltInitial, init_index, c));
        state[c] = random_field(h, w, cfg.spectrum_exponent, cfg.band_limit, rng);
    }

    auto emit = [&]() {
        std::vector<double> phys(C * hw);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < hw; ++i)
                phys[c * hw + i] = cfg.channel_offset[c] + cfg.channel_scale[c] * state[c][i];
        traj.states.push_back(std::move(phys));
    };

    emit();  // lead 0
    for (std::size_t step = 0; step < cfg.lead_hours.size(); ++step) {
        for (std::size_t c = 0; c < C; ++c) {
            if (!frozen) advect(state[c], flow, h, w);
            hyperdiffuse(state[c], h, w, cfg.hyperdiffusion);
        }
        emit();
    }
    return traj;
}

std::vector<float> emulate_expert(const TruthTrajectory& truth, const ExpertProfile& profile,
                                  std::size_t lead_index, const SimConfig& cfg) {
    if (lead_index >= cfg.lead_hours.size())
        throw ConfigError("lead index " + std::to_string(lead_index) + " outside the lead set");
    const std::size_t h = cfg.height, w = cfg.width, hw = h * w, C = cfg.channels;
    const std::vector<double>& base = truth.states.at(1 + lead_index);

    const double blur = profile.blur_radius[lead_index];
    const double noise_amp = profile.noise_amplitude[lead_index];
    const std::vector<double> mask = profile.skill_mask(h, w);

    Rng noise_rng(seed_of(seed_of(truth.seed, profile.seed), kSaltNoise, truth.init_index,
                          cfg.lead_hours[lead_index]));

    std::vector<float> out(C * hw);
    std::vector<double> field(hw);
    for (std::size_t c = 0; c < C; ++c) {
        std::copy_n(base.data() + c * hw, hw, field.data());
        gaussian_blur(field, h, w, blur);

        std::vector<double> noise;
        if (noise_amp > 0) noise = random_field(h, w, -2.0, 0.45, noise_rng);

        const double scale = cfg.channel_scale[c];
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t i = y * w + x;
                double err = 0.0;
                if (profile.bias_amplitude != 0)
                    err += profile.bias_amplitude *
                           pattern_value(profile.bias_pattern, (x + 0.5) / w, (y + 0.5) / h);
                if (noise_amp > 0) err += noise_amp * noise[i];
                out[c * hw + i] = static_cast<float>(field[i] + mask[i] * scale * err);
            }
    }
    return out;
}

void GenerationConfig::validate() const {
    sim.validate();
    if (experts.size() < 2) throw ConfigError("generation needs at least 2 expert profiles");
    for (const auto& e : experts) e.validate(sim.lead_hours.size());
    if (train_inits < 1 || test_inits < 1)
        throw ConfigError("both splits need at least one initialization");
}

std::uint64_t GenerationConfig::split_seed(bool test_split) const {
    return seed_of(base_seed, kSaltSplit, test_split ? 1 : 0);
}

namespace {

std::vector<double> resolve_per_lead(const KvConfig& kv, const std::string& key,
                                     std::size_t n_leads, double fallback) {
    if (kv.has(key)) {
        std::vector<double> v = kv.get_reals(key);
        if (v.size() == 1) v.assign(n_leads, v[0]);
        if (v.size() != n_leads)
            throw ConfigError("key '" + key + "' needs 1 or " + std::to_string(n_leads) +
                              " values");
        return v;
    }
    if (kv.has(key + "_start") || kv.has(key + "_end")) {
        const double a = kv.get_real(key + "_start");
        const double b = kv.get_real(key + "_end");
        std::vector<double> v(n_leads);
        for (std::size_t i = 0; i < n_leads; ++i)
            v[i] = n_leads == 1
                       ? a
                       : a + (b - a) * static_cast<double>(i) / static_cast<double>(n_leads - 1);
        return v;
    }
    return std::vector<double>(n_leads, fallback);
}

std::vector<std::string> split_names(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(ch))) {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

GenerationConfig GenerationConfig::from_kv(const KvConfig& kv) {
    GenerationConfig g;
    g.sim.channels = static_cast<std::size_t>(kv.get_int("channels"));
    g.sim.height = static_cast<std::size_t>(kv.get_int("height"));
    g.sim.width = static_cast<std::size_t>(kv.get_int("width"));
    g.sim.lead_hours = kv.get_u32s("leads");
    g.sim.spectrum_exponent = kv.get_real("spectrum_exponent", -3.0);
    g.sim.band_limit = kv.get_real("band_limit", 0.25);
    g.sim.velocity_amplitude = kv.get_real("velocity_amplitude", 3.0);
    g.sim.hyperdiffusion = kv.get_real("hyperdiffusion", 0.02);
    g.sim.channel_offset =
        kv.get_reals("channel_offsets", std::vector<double>(g.sim.channels, 0.0));
    g.sim.channel_scale =
        kv.get_reals("channel_scales", std::vector<double>(g.sim.channels, 1.0));
    if (g.sim.channel_offset.size() == 1)
        g.sim.channel_offset.assign(g.sim.channels, g.sim.channel_offset[0]);
    if (g.sim.channel_scale.size() == 1)
        g.sim.channel_scale.assign(g.sim.channels, g.sim.channel_scale[0]);
    g.train_inits = static_cast<std::size_t>(kv.get_int("train_inits"));
    g.test_inits = static_cast<std::size_t>(kv.get_int("test_inits"));
    g.base_seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));

    const std::vector<std::string> names = split_names(kv.get_str("experts"));
    const std::size_t n_leads = g.sim.lead_hours.size();
    for (std::size_t e = 0; e < names.size(); ++e) {
        ExpertProfile p;
        p.name = names[e];
        const std::string pre = "expert." + p.name + ".";
        p.bias_amplitude = kv.get_real(pre + "bias_amplitude", 0.0);
        p.bias_pattern = static_cast<int>(kv.get_int(pre + "bias_pattern", 0));
        p.blur_radius = resolve_per_lead(kv, pre + "blur", n_leads, 0.0);
        p.noise_amplitude = resolve_per_lead(kv, pre + "noise", n_leads, 0.0);
        p.mask_pattern = static_cast<int>(kv.get_int(pre + "mask_pattern", 0));
        p.mask_low = kv.get_real(pre + "mask_low", 1.0);
        p.mask_high = kv.get_real(pre + "mask_high", 1.0);
        p.seed = static_cast<std::uint64_t>(
            kv.get_int(pre + "seed", static_cast<std::int64_t>(seed_of(g.base_seed, kSaltExpert, e))));
        g.experts.push_back(std::move(p));
    }
    g.validate();
    return g;
}

std::pair<std::string, std::string> generate_dataset(const GenerationConfig& cfg,
                                                     const std::string& out_prefix,
                                                     std::size_t jobs) {
    cfg.validate();
    const std::string train_path = out_prefix + "_train.mowe";
    const std::string test_path = out_prefix + "_test.mowe";
    const std::size_t C = cfg.sim.channels, hw = cfg.sim.pixels();
    const std::size_t n_leads = cfg.sim.lead_hours.size();

    std::vector<double> train_mean(C, 0.0), train_std(C, 1.0);

    for (int split = 0; split < 2; ++split) {
        const bool is_test = split == 1;
        const std::size_t n_inits = is_test ? cfg.test_inits : cfg.train_inits;
        const std::uint64_t seed = cfg.split_seed(is_test);

        DatasetManifest m;
        m.n_experts = cfg.experts.size();
        m.channels = C;
        m.height = cfg.sim.height;
        m.width = cfg.sim.width;
        m.n_inits = n_inits;
        m.lead_hours = cfg.sim.lead_hours;
        for (const auto& e : cfg.experts) m.expert_names.push_back(e.name);
        m.mean.assign(C, 0.0);
        m.std_dev.assign(C, 1.0);
        m.test_split = is_test;
        m.base_seed = seed;

        DatasetWriter writer(is_test ? test_path : train_path, m);

        // per-init partial sums over the lead-0 truth in storage precision,
        // reduced in init order for bit-stable statistics
        std::vector<std::vector<double>> sums(n_inits, std::vector<double>(C, 0.0));
        std::vector<std::vector<double>> sumsq(n_inits, std::vector<double>(C, 0.0));

        parallel_for(jobs, n_inits, [&](std::size_t init) {
            TruthTrajectory traj = simulate_truth(seed, init, cfg.sim);
            std::vector<float> truth_f(C * hw);
            std::vector<float> experts_f(cfg.experts.size() * C * hw);
            for (std::size_t l = 0; l < n_leads; ++l) {
                const std::vector<double>& st = traj.states[1 + l];
                for (std::size_t i = 0; i < C * hw; ++i)
                    truth_f[i] = static_cast<float>(st[i]);
                for (std::size_t e = 0; e < cfg.experts.size(); ++e) {
                    std::vector<float> field = emulate_expert(traj, cfg.experts[e], l, cfg.sim);
                    std::copy(field.begin(), field.end(), experts_f.begin() + e * C * hw);
                }
                writer.write_record(init, l, truth_f.data(), experts_f.data());
            }
            for (std::size_t c = 0; c < C; ++c) {
                double s = 0, s2 = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double x = static_cast<float>(traj.states[0][c * hw + i]);
                    s += x;
                    s2 += x * x;
                }
                sums[init][c] = s;
                sumsq[init][c] = s2;
            }
        });

        if (!is_test) {
            const double n = static_cast<double>(n_inits) * static_cast<double>(hw);
            for (std::size_t c = 0; c < C; ++c) {
                double s = 0, s2 = 0;
                for (std::size_t i = 0; i < n_inits; ++i) {
                    s += sums[i][c];
                    s2 += sumsq[i][c];
                }
                train_mean[c] = s / n;
                const double var = s2 / n - train_mean[c] * train_mean[c];
                train_std[c] = std::sqrt(std::max(var, 0.0));
            }
        }
        m.mean = train_mean;
        m.std_dev = train_std;
        writer.finalize(m);
    }
    return {train_path, test_path};
}

}  // namespace mowe
