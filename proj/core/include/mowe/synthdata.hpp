#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mowe/common.hpp"
#include "mowe/kvconfig.hpp"

namespace mowe {

/// Truth simulator settings. Fields evolve on a doubly periodic grid by
/// semi-Lagrangian advection in a fixed divergence-free flow plus spectral
/// hyperdiffusion, stepped once per entry of `lead_hours`.
struct SimConfig {
    std::size_t channels = 9;
    std::size_t height = 64;
    std::size_t width = 128;
    std::vector<std::uint32_t> lead_hours;  // strictly ascending, all > 0

    double spectrum_exponent = -3.0;  // initial-condition power law
    double band_limit = 0.25;         // keep wavenumbers below band_limit * min(H, W)
    double velocity_amplitude = 3.0;  // peak displacement, grid cells per step
    double hyperdiffusion = 0.02;     // strength of the quartic spectral damping

    // per-channel affine map from the standardized simulation units to the
    // reported physical units
    std::vector<double> channel_offset;
    std::vector<double> channel_scale;

    void validate() const;
    std::size_t pixels() const { return height * width; }
};

/// One simulated truth run: states at lead 0 and at every configured lead,
/// in physical units, reproducible bit-for-bit from (seed, init_index).
struct TruthTrajectory {
    std::uint64_t seed = 0;
    std::size_t init_index = 0;
    std::vector<std::vector<double>> states;  // [1 + n_leads][C*H*W]
};

/// Error recipe of one emulated expert. Amplitudes are in standardized units
/// and scale with each channel's configured spread; the skill mask multiplies
/// the additive error so an expert can specialize regionally.
struct ExpertProfile {
    std::string name;
    double bias_amplitude = 0.0;
    int bias_pattern = 0;
    std::vector<double> blur_radius;      // grid cells, one per lead, non-decreasing
    std::vector<double> noise_amplitude;  // standardized units, per lead, non-decreasing
    int mask_pattern = 0;
    double mask_low = 1.0;
    double mask_high = 1.0;
    std::uint64_t seed = 0;

    void validate(std::size_t n_leads) const;
    /// H x W multiplier in [0, 1].
    std::vector<double> skill_mask(std::size_t height, std::size_t width) const;
};

/// Analytic spatial patterns shared by bias fields and skill masks.
/// 0: constant one; 1: zonal wave; 2: meridional wave; 3: diagonal wave;
/// 4: centered blob; 5: smooth east-west step. Values lie in [-1, 1].
double pattern_value(int id, double x01, double y01);

TruthTrajectory simulate_truth(std::uint64_t seed, std::size_t init_index, const SimConfig& cfg);

/// Forecast of one expert at one lead: blur(truth) + mask * (bias + noise),
/// emitted in the dataset's storage precision. `lead_index` indexes
/// cfg.lead_hours. Noise is seeded per (profile seed, init, lead), so any
/// record regenerates independently of generation order.
std::vector<float> emulate_expert(const TruthTrajectory& truth, const ExpertProfile& profile,
                                  std::size_t lead_index, const SimConfig& cfg);

/// Full generation recipe: simulator, experts, split sizes, base seed.
struct GenerationConfig {
    SimConfig sim;
    std::vector<ExpertProfile> experts;
    std::size_t train_inits = 0;
    std::size_t test_inits = 0;
    std::uint64_t base_seed = 0;

    void validate() const;
    static GenerationConfig from_kv(const KvConfig& kv);
    /// Each split draws its own deterministic seed from the base.
    std::uint64_t split_seed(bool test_split) const;
};

/// Writes `<out_prefix>_train.mowe` and `<out_prefix>_test.mowe` plus text
/// manifests. Returns the two paths.
std::pair<std::string, std::string> generate_dataset(const GenerationConfig& cfg,
                                                     const std::string& out_prefix,
                                                     std::size_t jobs);

}  // namespace mowe
