#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mowe/dataset.hpp"
#include "mowe/gate.hpp"

namespace mowe {

enum class Weighting { uniform, coslat };

/// Per-channel RMSE between two C x H x W fields in physical units.
/// Cosine-latitude weighting needs an explicit per-row latitude axis (degrees);
/// the synthetic periodic grid does not declare one.
std::vector<double> rmse(const float* pred, const float* truth, std::size_t channels,
                         std::size_t height, std::size_t width, Weighting weighting,
                         const std::vector<double>* row_latitudes_deg = nullptr);

/// (a - b) / b * 100 with b as the reference value.
double pct_diff(double a, double b);

/// RMSE per (model, channel, lead) in physical units, plus enough metadata to
/// reproduce aggregate standardized scores.
struct ScoreTable {
    std::vector<std::string> models;
    std::vector<std::string> channels;
    std::vector<std::uint32_t> leads;
    std::vector<double> values;  // model-major, then channel, then lead
    std::vector<double> channel_std;
    std::string dataset_hash;
    std::string checkpoint_id;
    std::string weighting = "uniform";

    double at(std::size_t model, std::size_t channel, std::size_t lead) const {
        return values[(model * channels.size() + channel) * leads.size() + lead];
    }
    double& cell(std::size_t model, std::size_t channel, std::size_t lead) {
        return values[(model * channels.size() + channel) * leads.size() + lead];
    }
    std::size_t model_index(const std::string& name) const;

    /// Standardized RMSE aggregated over channels at one lead:
    /// sqrt(mean_c (rmse_c / std_c)^2). Exact because all channels share the
    /// pixel count.
    double aggregate_std(std::size_t model, std::size_t lead) const;

    std::string to_csv() const;
    std::string to_json() const;
    void write(const std::string& csv_path) const;  // plus .json sibling
};

/// Scores the gating network against every stored expert and the uniform
/// mean, lead by lead, on a test-split dataset. When `expected_hash` is given
/// it must equal the dataset's family hash.
ScoreTable evaluate_leads(const GateNet<float>& net, const DatasetReader& test,
                          const std::array<std::uint8_t, 32>* expected_hash,
                          const std::string& checkpoint_id, Weighting weighting,
                          std::size_t jobs);

/// Per-pixel constrained least-squares reference: at each (lead, channel,
/// pixel) fit unit-sum weights plus a bias on the training split (ridge
/// strength `lambda`), then score on the test split. The natural floor for
/// any lead-local blend of the same form.
struct OracleResult {
    ScoreTable table;  // single model row group, "oracle"
    std::vector<std::vector<double>> mean_weight;  // [lead][expert]
    std::vector<double> mean_entropy;              // [lead], natural log
};
OracleResult oracle_blend(const DatasetReader& train, const DatasetReader& test, double lambda,
                          std::size_t jobs);

/// Raw-array export of the gate's weight and bias maps for one init at the
/// given leads, plus a text summary of per-expert spatial-mean weight and
/// mean weight entropy per lead.
struct WeightSummary {
    std::uint32_t lead_hours = 0;
    std::vector<double> mean_weight;  // per expert
    double mean_entropy = 0.0;
};
std::vector<WeightSummary> export_weight_maps(const GateNet<float>& net,
                                              const DatasetReader& data, std::size_t init,
                                              const std::vector<std::uint32_t>& leads,
                                              const std::string& out_prefix);

}  // namespace mowe
