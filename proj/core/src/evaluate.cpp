#include "mowe/evaluate.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "mowe/fusion.hpp"
#include "mowe/io.hpp"
#include "mowe/parallel.hpp"
#include "mowe/sha256.hpp"

namespace mowe {

namespace {

std::vector<double> row_weights(std::size_t height, Weighting weighting,
                                const std::vector<double>* lats) {
    std::vector<double> w(height, 1.0);
    if (weighting == Weighting::coslat) {
        if (!lats)
            throw ConfigError(
                "cosine-latitude weighting needs a declared latitude axis; this grid has none");
        if (lats->size() != height)
            throw ConfigError("latitude axis has " + std::to_string(lats->size()) +
                              " rows, grid has " + std::to_string(height));
        for (std::size_t r = 0; r < height; ++r)
            w[r] = std::cos((*lats)[r] * std::numbers::pi / 180.0);
    }
    double s = 0;
    for (double x : w) s += x;
    if (!(s > 0)) throw ConfigError("spatial weights sum to zero");
    for (double& x : w) x *= static_cast<double>(height) / s;  // mean weight 1
    return w;
}

std::string channel_label(std::size_t c) { return "c" + std::to_string(c); }

}  // namespace

std::vector<double> rmse(const float* pred, const float* truth, std::size_t channels,
                         std::size_t height, std::size_t width, Weighting weighting,
                         const std::vector<double>* row_latitudes_deg) {
    const std::vector<double> rw = row_weights(height, weighting, row_latitudes_deg);
    std::vector<double> out(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double sse = 0;
        for (std::size_t r = 0; r < height; ++r) {
            double row_sse = 0;
            for (std::size_t x = 0; x < width; ++x) {
                const std::size_t i = (c * height + r) * width + x;
                const double d = static_cast<double>(pred[i]) - truth[i];
                row_sse += d * d;
            }
            sse += rw[r] * row_sse;
        }
        out[c] = std::sqrt(sse / static_cast<double>(height * width));
    }
    return out;
}

double pct_diff(double a, double b) {
    if (!(b > 0)) throw ConfigError("pct_diff reference must be positive, got " +
                                    std::to_string(b));
    return (a - b) / b * 100.0;
}

std::size_t ScoreTable::model_index(const std::string& name) const {
    for (std::size_t i = 0; i < models.size(); ++i)
        if (models[i] == name) return i;
    throw InternalError("score table has no model '" + name + "'");
}

double ScoreTable::aggregate_std(std::size_t model, std::size_t lead) const {
    double acc = 0;
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const double r = at(model, c, lead) / channel_std[c];
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(channels.size()));
}

std::string ScoreTable::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "# mowe-score-table v1\n";
    os << "# dataset_hash = " << dataset_hash << "\n";
    os << "# checkpoint = " << checkpoint_id << "\n";
    os << "# weighting = " << weighting << "\n";
    os << "model,channel,lead_hours,rmse\n";
    for (std::size_t m = 0; m < models.size(); ++m)
        for (std::size_t c = 0; c < channels.size(); ++c)
            for (std::size_t l = 0; l < leads.size(); ++l)
                os << models[m] << "," << channels[c] << "," << leads[l] << "," << at(m, c, l)
                   << "\n";
    return os.str();
}

std::string ScoreTable::to_json() const {
    nlohmann::json j;
    j["format"] = "mowe-score-table";
    j["version"] = 1;
    j["dataset_hash"] = dataset_hash;
    j["checkpoint"] = checkpoint_id;
    j["weighting"] = weighting;
    j["channel_std"] = channel_std;
    auto rows = nlohmann::json::array();
    for (std::size_t m = 0; m < models.size(); ++m)
        for (std::size_t c = 0; c < channels.size(); ++c)
            for (std::size_t l = 0; l < leads.size(); ++l)
                rows.push_back({{"model", models[m]},
                                {"channel", channels[c]},
                                {"lead_hours", leads[l]},
                                {"rmse", at(m, c, l)}});
    j["rows"] = rows;
    return j.dump(2) + "\n";
}

void ScoreTable::write(const std::string& csv_path) const {
    const std::string csv = to_csv();
    atomic_write(csv_path, csv.data(), csv.size());
    const std::string json = to_json();
    atomic_write(csv_path + ".json", json.data(), json.size());
}

ScoreTable evaluate_leads(const GateNet<float>& net, const DatasetReader& test,
                          const std::array<std::uint8_t, 32>* expected_hash,
                          const std::string& checkpoint_id, Weighting weighting,
                          std::size_t jobs) {
    const DatasetManifest& m = test.manifest();
    if (!m.test_split)
        throw ConfigError("evaluation expects a test-split dataset, got the train split");
    if (expected_hash && *expected_hash != m.family_hash())
        throw ConfigError("checkpoint was trained on dataset family " +
                          Sha256::hex(*expected_hash) + " but '" + test.path() + "' is family " +
                          Sha256::hex(m.family_hash()));
    if (net.cfg.n_experts != m.n_experts || net.cfg.channels != m.channels ||
        net.cfg.height != m.height || net.cfg.width != m.width)
        throw ConfigError("gate dims (" + std::to_string(net.cfg.n_experts) + " experts, " +
                          std::to_string(net.cfg.channels) + "x" + std::to_string(net.cfg.height) +
                          "x" + std::to_string(net.cfg.width) + ") do not match dataset (" +
                          std::to_string(m.n_experts) + " experts, " + std::to_string(m.channels) +
                          "x" + std::to_string(m.height) + "x" + std::to_string(m.width) + ")");
    for (std::uint32_t h : net.cfg.lead_hours)
        test.lead_index(h);  // every trained lead must exist; no silent gaps

    if (weighting == Weighting::coslat)
        row_weights(m.height, weighting, nullptr);  // no latitude axis: reject

    const std::size_t n_leads = net.cfg.lead_hours.size();
    const std::size_t C = m.channels, hw = m.height * m.width;
    const std::size_t n_models = m.n_experts + 2;  // experts, mean, mowe
    const std::size_t mean_row = m.n_experts, mowe_row = m.n_experts + 1;

    // standardized SSE per (init, model, channel, lead), reduced in init order
    std::vector<std::vector<double>> partial(m.n_inits,
                                             std::vector<double>(n_models * C * n_leads, 0.0));

    parallel_for(jobs, m.n_inits, [&](std::size_t init) {
        std::vector<float> truth_raw(C * hw), experts_raw(m.n_experts * C * hw);
        std::vector<float> truth_std(C * hw), experts_std(m.n_experts * C * hw);
        std::vector<double>& sse = partial[init];
        for (std::size_t l = 0; l < n_leads; ++l) {
            const std::size_t li = test.lead_index(net.cfg.lead_hours[l]);
            test.read_truth(init, li, truth_raw.data());
            test.read_experts(init, li, experts_raw.data());
            for (std::size_t c = 0; c < C; ++c) {
                const double mu = m.mean[c], inv = 1.0 / m.std_dev[c];
                for (std::size_t i = 0; i < hw; ++i)
                    truth_std[c * hw + i] = static_cast<float>((truth_raw[c * hw + i] - mu) * inv);
                for (std::size_t e = 0; e < m.n_experts; ++e)
                    for (std::size_t i = 0; i < hw; ++i)
                        experts_std[(e * C + c) * hw + i] = static_cast<float>(
                            (experts_raw[(e * C + c) * hw + i] - mu) * inv);
            }

            Tape<float> tape;
            Var<float> ex = tape.leaf(
                Tensor<float>({m.n_experts, C, m.height, m.width}, experts_std));
            GateOutput<float> out = net.forward(tape, ex, net.cfg.lead_hours[l], nullptr);
            Var<float> weights = normalize_weights(tape, out.expert_logits);
            Var<float> fused = fuse(tape, ex, weights, out.bias_field);

            auto accumulate = [&](std::size_t model, const float* pred) {
                for (std::size_t c = 0; c < C; ++c) {
                    double s = 0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const double d =
                            static_cast<double>(pred[c * hw + i]) - truth_std[c * hw + i];
                        s += d * d;
                    }
                    sse[(model * C + c) * n_leads + l] += s;
                }
            };
            for (std::size_t e = 0; e < m.n_experts; ++e)
                accumulate(e, experts_std.data() + e * C * hw);
            {
                std::vector<float> mean_blend(C * hw, 0.0f);
                const float invn = 1.0f / static_cast<float>(m.n_experts);
                for (std::size_t e = 0; e < m.n_experts; ++e)
                    for (std::size_t i = 0; i < C * hw; ++i)
                        mean_blend[i] += experts_std[e * C * hw + i];
                for (float& x : mean_blend) x *= invn;
                accumulate(mean_row, mean_blend.data());
            }
            accumulate(mowe_row, fused->data());
        }
    });

    ScoreTable table;
    table.models = m.expert_names;
    table.models.push_back("mean");
    table.models.push_back("mowe");
    for (std::size_t c = 0; c < C; ++c) table.channels.push_back(channel_label(c));
    table.leads = net.cfg.lead_hours;
    table.values.assign(n_models * C * n_leads, 0.0);
    table.channel_std = m.std_dev;
    table.dataset_hash = Sha256::hex(m.family_hash());
    table.checkpoint_id = checkpoint_id;
    table.weighting = "uniform";

    const double denom = static_cast<double>(m.n_inits) * static_cast<double>(hw);
    for (std::size_t model = 0; model < n_models; ++model)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t l = 0; l < n_leads; ++l) {
                double s = 0;
                for (std::size_t init = 0; init < m.n_inits; ++init)
                    s += partial[init][(model * C + c) * n_leads + l];
                table.cell(model, c, l) = std::sqrt(s / denom) * m.std_dev[c];
            }
    return table;
}

namespace {

/// Orthonormal basis of the sum-zero subspace of R^n (Helmert columns).
std::vector<std::vector<double>> sum_zero_basis(std::size_t n) {
    std::vector<std::vector<double>> q;
    for (std::size_t j = 1; j < n; ++j) {
        std::vector<double> v(n, 0.0);
        const double norm = std::sqrt(static_cast<double>(j) * (j + 1));
        for (std::size_t i = 0; i < j; ++i) v[i] = 1.0 / norm;
        v[j] = -static_cast<double>(j) / norm;
        q.push_back(std::move(v));
    }
    return q;
}

/// Solves the SPD system a x = b in place via Cholesky; a is row-major n x n.
void solve_spd(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    double diag_max = 0;
    for (std::size_t i = 0; i < n; ++i) diag_max = std::max(diag_max, a[i * n + i]);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (!(s > 1e-12 * diag_max))
                    throw ConfigError(
                        "oracle normal equations are singular; retry with a ridge > 0");
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
}

}  // namespace

OracleResult oracle_blend(const DatasetReader& train, const DatasetReader& test, double lambda,
                          std::size_t jobs) {
    const DatasetManifest& mtr = train.manifest();
    const DatasetManifest& mte = test.manifest();
    if (mtr.test_split || !mte.test_split)
        throw ConfigError("oracle_blend wants (train split, test split) in that order");
    if (mtr.family_hash() != mte.family_hash())
        throw ConfigError("train and test datasets are not siblings: " +
                          Sha256::hex(mtr.family_hash()) + " vs " +
                          Sha256::hex(mte.family_hash()));
    if (lambda < 0) throw ConfigError("ridge strength must be non-negative");

    const std::size_t N = mtr.n_experts, C = mtr.channels, hw = mtr.height * mtr.width;
    const std::size_t n_leads = mtr.lead_hours.size();
    const std::size_t D = N;  // N-1 weight deltas plus one bias
    const auto basis = sum_zero_basis(N);

    OracleResult result;
    result.mean_weight.assign(n_leads, std::vector<double>(N, 0.0));
    result.mean_entropy.assign(n_leads, 0.0);

    ScoreTable& table = result.table;
    table.models = {"oracle"};
    for (std::size_t c = 0; c < C; ++c) table.channels.push_back(channel_label(c));
    table.leads = mtr.lead_hours;
    table.values.assign(C * n_leads, 0.0);
    table.channel_std = mtr.std_dev;
    table.dataset_hash = Sha256::hex(mtr.family_hash());
    table.checkpoint_id = "oracle(lambda=" + std::to_string(lambda) + ")";

    const std::size_t px = C * hw;  // independent fits per lead
    std::vector<double> moments(px * (D * D + D));
    std::vector<double> theta(px * D);
    std::vector<float> truth_raw(C * hw), experts_raw(N * C * hw);

    for (std::size_t l = 0; l < n_leads; ++l) {
        std::fill(moments.begin(), moments.end(), 0.0);

        // accumulate normal equations over the training split
        for (std::size_t init = 0; init < mtr.n_inits; ++init) {
            train.read_truth(init, l, truth_raw.data());
            train.read_experts(init, l, experts_raw.data());
            parallel_for(jobs, C, [&](std::size_t c) {
                const double mu = mtr.mean[c], inv = 1.0 / mtr.std_dev[c];
                std::vector<double> e_std(N), phi(D);
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t p = c * hw + i;
                    double mean_e = 0;
                    for (std::size_t e = 0; e < N; ++e) {
                        e_std[e] = (experts_raw[(e * C + c) * hw + i] - mu) * inv;
                        mean_e += e_std[e];
                    }
                    mean_e /= static_cast<double>(N);
                    for (std::size_t j = 0; j + 1 < N; ++j) {
                        double dot = 0;
                        for (std::size_t e = 0; e < N; ++e) dot += basis[j][e] * e_std[e];
                        phi[j] = dot;
                    }
                    phi[D - 1] = 1.0;
                    const double r = (truth_raw[p] - mu) * inv - mean_e;
                    double* mom = moments.data() + p * (D * D + D);
                    for (std::size_t a = 0; a < D; ++a) {
                        for (std::size_t b = 0; b <= a; ++b) mom[a * D + b] += phi[a] * phi[b];
                        mom[D * D + a] += phi[a] * r;
                    }
                }
            });
        }

        // solve every pixel's ridge system
        parallel_for(jobs, C, [&](std::size_t c) {
            std::vector<double> a(D * D), b(D);
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t p = c * hw + i;
                const double* mom = moments.data() + p * (D * D + D);
                for (std::size_t x = 0; x < D; ++x)
                    for (std::size_t y = 0; y < D; ++y)
                        a[x * D + y] = mom[std::max(x, y) * D + std::min(x, y)];
                for (std::size_t x = 0; x < D; ++x) {
                    a[x * D + x] += lambda;
                    b[x] = mom[D * D + x];
                }
                solve_spd(a, b, D);
                std::copy(b.begin(), b.end(), theta.data() + p * D);
            }
        });

        // fitted-weight diagnostics
        {
            std::vector<double> wsum(N, 0.0);
            double esum = 0;
            for (std::size_t p = 0; p < px; ++p) {
                const double* th = theta.data() + p * D;
                double w[16];  // N is small
                double clipped[16], csum = 0;
                for (std::size_t e = 0; e < N; ++e) {
                    w[e] = 1.0 / static_cast<double>(N);
                    for (std::size_t j = 0; j + 1 < N; ++j) w[e] += basis[j][e] * th[j];
                    wsum[e] += w[e];
                    clipped[e] = std::max(w[e], 1e-6);
                    csum += clipped[e];
                }
                double h = 0;
                for (std::size_t e = 0; e < N; ++e) {
                    const double pe = clipped[e] / csum;
                    h -= pe * std::log(pe);
                }
                esum += h;
            }
            for (std::size_t e = 0; e < N; ++e)
                result.mean_weight[l][e] = wsum[e] / static_cast<double>(px);
            result.mean_entropy[l] = esum / static_cast<double>(px);
        }

        // score on the test split
        std::vector<double> sse(C, 0.0);
        for (std::size_t init = 0; init < mte.n_inits; ++init) {
            test.read_truth(init, l, truth_raw.data());
            test.read_experts(init, l, experts_raw.data());
            for (std::size_t c = 0; c < C; ++c) {
                const double mu = mte.mean[c], inv = 1.0 / mte.std_dev[c];
                std::vector<double> e_std(N);
                double local = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t p = c * hw + i;
                    double mean_e = 0;
                    for (std::size_t e = 0; e < N; ++e) {
                        e_std[e] = (experts_raw[(e * C + c) * hw + i] - mu) * inv;
                        mean_e += e_std[e];
                    }
                    mean_e /= static_cast<double>(N);
                    const double* th = theta.data() + p * D;
                    double pred = mean_e + th[D - 1];
                    for (std::size_t j = 0; j + 1 < N; ++j) {
                        double dot = 0;
                        for (std::size_t e = 0; e < N; ++e) dot += basis[j][e] * e_std[e];
                        pred += th[j] * dot;
                    }
                    const double d = pred - (truth_raw[p] - mu) * inv;
                    local += d * d;
                }
                sse[c] += local;
            }
        }
        const double denom = static_cast<double>(mte.n_inits) * static_cast<double>(hw);
        for (std::size_t c = 0; c < C; ++c)
            table.cell(0, c, l) = std::sqrt(sse[c] / denom) * mte.std_dev[c];
    }
    return result;
}

std::vector<WeightSummary> export_weight_maps(const GateNet<float>& net,
                                              const DatasetReader& data, std::size_t init,
                                              const std::vector<std::uint32_t>& leads,
                                              const std::string& out_prefix) {
    const DatasetManifest& m = data.manifest();
    if (init >= m.n_inits)
        throw ConfigError("init " + std::to_string(init) + " out of range [0, " +
                          std::to_string(m.n_inits) + ")");
    const std::size_t N = m.n_experts, C = m.channels, hw = m.height * m.width;

    std::vector<WeightSummary> summaries;
    std::ostringstream summary_text;
    summary_text << "# weight-map export: init " << init << "\n";
    summary_text << "# columns: lead_hours";
    for (const auto& name : m.expert_names) summary_text << " mean_w(" << name << ")";
    summary_text << " mean_entropy\n";

    std::vector<float> truth_raw(C * hw), experts_raw(N * C * hw), experts_std(N * C * hw);
    for (std::uint32_t lead : leads) {
        const std::size_t li = data.lead_index(lead);
        data.read_truth(init, li, truth_raw.data());
        data.read_experts(init, li, experts_raw.data());
        for (std::size_t c = 0; c < C; ++c) {
            const double mu = m.mean[c], inv = 1.0 / m.std_dev[c];
            for (std::size_t e = 0; e < N; ++e)
                for (std::size_t i = 0; i < hw; ++i)
                    experts_std[(e * C + c) * hw + i] =
                        static_cast<float>((experts_raw[(e * C + c) * hw + i] - mu) * inv);
        }
        Tape<float> tape;
        Var<float> ex =
            tape.leaf(Tensor<float>({N, C, m.height, m.width}, experts_std));
        GateOutput<float> out = net.forward(tape, ex, lead, nullptr);
        Var<float> weights = normalize_weights(tape, out.expert_logits);

        const std::string stem =
            out_prefix + "_init" + std::to_string(init) + "_lead" + std::to_string(lead);
        atomic_write(stem + "_weights.f32", weights->data(), N * C * hw * 4);
        atomic_write(stem + "_bias.f32", out.bias_field->data(), C * hw * 4);
        {
            std::ostringstream dims;
            dims << "weights " << N << " " << C << " " << m.height << " " << m.width << "\n";
            dims << "bias " << C << " " << m.height << " " << m.width << "\n";
            dims << "dtype f32 little-endian row-major\n";
            const std::string d = dims.str();
            atomic_write(stem + ".dims", d.data(), d.size());
        }

        WeightSummary ws;
        ws.lead_hours = lead;
        ws.mean_weight.assign(N, 0.0);
        double esum = 0;
        const float* wv = weights->data();
        for (std::size_t i = 0; i < C * hw; ++i) {
            double h = 0;
            for (std::size_t e = 0; e < N; ++e) {
                const double w = wv[e * C * hw + i];
                ws.mean_weight[e] += w;
                if (w > 0) h -= w * std::log(w);
            }
            esum += h;
        }
        for (double& x : ws.mean_weight) x /= static_cast<double>(C * hw);
        ws.mean_entropy = esum / static_cast<double>(C * hw);
        summaries.push_back(ws);

        summary_text << lead;
        summary_text.precision(6);
        for (double x : ws.mean_weight) summary_text << " " << x;
        summary_text << " " << ws.mean_entropy << "\n";
    }
    const std::string text = summary_text.str();
    atomic_write(out_prefix + "_summary.txt", text.data(), text.size());
    return summaries;
}

}  // namespace mowe
