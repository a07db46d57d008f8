#include "mowe/training.hpp"

#include <cmath>

#include "mowe/fusion.hpp"
#include "mowe/parallel.hpp"

namespace mowe {

void TrainConfig::validate() const {
    gate.validate();
    if (steps < 1) throw ConfigError("training needs at least 1 step");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (grad_clip && !(clip_norm > 0)) throw ConfigError("clip norm must be positive");
    if (out_path.empty()) throw ConfigError("training needs an output checkpoint path");
}

namespace {

void check_dims(const GateConfig& g, const DatasetManifest& m) {
    if (m.test_split)
        throw ConfigError("refusing to train on a test-split dataset");
    if (g.n_experts != m.n_experts || g.channels != m.channels || g.height != m.height ||
        g.width != m.width)
        throw ConfigError("gate dims (" + std::to_string(g.n_experts) + " experts, " +
                          std::to_string(g.channels) + "x" + std::to_string(g.height) + "x" +
                          std::to_string(g.width) + ") do not match dataset (" +
                          std::to_string(m.n_experts) + " experts, " +
                          std::to_string(m.channels) + "x" + std::to_string(m.height) + "x" +
                          std::to_string(m.width) + ")");
    if (g.lead_hours != m.lead_hours)
        throw ConfigError("gate lead set does not match the dataset lead set");
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetReader& data,
                  const std::function<void(std::size_t, double)>& on_step) {
    cfg.validate();
    const DatasetManifest& m = data.manifest();
    check_dims(cfg.gate, m);

    GateNet<float> net(cfg.gate, cfg.seed);
    AdamState<float> adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.eps;

    Rng batch_rng(seed_of(cfg.seed, 0x62617463686573ULL));
    const std::size_t n_params = net.params.size();
    const std::size_t B = cfg.batch_size;
    const std::size_t jobs = cfg.deterministic ? 1 : std::max<std::size_t>(1, cfg.jobs);
    const std::size_t fv = m.field_values();
    const std::size_t ev = m.n_experts * fv;
    const Shape expert_shape{m.n_experts, m.channels, m.height, m.width};
    const Shape truth_shape{m.channels, m.height, m.width};

    std::vector<std::vector<float>> master(n_params);
    for (std::size_t i = 0; i < n_params; ++i)
        master[i].resize(net.params[i].data->size());

    std::vector<float> losses;
    losses.reserve(cfg.steps);

    const std::array<std::uint8_t, 32> data_hash = m.family_hash();

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Batch batch = sample_batch(data, B, batch_rng);

        std::vector<double> sample_loss(B, 0.0);
        std::vector<std::vector<Var<float>>> sample_leaves(B);

        parallel_for(jobs, B, [&](std::size_t s) {
            Tape<float> tape;
            Tensor<float> ex(expert_shape,
                             std::vector<float>(batch.experts.begin() + s * ev,
                                                batch.experts.begin() + (s + 1) * ev));
            Tensor<float> tr(truth_shape,
                             std::vector<float>(batch.truth.begin() + s * fv,
                                                batch.truth.begin() + (s + 1) * fv));
            Var<float> experts = tape.leaf(std::move(ex));
            std::vector<Var<float>> bound;
            GateOutput<float> out =
                net.forward(tape, experts, batch.lead_hours[s], nullptr, &bound);
            Var<float> weights = normalize_weights(tape, out.expert_logits);
            Var<float> fused = fuse(tape, experts, weights, out.bias_field);
            Var<float> loss = mse_loss(tape, fused, tape.leaf(std::move(tr)));
            tape.backward(loss);
            sample_loss[s] = loss->data()[0];
            sample_leaves[s] = std::move(bound);
        });

        // fixed-order reduction keeps results identical for any worker count
        double loss_mean = 0;
        for (std::size_t s = 0; s < B; ++s) loss_mean += sample_loss[s];
        loss_mean /= static_cast<double>(B);
        if (!std::isfinite(loss_mean))
            throw InternalError("non-finite loss at step " + std::to_string(step));

        const float inv_b = 1.0f / static_cast<float>(B);
        for (std::size_t i = 0; i < n_params; ++i) {
            std::vector<float>& g = master[i];
            std::fill(g.begin(), g.end(), 0.0f);
            for (std::size_t s = 0; s < B; ++s) {
                const std::vector<float>& sg = sample_leaves[s][i]->grad;
                if (sg.empty()) continue;
                for (std::size_t j = 0; j < g.size(); ++j) g[j] += sg[j];
            }
            for (float& x : g) x *= inv_b;
        }
        sample_leaves.clear();
        sample_leaves.resize(B);

        if (cfg.grad_clip) {
            double norm2 = 0;
            for (const auto& g : master)
                for (float x : g) norm2 += static_cast<double>(x) * x;
            const double norm = std::sqrt(norm2);
            if (norm > cfg.clip_norm) {
                const float scale = static_cast<float>(cfg.clip_norm / norm);
                for (auto& g : master)
                    for (float& x : g) x *= scale;
            }
        }

        std::vector<std::vector<float>*> params(n_params);
        std::vector<const std::vector<float>*> grads(n_params);
        for (std::size_t i = 0; i < n_params; ++i) {
            params[i] = net.params[i].data.get();
            grads[i] = &master[i];
        }
        adam.step(std::span<std::vector<float>* const>(params.data(), n_params),
                  std::span<const std::vector<float>* const>(grads.data(), n_params));

        losses.push_back(static_cast<float>(loss_mean));
        if (on_step) on_step(step, loss_mean);

        if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 &&
            step + 1 < cfg.steps) {
            Checkpoint mid = Checkpoint::snapshot(net, adam, step + 1, data_hash, losses);
            save_checkpoint(cfg.out_path + ".step" + std::to_string(step + 1), mid);
        }
    }

    TrainResult result;
    result.checkpoint = Checkpoint::snapshot(net, adam, cfg.steps, data_hash, losses);
    result.losses = std::move(losses);
    save_checkpoint(cfg.out_path, result.checkpoint);
    return result;
}

}  // namespace mowe
