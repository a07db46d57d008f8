#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mowe/checkpoint.hpp"
#include "mowe/dataset.hpp"

namespace mowe {

struct TrainConfig {
    GateConfig gate;  // problem dims must match the dataset manifest
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 8;
    std::size_t steps = 1;
    std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
    std::uint64_t seed = 0;
    bool grad_clip = false;  // opt-in global-norm clipping
    double clip_norm = 1.0;
    std::size_t jobs = 1;
    bool deterministic = false;  // forces serial sample processing
    std::string out_path;

    void validate() const;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<float> losses;
};

/// MSE training over uniformly sampled (init, lead) batches:
/// sample -> gate -> softmax weights -> blend -> loss -> backward -> adam.
/// Per-sample gradients are reduced in sample order, so results do not depend
/// on the worker count. `on_step` (optional) sees every (step, loss).
TrainResult train(const TrainConfig& cfg, const DatasetReader& data,
                  const std::function<void(std::size_t, double)>& on_step = nullptr);

}  // namespace mowe
