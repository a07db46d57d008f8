#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mowe/adam.hpp"
#include "mowe/gate.hpp"

namespace mowe {

/// Serialized training state (magic "MOWECKPT"). Tensor order is the
/// network's construction order; loading validates every name and shape
/// against the architecture implied by the embedded config.
struct Checkpoint {
    std::uint32_t version = 1;
    GateConfig config;
    std::uint64_t step = 0;
    std::array<std::uint8_t, 32> dataset_hash{};
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    double adam_lr = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<std::pair<std::string, Tensor<float>>> adam_tensors;  // m.*, v.*
    std::vector<float> loss_history;

    static Checkpoint snapshot(const GateNet<float>& net, const AdamState<float>& adam,
                               std::uint64_t step, const std::array<std::uint8_t, 32>& data_hash,
                               std::vector<float> losses);
    /// Rebuilds the network and optimizer state this checkpoint captured.
    void restore(GateNet<float>& net, AdamState<float>* adam) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Header dump for `inspect`.
std::string checkpoint_summary(const Checkpoint& ckpt);

}  // namespace mowe
