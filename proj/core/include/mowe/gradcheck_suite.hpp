#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mowe/gradcheck.hpp"

namespace mowe {

struct KernelCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool passed() const { return max_rel_err < tolerance; }
};

/// Finite-difference verification of every kernel and of the full
/// gate + fusion + MSE composite (on a shrunken gate). `full` runs 20 seeds
/// per entry, the quick mode 5. Seeds run in parallel over `jobs` workers;
/// results are independent of the worker count.
std::vector<KernelCheckResult> run_gradcheck_suite(
    bool full, std::size_t jobs,
    const std::function<void(const KernelCheckResult&)>& on_result = nullptr);

}  // namespace mowe
