#include "mowe/gradcheck_suite.hpp"

#include <mutex>

#include "mowe/fusion.hpp"
#include "mowe/gate.hpp"
#include "mowe/parallel.hpp"

namespace mowe {

namespace {

template <typename T>
Tensor<T> randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return Tensor<T>::randn(std::move(shape), rng, scale);
}

GateConfig shrunken_gate_config() {
    GateConfig cfg;
    cfg.n_experts = 2;
    cfg.channels = 1;
    cfg.height = 8;
    cfg.width = 8;
    cfg.patch = 4;
    cfg.hidden = 16;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2.0;
    cfg.lead_hours = {6, 12, 24};
    return cfg;
}

/// Worst finite-difference error of `fn` over `seeds` seeds, parallel over
/// jobs; the per-seed maximum reduction is order-free.
template <typename MakePoint, typename Fn>
double max_over_seeds(std::size_t seeds, std::size_t jobs, MakePoint&& make_point, Fn&& fn) {
    std::vector<double> errs(seeds, 0.0);
    parallel_for(jobs, seeds, [&](std::size_t seed) {
        errs[seed] = grad_check(fn, make_point(seed), 1e-5).max_rel_err;
    });
    double worst = 0;
    for (double e : errs) worst = std::max(worst, e);
    return worst;
}

}  // namespace

std::vector<KernelCheckResult> run_gradcheck_suite(
    bool full, std::size_t jobs,
    const std::function<void(const KernelCheckResult&)>& on_result) {
    const std::size_t seeds = full ? 20 : 5;
    std::vector<KernelCheckResult> results;
    auto push = [&](const std::string& name, double err, double tol = 1e-4) {
        KernelCheckResult r{name, err, tol};
        results.push_back(r);
        if (on_result) on_result(r);
    };

    push("sum_of_squares",
         max_over_seeds(
             seeds, jobs,
             [](std::uint64_t s) {
                 return std::vector<Tensor<double>>{randn<double>({11}, seed_of(s, 1))};
             },
             [](auto& t, const auto& l) { return sum(t, mul(t, l[0], l[0])); }),
         1e-8);

    push("matmul", max_over_seeds(
                       seeds, jobs,
                       [](std::uint64_t s) {
                           return std::vector<Tensor<double>>{
                               randn<double>({3, 4}, seed_of(s, 2)),
                               randn<double>({4, 5}, seed_of(s, 3))};
                       },
                       [](auto& t, const auto& l) {
                           auto c = matmul(t, l[0], l[1]);
                           return sum(t, mul(t, c, c));
                       }));

    push("layer_norm",
         max_over_seeds(
             seeds, jobs,
             [](std::uint64_t s) {
                 return std::vector<Tensor<double>>{randn<double>({3, 6}, seed_of(s, 4)),
                                                    randn<double>({6}, seed_of(s, 5)),
                                                    randn<double>({6}, seed_of(s, 6))};
             },
             [](auto& t, const auto& l) {
                 auto y = layer_norm(t, l[0], l[1], l[2], 1e-5);
                 return sum(t, mul(t, y, y));
             }),
         1e-6);

    push("softmax", max_over_seeds(
                        seeds, jobs,
                        [](std::uint64_t s) {
                            return std::vector<Tensor<double>>{
                                randn<double>({3, 5}, seed_of(s, 7), 2.0),
                                randn<double>({3, 5}, seed_of(s, 8))};
                        },
                        [](auto& t, const auto& l) {
                            return sum(t, mul(t, softmax(t, l[0], 1), l[1]));
                        }));

    push("gelu", max_over_seeds(
                     seeds, jobs,
                     [](std::uint64_t s) {
                         return std::vector<Tensor<double>>{
                             randn<double>({9}, seed_of(s, 9), 2.0)};
                     },
                     [](auto& t, const auto& l) { return sum(t, gelu(t, l[0])); }));

    push("attention", max_over_seeds(
                          seeds, jobs,
                          [](std::uint64_t s) {
                              return std::vector<Tensor<double>>{
                                  randn<double>({4, 6}, seed_of(s, 10)),
                                  randn<double>({4, 6}, seed_of(s, 11)),
                                  randn<double>({4, 6}, seed_of(s, 12))};
                          },
                          [](auto& t, const auto& l) {
                              auto o = attention(t, l[0], l[1], l[2], 2);
                              return sum(t, mul(t, o, o));
                          }));

    push("patchify_unpatchify",
         max_over_seeds(
             seeds, jobs,
             [](std::uint64_t s) {
                 return std::vector<Tensor<double>>{randn<double>({2, 4, 4}, seed_of(s, 13))};
             },
             [](auto& t, const auto& l) {
                 auto tok = patchify(t, l[0], 2);
                 auto back = unpatchify(t, tok, 2, 4, 4);
                 return sum(t, mul(t, back, l[0]));
             }));

    push("fusion", max_over_seeds(
                       seeds, jobs,
                       [](std::uint64_t s) {
                           return std::vector<Tensor<double>>{
                               randn<double>({3, 2, 4, 4}, seed_of(s, 14)),
                               randn<double>({3, 2, 4, 4}, seed_of(s, 15)),
                               randn<double>({2, 4, 4}, seed_of(s, 16)),
                               randn<double>({2, 4, 4}, seed_of(s, 17))};
                       },
                       [](auto& t, const auto& l) {
                           auto w = normalize_weights(t, l[0]);
                           auto fused = fuse(t, l[1], w, l[2]);
                           return mse_loss(t, fused, l[3]);
                       }));

    // end-to-end: gate + softmax weights + blend + mse on a shrunken config
    {
        const GateConfig cfg = shrunken_gate_config();
        std::vector<double> seed_errs(seeds, 0.0);
        parallel_for(jobs, seeds, [&](std::uint64_t s) {
            GateNet<double> net(cfg, seed_of(s, 100));
            GateNet<long double> net_wide(cfg, seed_of(s, 100));
            GateNet<__float128> net_quad(cfg, seed_of(s, 100));
            Rng perturb(seed_of(s, 101));
            for (auto& p : net.params)
                for (double& x : *p.data) x += 0.25 * perturb.normal();
            Tensor<double> experts = randn<double>({2, 1, 8, 8}, seed_of(s, 102));
            Tensor<double> truth = randn<double>({1, 8, 8}, seed_of(s, 103));
            const double lead = cfg.lead_hours[s % cfg.lead_hours.size()];

            std::vector<Tensor<double>> point;
            for (const auto& p : net.params) point.emplace_back(p.shape, *p.data);

            auto fn = [&](auto& tape, const auto& leaves) {
                using S = typename std::remove_reference_t<decltype(*leaves[0]->val)>::value_type;
                Tensor<S> ex_t(experts.shape), tr_t(truth.shape);
                for (std::size_t i = 0; i < experts.numel(); ++i) ex_t.v[i] = experts.v[i];
                for (std::size_t i = 0; i < truth.numel(); ++i) tr_t.v[i] = truth.v[i];
                Var<S> ex = tape.leaf(std::move(ex_t));
                GateOutput<S> out = [&] {
                    if constexpr (std::is_same_v<S, double>)
                        return net.forward_with(tape, ex, lead, nullptr, leaves);
                    else if constexpr (std::is_same_v<S, long double>)
                        return net_wide.forward_with(tape, ex, lead, nullptr, leaves);
                    else
                        return net_quad.forward_with(tape, ex, lead, nullptr, leaves);
                }();
                Var<S> w = normalize_weights(tape, out.expert_logits);
                Var<S> fused = fuse(tape, ex, w, out.bias_field);
                return mse_loss(tape, fused, tape.leaf(std::move(tr_t)));
            };
            seed_errs[s] = grad_check(fn, std::move(point), 1e-5).max_rel_err;
        });
        double worst = 0;
        for (double e : seed_errs) worst = std::max(worst, e);
        push("gate_fusion_mse_composite", worst);
    }

    return results;
}

}  // namespace mowe
