#pragma once

#include <string>
#include <vector>

#include "mowe/autodiff.hpp"
#include "mowe/kernels.hpp"

namespace mowe {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Central finite differences against the reverse-mode gradient. The analytic
/// gradient runs in the 64-bit verification mode. The difference quotient
/// uses a Richardson-extrapolated central stencil (base step epsilon, inner
/// step epsilon/2) so its truncation term stays below the error formula's
/// absolute floor, and is evaluated in extended precision; coordinates whose
/// screened error is not clearly below tolerance are re-evaluated with a
/// quad-precision stencil, which pushes the oracle's own noise to ~1e-15.
/// Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// `fn` must be callable as fn(Tape<U>&, const std::vector<Var<U>>&) -> Var<U>
/// for U in {double, long double, __float128} (a generic lambda does).
template <typename Fn>
GradCheckReport grad_check(Fn&& fn, std::vector<Tensor<double>> point, double epsilon = 1e-5) {
    // analytic pass at 64-bit
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        tape.check_finite = true;
        std::vector<Var<double>> leaves;
        leaves.reserve(point.size());
        for (const auto& t : point) leaves.push_back(tape.leaf(t, true));
        Var<double> loss = fn(tape, leaves);
        if (loss->numel() != 1)
            throw InternalError("grad_check function must be scalar-valued");
        tape.backward(loss);
        for (const auto& l : leaves) {
            l->ensure_grad();
            analytic.push_back(l->grad);
        }
    }

    auto eval = [&]<typename U>(const std::vector<Tensor<double>>& p) -> U {
        Tape<U> tape;
        tape.check_finite = true;
        std::vector<Var<U>> leaves;
        leaves.reserve(p.size());
        for (const auto& t : p) {
            Tensor<U> wide(t.shape);
            for (std::size_t i = 0; i < t.numel(); ++i) wide.v[i] = static_cast<U>(t.v[i]);
            leaves.push_back(tape.leaf(std::move(wide), false));
        }
        return static_cast<U>(fn(tape, leaves)->data()[0]);
    };

    auto stencil = [&]<typename U>(std::size_t t, std::size_t i) -> double {
        const double orig = point[t].v[i];
        const U eps = static_cast<U>(epsilon);
        point[t].v[i] = orig + epsilon;
        const U fp1 = eval.template operator()<U>(point);
        point[t].v[i] = orig - epsilon;
        const U fm1 = eval.template operator()<U>(point);
        point[t].v[i] = orig + 0.5 * epsilon;
        const U fp2 = eval.template operator()<U>(point);
        point[t].v[i] = orig - 0.5 * epsilon;
        const U fm2 = eval.template operator()<U>(point);
        point[t].v[i] = orig;
        const U d1 = (fp1 - fm1) / (U(2) * eps);
        const U d2 = (fp2 - fm2) / eps;
        return static_cast<double>((U(4) * d2 - d1) / U(3));
    };

    GradCheckReport rep;
    for (std::size_t t = 0; t < point.size(); ++t) {
        for (std::size_t i = 0; i < point[t].numel(); ++i) {
            const double a = analytic[t][i];
            double numeric = stencil.template operator()<long double>(t, i);
            auto rel_of = [&](double n) {
                return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
            };
            double rel = rel_of(numeric);
            if (rel >= 7e-5) {
                numeric = stencil.template operator()<__float128>(t, i);
                rel = rel_of(numeric);
            }
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_tensor = t;
                rep.worst_index = i;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace mowe
