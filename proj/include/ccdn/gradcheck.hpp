#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "ccdn/rng.hpp"
#include "ccdn/tape.hpp"

namespace ccdn {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradcheckOptions {
    double eps = 1e-5;
    double tol = 1e-4;
    // Entries probed per input; 0 probes every entry.
    std::size_t max_probes = 0;
    std::uint64_t seed = 0;
};

struct GradcheckReport {
    // Per input: max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf, 1e-7).
    std::vector<double> max_rel_error;
    double tol = 0.0;

    double worst() const {
        return max_rel_error.empty() ? 0.0 : *std::max_element(max_rel_error.begin(), max_rel_error.end());
    }
    bool passed() const { return worst() < tol; }
};

/// Compares tape gradients of the scalar `f(inputs)` against central differences. Inputs are
/// deep-copied; `f` must be deterministic.
inline GradcheckReport gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, GradcheckOptions opt = {}) {
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(t.detach().set_requires_grad(true));

    GradientMap grads;
    {
        GradientTape tape;
        const Tensor loss = f(leaves);
        grads = tape.backward(loss);
    }

    auto eval = [&] {
        NoGradScope no_grad;
        return f(leaves).item();
    };

    GradcheckReport report;
    report.tol = opt.tol;
    Rng rng = make_stream(opt.seed, "gradcheck");
    for (auto& leaf : leaves) {
        const Tensor analytic = grads(leaf);
        std::vector<std::size_t> probes(leaf.numel());
        std::iota(probes.begin(), probes.end(), std::size_t{0});
        if (opt.max_probes && probes.size() > opt.max_probes) {
            std::shuffle(probes.begin(), probes.end(), rng);
            probes.resize(opt.max_probes);
        }
        double max_a = 0.0, max_n = 0.0, max_diff = 0.0;
        for (double a : analytic.values()) max_a = std::max(max_a, std::abs(a));
        auto vals = leaf.mutable_values();
        for (std::size_t i : probes) {
            const double orig = vals[i];
            vals[i] = orig + opt.eps;
            const double up = eval();
            vals[i] = orig - opt.eps;
            const double down = eval();
            vals[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.eps);
            max_n = std::max(max_n, std::abs(numeric));
            max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
        }
        report.max_rel_error.push_back(max_diff / std::max({max_a, max_n, 1e-7}));
    }
    return report;
}

}  // namespace ccdn
