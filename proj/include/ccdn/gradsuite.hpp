#pragma once

// Finite-difference sweep over every differentiable primitive and the composed chains. Each case
// draws fresh random inputs per trial and reduces its output to a scalar with fixed random weights.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "ccdn/backbone.hpp"
#include "ccdn/gradcheck.hpp"

namespace ccdn {

struct GradCase {
    std::string name;
    double tol = 1e-4;
    std::size_t max_probes = 0;  // per input; 0 probes everything
    double eps = 1e-5;
    // Builds the function and its inputs for one trial.
    std::function<std::pair<ScalarFn, std::vector<Tensor>>(Rng&)> build;
};

struct GradCaseResult {
    std::string name;
    std::size_t trials = 0;
    double worst = 0.0;
    double tol = 0.0;
    double seconds = 0.0;
    bool passed() const { return worst < tol; }
};

namespace detail {

inline Tensor random_normal(const Shape& dims, Rng& rng, double sigma = 1.0) {
    std::vector<double> v(numel(dims));
    for (double& x : v) x = gaussian(rng, 0.0, sigma);
    return Tensor(dims, std::move(v));
}

inline Tensor random_positive(const Shape& dims, Rng& rng, double lo, double hi) {
    std::vector<double> v(numel(dims));
    for (double& x : v) x = uniform(rng, lo, hi);
    return Tensor(dims, std::move(v));
}

/// Symmetric positive definite with eigenvalues spread over roughly [0.5, 2].
inline Tensor random_spd(std::size_t d, Rng& rng) {
    const Tensor a = random_normal({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> v(d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = i == j ? 0.5 : 0.0;
            for (std::size_t k = 0; k < d; ++k) s += a[i * d + k] * a[j * d + k];
            v[i * d + j] = s;
        }
    return Tensor({d, d}, std::move(v));
}

/// sum(op(x) * w) with w drawn once per trial.
inline std::pair<ScalarFn, std::vector<Tensor>> projected(std::function<Tensor(const std::vector<Tensor>&)> op,
                                                          std::vector<Tensor> inputs, Rng& rng) {
    Shape out_dims;
    {
        NoGradScope off;
        out_dims = op(inputs).dims();
    }
    const Tensor w = random_normal(out_dims, rng);
    return {[op, w](const std::vector<Tensor>& x) { return sum(mul(op(x), w)); }, std::move(inputs)};
}

/// Builds a case from input shapes; every input is standard normal.
inline GradCase unary_case(std::string name, std::vector<Shape> shapes,
                           std::function<Tensor(const std::vector<Tensor>&)> op, double tol = 1e-4) {
    return {std::move(name), tol, 0, 1e-5, [shapes, op](Rng& rng) {
                std::vector<Tensor> in;
                for (const auto& s : shapes) in.push_back(random_normal(s, rng));
                return projected(op, std::move(in), rng);
            }};
}

inline ModelConfig tiny_model_config() {
    ModelConfig c;
    c.stacks = 2;
    c.channels = 8;
    c.excitations = 2;
    c.input_size = 32;
    c.landmarks = 3;
    c.hourglass_depth = 1;
    c.variant = Variant::ccdn;
    return c;
}

}  // namespace detail

/// Every case of the suite. Paths through the Newton-Schulz square root use tolerance 1e-3.
inline std::vector<GradCase> gradient_cases() {
    using detail::random_normal;
    using detail::unary_case;
    using In = std::vector<Tensor>;
    std::vector<GradCase> cases;

    cases.push_back(unary_case("add", {{3, 4}, {3, 4}}, [](const In& x) { return add(x[0], x[1]); }));
    cases.push_back(unary_case("sub", {{3, 4}, {3, 4}}, [](const In& x) { return sub(x[0], x[1]); }));
    cases.push_back(unary_case("mul", {{3, 4}, {3, 4}}, [](const In& x) { return mul(x[0], x[1]); }));
    cases.push_back({"div", 1e-4, 0, 1e-5, [](Rng& rng) {
                         In in{random_normal({3, 4}, rng), detail::random_positive({3, 4}, rng, 0.5, 2.0)};
                         return detail::projected([](const In& x) { return div(x[0], x[1]); }, std::move(in), rng);
                     }});
    cases.push_back({"sqrt", 1e-4, 0, 1e-5, [](Rng& rng) {
                         In in{detail::random_positive({3, 4}, rng, 0.5, 2.0)};
                         return detail::projected([](const In& x) { return ccdn::sqrt(x[0]); }, std::move(in), rng);
                     }});
    cases.push_back(unary_case("scale", {{3, 4}}, [](const In& x) { return scale(add_scalar(x[0], 0.3), -1.7); }));
    cases.push_back(unary_case("relu", {{2, 3, 4, 4}}, [](const In& x) { return relu(x[0]); }));
    cases.push_back(unary_case("sigmoid", {{2, 3, 4, 4}}, [](const In& x) { return sigmoid(x[0]); }));
    cases.push_back(unary_case("reshape", {{2, 3, 4}}, [](const In& x) { return reshape(x[0], {6, 4}); }));
    cases.push_back(unary_case("matmul", {{2, 3, 4}, {2, 4, 5}}, [](const In& x) { return matmul(x[0], x[1]); }));
    cases.push_back(unary_case("transpose", {{2, 3, 4}}, [](const In& x) { return transpose(x[0]); }));
    cases.push_back(unary_case("linear", {{2, 6}, {3, 6}, {3}}, [](const In& x) { return linear(x[0], x[1], x[2]); }));
    cases.push_back(unary_case("diag", {{4, 4}}, [](const In& x) { return diag(x[0]); }));
    cases.push_back(unary_case("trace", {{2, 4, 4}}, [](const In& x) { return trace(x[0]); }));
    cases.push_back(unary_case("scale_items", {{2, 3, 3}, {2}}, [](const In& x) { return scale_items(x[0], x[1]); }));
    cases.push_back(unary_case("add_identity", {{2, 3, 3}}, [](const In& x) { return add_identity(x[0], 0.7); }));
    cases.push_back(unary_case("add_scaled_identity", {{2, 3, 3}, {2}},
                               [](const In& x) { return add_scaled_identity(x[0], x[1]); }));
    cases.push_back(unary_case("mean_last", {{2, 3, 5}}, [](const In& x) { return mean_last(x[0]); }));
    cases.push_back(unary_case("mean_first", {{4, 3}}, [](const In& x) { return mean_first(x[0]); }));
    cases.push_back(unary_case("stack", {{3, 2}, {3, 2}}, [](const In& x) { return stack({x[0], x[1]}); }));
    cases.push_back(unary_case("l2_normalize_rows", {{3, 6}}, [](const In& x) { return l2_normalize_rows(x[0]); }));
    cases.push_back(unary_case("conv2d", {{2, 3, 6, 6}, {4, 3, 3, 3}}, [](const In& x) { return conv2d(x[0], x[1], 1, 1); }));
    cases.push_back(
        unary_case("conv2d_stride2", {{2, 3, 7, 7}, {2, 3, 3, 3}}, [](const In& x) { return conv2d(x[0], x[1], 2, 1); }));
    cases.push_back(unary_case("deconv2d_k2", {{2, 3, 3, 3}, {3, 2, 2, 2}}, [](const In& x) { return deconv2d(x[0], x[1]); }));
    cases.push_back(unary_case("deconv2d_k4", {{2, 3, 3, 3}, {3, 2, 4, 4}}, [](const In& x) { return deconv2d(x[0], x[1]); }));
    cases.push_back(unary_case("batchnorm_train", {{3, 4, 3, 3}, {4}, {4}}, [](const In& x) {
        auto st = BatchNormState::fresh(4);
        return batchnorm(x[0], x[1], x[2], st, Mode::train);
    }));
    cases.push_back(unary_case("batchnorm_eval", {{3, 4, 3, 3}, {4}, {4}}, [](const In& x) {
        auto st = BatchNormState::fresh(4);
        return batchnorm(x[0], x[1], x[2], st, Mode::eval);
    }));
    cases.push_back(unary_case("gap", {{2, 3, 4, 5}}, [](const In& x) { return gap(x[0]); }));
    cases.push_back(unary_case("avg_pool2", {{2, 3, 4, 6}}, [](const In& x) { return avg_pool2(x[0]); }));
    cases.push_back(unary_case("upsample2", {{2, 3, 3, 2}}, [](const In& x) { return upsample2(x[0]); }));
    cases.push_back(unary_case("channel_scale", {{2, 3, 4, 4}, {2, 3}}, [](const In& x) { return channel_scale(x[0], x[1]); }));
    cases.push_back(unary_case("concat_channels", {{2, 3, 2, 2}, {2, 1, 2, 2}},
                               [](const In& x) { return concat_channels({x[0], x[1]}); }));
    cases.push_back(unary_case("covariance", {{2, 4, 9}}, [](const In& x) { return covariance(x[0]); }));
    cases.push_back({"newton_schulz_sqrt", 1e-3, 0, 1e-5, [](Rng& rng) {
                         In in{detail::random_spd(4, rng)};
                         return detail::projected([](const In& x) { return newton_schulz_sqrt(x[0], 5); }, std::move(in),
                                                  rng);
                     }});
    cases.push_back(
        unary_case("second_order_squeeze", {{2, 8, 3, 3}}, [](const In& x) { return second_order_squeeze(x[0]); }, 1e-3));

    cases.push_back({"ctm_forward", 1e-3, 0, 1e-5, [](Rng& rng) {
                         const ExcitationBank bank = ExcitationBank::random(8, 2, true, rng);
                         In in{random_normal({2, 8, 3, 3}, rng)};
                         for (const auto* v : {&bank.first, &bank.second})
                             for (const auto& w : *v) {
                                 in.push_back(w.squeeze);
                                 in.push_back(w.expand);
                             }
                         auto op = [](const In& x) {
                             ExcitationBank b = ExcitationBank::zeros(8, 2, true);
                             std::size_t k = 1;
                             for (auto* v : {&b.first, &b.second})
                                 for (auto& w : *v) {
                                     w.squeeze = x[k++];
                                     w.expand = x[k++];
                                 }
                             return concat_channels(ctm_forward(x[0], b).maps);
                         };
                         return detail::projected(op, std::move(in), rng);
                     }});
    cases.push_back({"cocs_chain", 1e-4, 0, 1e-5, [](Rng& rng) {
                         In in;
                         for (int p = 0; p < 3; ++p) in.push_back(random_normal({3, 4, 2, 2}, rng));
                         // Shift so pooled features stay away from the zero-norm guard.
                         auto op = [](const In& x) {
                             std::vector<Tensor> maps;
                             for (const auto& t : x) maps.push_back(add_scalar(t, 1.0));
                             return cross_semantic_loss(excitation_correlations(pool_normalize(maps)));
                         };
                         return std::pair<ScalarFn, In>{op, std::move(in)};
                     }});
    cases.push_back({"cff_fuse", 1e-4, 0, 1e-5, [](Rng& rng) {
                         CffParams p = CffParams::random(4, 2, rng);
                         In in{random_normal({2, 4, 2, 2}, rng), random_normal({2, 4, 4, 4}, rng), p.reduce, p.upsample,
                               p.smooth, p.gamma, p.beta};
                         auto op = [](const In& x) {
                             CffParams c;
                             c.reduce = x[2];
                             c.upsample = x[3];
                             c.smooth = x[4];
                             c.gamma = x[5];
                             c.beta = x[6];
                             c.bn = BatchNormState::fresh(4);
                             return cff_fuse(x[0], x[1], c, Mode::train);
                         };
                         return detail::projected(op, std::move(in), rng);
                     }});
    // The full network is only piecewise smooth (relu); a smaller step keeps probes from straddling
    // a kink, which would otherwise show up as a spurious finite-difference error.
    cases.push_back({"ccdn_tiny_objective", 1e-3, 3, 1e-6, [](Rng& rng) {
                         const ModelConfig cfg = detail::tiny_model_config();
                         auto model = std::make_shared<ModelParams>(init_model(cfg, rng()));
                         const std::size_t b = 3;
                         In in{detail::random_positive({b, 1, cfg.input_size, cfg.input_size}, rng, 0.0, 1.0),
                               detail::random_positive({b, 2 * cfg.landmarks}, rng, 0.2, 0.8)};
                         for (auto& t : trainable_parameters(*model)) in.push_back(t);
                         auto op = [model](const In& x) {
                             ModelParams m = *model;
                             std::size_t k = 2;
                             for_each_tensor(m, [&](const std::string&, Tensor& t, bool trainable) {
                                 if (trainable) t = x[k++];
                             });
                             return batch_objective(x[0], x[1], m, LossWeights{}, Mode::train).objective;
                         };
                         return std::pair<ScalarFn, In>{op, std::move(in)};
                     }});
    return cases;
}

/// Runs `trials` random draws of one case; the report keeps the worst relative error seen.
inline GradCaseResult run_grad_case(const GradCase& c, std::size_t trials, std::uint64_t seed = 0) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCaseResult r{c.name, trials, 0.0, c.tol, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng = make_stream(seed, c.name, t);
        auto [fn, inputs] = c.build(rng);
        GradcheckOptions opt;
        opt.tol = c.tol;
        opt.max_probes = c.max_probes;
        opt.eps = c.eps;
        opt.seed = seed + t;
        r.worst = std::max(r.worst, gradcheck(fn, inputs, opt).worst());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline std::vector<GradCaseResult> run_gradient_suite(std::size_t trials, std::uint64_t seed = 0) {
    std::vector<GradCaseResult> out;
    for (const auto& c : gradient_cases()) out.push_back(run_grad_case(c, trials, seed));
    return out;
}

}  // namespace ccdn
