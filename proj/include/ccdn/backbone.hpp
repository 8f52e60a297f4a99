#pragma once

// Stacked-hourglass coordinate regressor with the cross-order attention and cross-semantic
// regularizer attached to its last two stacks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ccdn/cocs.hpp"
#include "ccdn/ctm.hpp"

namespace ccdn {

enum class Variant { baseline, fcdn, ccdn };

inline Variant parse_variant(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "fcdn") return Variant::fcdn;
    if (s == "ccdn") return Variant::ccdn;
    throw ConfigError("unknown variant '" + s + "' (expected baseline, fcdn or ccdn)");
}

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::fcdn: return "fcdn";
        case Variant::ccdn: return "ccdn";
    }
    return "?";
}

struct ModelConfig {
    std::size_t stacks = 2;
    std::size_t channels = 32;
    std::size_t excitations = 4;
    std::size_t input_size = 64;
    std::size_t image_channels = 1;
    std::size_t landmarks = 12;
    Variant variant = Variant::ccdn;
    std::size_t ns_iters = 5;
    std::size_t deconv_kernel = 2;
    std::size_t hourglass_depth = 3;

    std::size_t feature_size() const { return input_size / 4; }

    void validate() const {
        if (channels == 0 || channels % 4 != 0) throw ConfigError("model.channels must be a positive multiple of 4");
        if (input_size < 32 || (input_size & (input_size - 1)) != 0) {
            throw ConfigError("model.input_size must be a power of two >= 32");
        }
        if (stacks < 2) throw ConfigError("model.stacks must be >= 2");
        if (excitations == 0) throw ConfigError("model.excitations must be >= 1");
        if (landmarks < 2) throw ConfigError("model.landmarks must be >= 2");
        if (ns_iters == 0) throw ConfigError("model.ns_iters must be >= 1");
        if (deconv_kernel != 2 && deconv_kernel != 4) throw ConfigError("model.deconv_kernel must be 2 or 4");
        if (image_channels != 1 && image_channels != 3) throw ConfigError("model.image_channels must be 1 or 3");
        if (hourglass_depth == 0 || (feature_size() >> hourglass_depth) == 0) {
            throw ConfigError("model.hourglass_depth too deep for the feature resolution");
        }
    }
};

/// Which parts of the graph a variant builds.
struct GraphDescriptor {
    bool attention = false;     // CTM on the last two stacks
    bool second_order = false;  // covariance branch inside the CTM
    bool regularized = false;   // cross-semantic terms in the objective
};

inline GraphDescriptor select_variant(const ModelConfig& config) {
    switch (config.variant) {
        case Variant::baseline: return {false, false, false};
        case Variant::fcdn: return {true, false, true};
        case Variant::ccdn: return {true, true, true};
    }
    throw ConfigError("unknown variant");
}

/// conv3x3 -> batch norm -> relu.
struct ConvBlock {
    Tensor kernel, gamma, beta;
    BatchNormState bn;
    std::size_t stride = 1;

    Tensor forward(const Tensor& x, Mode mode) {
        return relu(batchnorm(conv2d(x, kernel, stride, kernel.dim(2) / 2), gamma, beta, bn, mode));
    }
};

struct HourglassParams {
    // Per level from the top: skip branch, down branch, up branch; then one bottom block.
    std::vector<ConvBlock> skip, down, up;
    ConvBlock bottom;
    ConvBlock tail;  // 1x1
};

struct ModelParams {
    ModelConfig config;
    ConvBlock stem1, stem2;
    std::vector<HourglassParams> hourglass;
    ExcitationBank bank_last, bank_penultimate;  // empty for the baseline
    std::vector<CffParams> cff;
    Tensor head_kernel;  // [D, P*D (or D), 1, 1]
    Tensor fc_weight;    // [2L, D]
    Tensor fc_bias;      // [2L]
    std::size_t epochs_trained = 0;
};

/// Visits every persistent tensor under a stable name; `trainable` is false for running stats.
template <class Params, class Fn>
void for_each_tensor(Params& m, Fn&& fn) {
    auto block = [&](const std::string& name, auto& b) {
        fn(name + ".kernel", b.kernel, true);
        fn(name + ".gamma", b.gamma, true);
        fn(name + ".beta", b.beta, true);
        fn(name + ".running_mean", b.bn.running_mean, false);
        fn(name + ".running_var", b.bn.running_var, false);
    };
    block("stem1", m.stem1);
    block("stem2", m.stem2);
    for (std::size_t s = 0; s < m.hourglass.size(); ++s) {
        auto& h = m.hourglass[s];
        const std::string pre = "hg" + std::to_string(s);
        for (std::size_t l = 0; l < h.skip.size(); ++l) {
            block(pre + ".skip" + std::to_string(l), h.skip[l]);
            block(pre + ".down" + std::to_string(l), h.down[l]);
            block(pre + ".up" + std::to_string(l), h.up[l]);
        }
        block(pre + ".bottom", h.bottom);
        block(pre + ".tail", h.tail);
    }
    auto bank = [&](const std::string& name, auto& b) {
        for (std::size_t p = 0; p < b.first.size(); ++p) {
            fn(name + ".st" + std::to_string(p) + ".squeeze", b.first[p].squeeze, true);
            fn(name + ".st" + std::to_string(p) + ".expand", b.first[p].expand, true);
        }
        for (std::size_t p = 0; p < b.second.size(); ++p) {
            fn(name + ".nd" + std::to_string(p) + ".squeeze", b.second[p].squeeze, true);
            fn(name + ".nd" + std::to_string(p) + ".expand", b.second[p].expand, true);
        }
    };
    bank("ctm_last", m.bank_last);
    bank("ctm_penultimate", m.bank_penultimate);
    for (std::size_t p = 0; p < m.cff.size(); ++p) {
        auto& c = m.cff[p];
        const std::string pre = "cff" + std::to_string(p);
        fn(pre + ".reduce", c.reduce, true);
        fn(pre + ".upsample", c.upsample, true);
        fn(pre + ".smooth", c.smooth, true);
        fn(pre + ".gamma", c.gamma, true);
        fn(pre + ".beta", c.beta, true);
        fn(pre + ".running_mean", c.bn.running_mean, false);
        fn(pre + ".running_var", c.bn.running_var, false);
    }
    fn("head.kernel", m.head_kernel, true);
    fn("fc.weight", m.fc_weight, true);
    fn("fc.bias", m.fc_bias, true);
}

inline std::vector<Tensor> trainable_parameters(ModelParams& m) {
    std::vector<Tensor> out;
    for_each_tensor(m, [&](const std::string&, Tensor& t, bool trainable) {
        if (trainable) out.push_back(t);
    });
    return out;
}

inline std::size_t parameter_count(ModelParams& m) {
    std::size_t n = 0;
    for (const auto& t : trainable_parameters(m)) n += t.numel();
    return n;
}

namespace detail {

inline Tensor uniform_param(Shape dims, double bound, Rng& rng) {
    std::vector<double> v(numel(dims));
    for (double& x : v) x = uniform(rng, -bound, bound);
    return Tensor(std::move(dims), std::move(v), true);
}

/// Kaiming-uniform for relu layers.
inline ConvBlock make_block(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng) {
    ConvBlock b;
    b.kernel = uniform_param({out, in, k, k}, std::sqrt(6.0 / static_cast<double>(in * k * k)), rng);
    b.gamma = Tensor::ones({out}).set_requires_grad(true);
    b.beta = Tensor::zeros({out}).set_requires_grad(true);
    b.bn = BatchNormState::fresh(out);
    b.stride = stride;
    return b;
}

}  // namespace detail

inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = make_stream(seed, "init");
    const std::size_t d = config.channels;
    const GraphDescriptor g = select_variant(config);
    ModelParams m;
    m.config = config;
    m.stem1 = detail::make_block(config.image_channels, d / 2, 3, 2, rng);
    m.stem2 = detail::make_block(d / 2, d, 3, 2, rng);
    for (std::size_t s = 0; s < config.stacks; ++s) {
        HourglassParams h;
        for (std::size_t l = 0; l < config.hourglass_depth; ++l) {
            h.skip.push_back(detail::make_block(d, d, 3, 1, rng));
            h.down.push_back(detail::make_block(d, d, 3, 1, rng));
            h.up.push_back(detail::make_block(d, d, 3, 1, rng));
        }
        h.bottom = detail::make_block(d, d, 3, 1, rng);
        h.tail = detail::make_block(d, d, 1, 1, rng);
        m.hourglass.push_back(std::move(h));
    }
    std::size_t head_in = d;
    if (g.attention) {
        m.bank_last = ExcitationBank::random(d, config.excitations, g.second_order, rng);
        m.bank_penultimate = ExcitationBank::random(d, config.excitations, g.second_order, rng);
        for (std::size_t p = 0; p < config.excitations; ++p) {
            m.cff.push_back(CffParams::random(d, config.deconv_kernel, rng));
        }
        head_in = config.excitations * d;
    }
    m.head_kernel = detail::uniform_param({d, head_in, 1, 1}, std::sqrt(1.0 / static_cast<double>(head_in)), rng);
    m.fc_weight = detail::uniform_param({2 * config.landmarks, d}, std::sqrt(1.0 / static_cast<double>(d)), rng);
    m.fc_bias = Tensor::zeros({2 * config.landmarks}).set_requires_grad(true);
    return m;
}

namespace detail {

inline Tensor hourglass_level(const Tensor& x, HourglassParams& h, std::size_t level, Mode mode) {
    const Tensor skip = h.skip[level].forward(x, mode);
    const Tensor low1 = h.down[level].forward(avg_pool2(x), mode);
    const Tensor low2 = level + 1 < h.skip.size() ? hourglass_level(low1, h, level + 1, mode)
                                                  : h.bottom.forward(low1, mode);
    const Tensor low3 = h.up[level].forward(low2, mode);
    return add(skip, upsample2(low3));
}

}  // namespace detail

/// Per-stack output maps [B,D,S/4,S/4]. Stack k+1 receives the sum of stack k's input and output.
inline std::vector<Tensor> hourglass_forward(const Tensor& img, ModelParams& m, Mode mode) {
    const auto& c = m.config;
    require_dims(img, {img.dim(0), c.image_channels, c.input_size, c.input_size}, "hourglass input");
    Tensor x = m.stem2.forward(m.stem1.forward(img, mode), mode);
    std::vector<Tensor> outputs;
    for (auto& h : m.hourglass) {
        const Tensor out = h.tail.forward(detail::hourglass_level(x, h, 0, mode), mode);
        outputs.push_back(out);
        x = add(x, out);
    }
    return outputs;
}

struct ForwardResult {
    Tensor prediction;  // [B, 2L]
    std::vector<Tensor> stack_outputs;
    std::vector<Tensor> maps_last, maps_penultimate, maps_fused;  // empty for the baseline
    Tensor q_last, q_penultimate, q_fused;
    std::size_t degenerate_rows = 0;
};

inline ForwardResult ccdn_forward(const Tensor& img, ModelParams& m, Mode mode) {
    const auto& c = m.config;
    const GraphDescriptor g = select_variant(c);
    ForwardResult r;
    r.stack_outputs = hourglass_forward(img, m, mode);
    const Tensor& last = r.stack_outputs[c.stacks - 1];
    Tensor head_in = last;
    if (g.attention) {
        const SecondOrderOptions so{.ns_iters = c.ns_iters};
        r.maps_last = ctm_forward(last, m.bank_last, so).maps;
        r.maps_penultimate = ctm_forward(r.stack_outputs[c.stacks - 2], m.bank_penultimate, so).maps;
        for (std::size_t p = 0; p < c.excitations; ++p) {
            r.maps_fused.push_back(cff_fuse(avg_pool2(r.maps_last[p]), r.maps_penultimate[p], m.cff[p], mode));
        }
        const auto pt = pool_normalize(r.maps_last), pp = pool_normalize(r.maps_penultimate),
                   pg = pool_normalize(r.maps_fused);
        r.degenerate_rows = pt.degenerate_rows + pp.degenerate_rows + pg.degenerate_rows;
        r.q_last = excitation_correlations(pt);
        r.q_penultimate = excitation_correlations(pp);
        r.q_fused = excitation_correlations(pg);
        head_in = concat_channels(r.maps_fused);
    }
    r.prediction = linear(gap(conv2d(head_in, m.head_kernel)), m.fc_weight, m.fc_bias);
    return r;
}

struct LossWeights {
    double gamma1 = 0.025;  // last stack
    double gamma2 = 0.01;   // penultimate stack
    double gamma3 = 0.05;   // fused maps
};

/// Batch mean of the squared coordinate error plus the weighted cross-semantic terms. Pass a null
/// `losses` for the baseline.
inline Tensor ccdn_objective(const Tensor& pred, const Tensor& gt, const CocsLosses* losses, const LossWeights& w) {
    require_rank(pred, 2, "prediction");
    require_dims(gt, pred.dims(), "ground truth");
    const Tensor diff = sub(gt, pred);
    Tensor total = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(pred.dim(0)));
    if (losses) {
        total = add(total, scale(losses->last, w.gamma1));
        total = add(total, scale(losses->penultimate, w.gamma2));
        total = add(total, scale(losses->fused, w.gamma3));
    }
    return total;
}

struct StepLosses {
    Tensor objective;
    Tensor data_term;
    double loss_qt = 0.0, loss_qt1 = 0.0, loss_qg = 0.0;
};

/// Forward pass plus objective for one batch; the baseline ignores the weights.
inline StepLosses batch_objective(const Tensor& img, const Tensor& gt, ModelParams& m, const LossWeights& w,
                                  Mode mode, ForwardResult* keep = nullptr) {
    ForwardResult r = ccdn_forward(img, m, mode);
    StepLosses s;
    s.data_term = ccdn_objective(r.prediction, gt, nullptr, w);
    if (select_variant(m.config).regularized) {
        const CocsLosses l = cocs_loss(r.q_last, r.q_penultimate, r.q_fused);
        s.loss_qt = l.last.item();
        s.loss_qt1 = l.penultimate.item();
        s.loss_qg = l.fused.item();
        s.objective = ccdn_objective(r.prediction, gt, &l, w);
    } else {
        s.objective = s.data_term;
    }
    if (keep) *keep = std::move(r);
    return s;
}

}  // namespace ccdn
