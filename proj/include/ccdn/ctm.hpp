#pragma once

// Cross-order two-squeeze multi-excitation: first- and second-order channel descriptors gate the
// input feature map through P excitation blocks, one attention-specific map per block.

#include <cmath>
#include <vector>

#include "ccdn/linalg.hpp"
#include "ccdn/nn_ops.hpp"
#include "ccdn/rng.hpp"

namespace ccdn {

enum class Order { first, second };

struct ChannelDescriptor {
    Tensor first_order;   // [B,D]
    Tensor second_order;  // [B,D]; undefined when the second-order branch is disabled
};

/// One gating MLP: s = sigmoid(expand * relu(squeeze * kappa)). No biases.
struct ExcitationWeights {
    Tensor squeeze;  // [D/4, D]
    Tensor expand;   // [D, D/4]
};

struct ExcitationBank {
    std::size_t channels = 0;
    std::vector<ExcitationWeights> first;   // one per excitation
    std::vector<ExcitationWeights> second;  // empty when first-order only

    std::size_t excitations() const { return first.size(); }
    bool cross_order() const { return !second.empty(); }

    const ExcitationWeights& weights(std::size_t p, Order ord) const {
        const auto& v = ord == Order::first ? first : second;
        if (p >= v.size()) throw ContractError("excitation index out of range");
        return v[p];
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* v : {&first, &second})
            for (const auto& w : *v) n += w.squeeze.numel() + w.expand.numel();
        return n;
    }

    /// Weights uniform in +-sqrt(1/fan_in).
    static ExcitationBank random(std::size_t channels, std::size_t excitations, bool cross_order, Rng& rng) {
        return make(channels, excitations, cross_order, [&](Shape dims) {
            const double bound = std::sqrt(1.0 / static_cast<double>(dims[1]));
            std::vector<double> v(numel(dims));
            for (double& x : v) x = uniform(rng, -bound, bound);
            return Tensor(std::move(dims), std::move(v), true);
        });
    }

    static ExcitationBank zeros(std::size_t channels, std::size_t excitations, bool cross_order) {
        return make(channels, excitations, cross_order,
                    [](Shape dims) { return Tensor(std::move(dims)).set_requires_grad(true); });
    }

private:
    template <class Init>
    static ExcitationBank make(std::size_t channels, std::size_t excitations, bool cross_order, Init&& init) {
        if (excitations == 0) throw ConfigError("excitation count must be >= 1");
        if (channels == 0 || channels % 4 != 0) {
            throw ConfigError("channel count must be a positive multiple of 4, got " + std::to_string(channels));
        }
        ExcitationBank bank;
        bank.channels = channels;
        const std::size_t reduced = channels / 4;
        for (std::size_t p = 0; p < excitations; ++p) {
            bank.first.push_back({init({reduced, channels}), init({channels, reduced})});
        }
        if (cross_order) {
            for (std::size_t p = 0; p < excitations; ++p) {
                bank.second.push_back({init({reduced, channels}), init({channels, reduced})});
            }
        }
        return bank;
    }
};

struct CtmOutput {
    std::vector<Tensor> maps;  // P maps, each with the input's dims
    ChannelDescriptor descriptor;
};

struct SecondOrderOptions {
    std::size_t ns_iters = 5;
    // Sigma += (relative_jitter * tr(Sigma) / D + absolute_jitter) I before the square root.
    double relative_jitter = 1e-6;
    double absolute_jitter = 1e-12;
};

/// kappa^st: per-channel spatial mean.
inline Tensor first_order_squeeze(const Tensor& x) { return gap(x); }

/// Normalized covariance square root of the channel responses, [B,D,H,W] -> [B,D,D].
inline Tensor normalized_covariance(const Tensor& x, const SecondOrderOptions& opt = {}) {
    require_rank(x, 4, "second-order squeeze input");
    const std::size_t batch = x.dim(0), d = x.dim(1), n = x.dim(2) * x.dim(3);
    if (n < 2) throw DegenerateInputError("second-order squeeze needs H*W >= 2");
    const Tensor sigma = covariance(reshape(x, {batch, d, n}));
    const Tensor jitter = add_scalar(scale(trace(sigma), opt.relative_jitter / static_cast<double>(d)),
                                     opt.absolute_jitter);
    return newton_schulz_sqrt(add_scaled_identity(sigma, jitter), opt.ns_iters);
}

/// kappa^nd: row means of the normalized covariance square root, so entry d aggregates channel d's
/// second-order dependencies on every channel.
inline Tensor second_order_squeeze(const Tensor& x, const SecondOrderOptions& opt = {}) {
    return mean_last(normalized_covariance(x, opt));
}

/// Per-channel sigmoid gate computed from a descriptor [B,D] -> [B,D].
inline Tensor excitation_gate(const Tensor& kappa, const ExcitationWeights& w) {
    return sigmoid(linear(relu(linear(kappa, w.squeeze)), w.expand));
}

inline Tensor excite(const Tensor& x, const Tensor& kappa, const ExcitationWeights& w) {
    return channel_scale(x, excitation_gate(kappa, w));
}

inline Tensor excite(const Tensor& x, const Tensor& kappa, std::size_t p, Order ord, const ExcitationBank& bank) {
    return excite(x, kappa, bank.weights(p, ord));
}

/// Squeezes once, then produces one re-calibrated map per excitation: the sum of the first- and
/// second-order gated maps, or the first-order map alone when the bank has no second-order branch.
inline CtmOutput ctm_forward(const Tensor& x, const ExcitationBank& bank, const SecondOrderOptions& opt = {}) {
    require_rank(x, 4, "ctm input");
    if (x.dim(1) != bank.channels) {
        throw ShapeError("ctm: input has " + std::to_string(x.dim(1)) + " channels, bank expects " +
                         std::to_string(bank.channels));
    }
    CtmOutput out;
    out.descriptor.first_order = first_order_squeeze(x);
    if (bank.cross_order()) out.descriptor.second_order = second_order_squeeze(x, opt);
    for (std::size_t p = 0; p < bank.excitations(); ++p) {
        Tensor m = excite(x, out.descriptor.first_order, p, Order::first, bank);
        if (bank.cross_order()) m = add(m, excite(x, out.descriptor.second_order, p, Order::second, bank));
        out.maps.push_back(std::move(m));
    }
    return out;
}

}  // namespace ccdn
