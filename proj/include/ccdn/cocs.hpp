#pragma once

// Cross-order cross-semantic regularizer: correlations between the pooled outputs of different
// excitation blocks, the ratio loss that decorrelates them, and the cross-layer fusing block.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ccdn/nn_ops.hpp"
#include "ccdn/rng.hpp"

namespace ccdn {

struct PooledFeatureBank {
    std::vector<Tensor> features;  // per excitation: [B,D], one l2-normalized row per batch item
    std::size_t degenerate_rows = 0;  // rows that hit the epsilon guard (all-zero pooled features)
};

/// GAP of each map followed by row-wise l2 normalization with max(|f|, eps).
inline PooledFeatureBank pool_normalize(const std::vector<Tensor>& maps, double eps = 1e-12) {
    PooledFeatureBank bank;
    for (const auto& m : maps) {
        const Tensor pooled = gap(m);
        const std::size_t rows = pooled.dim(0), d = pooled.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += pooled[r * d + i] * pooled[r * d + i];
            if (std::sqrt(s) <= eps) ++bank.degenerate_rows;
        }
        bank.features.push_back(l2_normalize_rows(pooled, eps));
    }
    return bank;
}

/// Q[p,p'] = (1/B^2) * sum over all (i,j) of <f_{p,i}, f_{p',j}>, i.e. the Gram matrix of the
/// batch-mean features. Batch sums run in sorted-value order so Q is exactly invariant to batch
/// permutation, and the lower triangle mirrors the upper so Q is exactly symmetric.
inline Tensor excitation_correlations(const PooledFeatureBank& bank) {
    const auto& f = bank.features;
    if (f.empty()) throw ShapeError("excitation_correlations: empty bank");
    const std::size_t p = f.size(), batch = f[0].dim(0), d = f[0].dim(1);
    if (batch == 0) throw ShapeError("excitation_correlations: empty batch");
    for (const auto& t : f) require_dims(t, {batch, d}, "excitation_correlations features");

    std::vector<double> means(p * d);
    std::vector<double> column(batch);
    for (std::size_t k = 0; k < p; ++k)
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t b = 0; b < batch; ++b) column[b] = f[k][b * d + i];
            std::sort(column.begin(), column.end());
            double s = 0.0;
            for (double x : column) s += x;
            means[k * d + i] = s / static_cast<double>(batch);
        }
    std::vector<double> q(p * p);
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = a; b < p; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += means[a * d + i] * means[b * d + i];
            q[a * p + b] = q[b * p + a] = s;
        }
    Tensor out = detail::make_result({p, p}, std::move(q), "excitation_correlations");
    detail::record_many(out, f, [f, means = std::move(means), p, batch, d](std::span<const double> g, Gradients& gs) {
        const double inv_b = 1.0 / static_cast<double>(batch);
        std::vector<double> gm(d);
        for (std::size_t k = 0; k < p; ++k) {
            auto gf = gs.accumulator(f[k]);
            if (gf.empty()) continue;
            std::fill(gm.begin(), gm.end(), 0.0);
            for (std::size_t j = 0; j < p; ++j) {
                const double w = g[k * p + j] + g[j * p + k];
                for (std::size_t i = 0; i < d; ++i) gm[i] += w * means[j * d + i];
            }
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < d; ++i) gf[b * d + i] += gm[i] * inv_b;
        }
    });
    return out;
}

/// (|Q|_F^2 - |diag Q|^2) / |diag Q|^2. Scale invariant; zero iff Q is diagonal.
inline Tensor cross_semantic_loss(const Tensor& q) {
    require_rank(q, 2, "cross_semantic_loss");
    if (q.dim(0) != q.dim(1)) throw ShapeError("cross_semantic_loss: square matrix expected");
    const Tensor d = diag(q);
    const Tensor diag_sq = sum(mul(d, d));
    if (diag_sq.item() == 0.0) {
        throw DegenerateInputError("cross_semantic_loss: zero diagonal (collapsed excitation features)");
    }
    return div(sub(sum(mul(q, q)), diag_sq), diag_sq);
}

struct CocsLosses {
    Tensor last;         // L(Q^T)
    Tensor penultimate;  // L(Q^{T-1})
    Tensor fused;        // L(Q^G)
};

inline CocsLosses cocs_loss(const Tensor& q_t, const Tensor& q_t1, const Tensor& q_g) {
    if (q_t.dims() != q_t1.dims() || q_t.dims() != q_g.dims()) {
        throw ShapeError("cocs_loss: correlation matrices disagree on P");
    }
    return {cross_semantic_loss(q_t), cross_semantic_loss(q_t1), cross_semantic_loss(q_g)};
}

/// Cross-layer feature fusing block parameters.
struct CffParams {
    Tensor reduce;    // K1, [D,D,1,1]
    Tensor upsample;  // transposed conv, [D,D,k,k], stride 2
    Tensor smooth;    // K2, [D,D,3,3], padding 1
    Tensor gamma, beta;
    BatchNormState bn;

    static CffParams random(std::size_t channels, std::size_t deconv_kernel, Rng& rng) {
        auto kaiming = [&](Shape dims, std::size_t fan_in) {
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            std::vector<double> v(numel(dims));
            for (double& x : v) x = uniform(rng, -bound, bound);
            return Tensor(std::move(dims), std::move(v), true);
        };
        const std::size_t taps = (deconv_kernel / 2) * (deconv_kernel / 2);
        CffParams c;
        c.reduce = kaiming({channels, channels, 1, 1}, channels);
        c.upsample = kaiming({channels, channels, deconv_kernel, deconv_kernel}, channels * taps);
        c.smooth = kaiming({channels, channels, 3, 3}, channels * 9);
        c.gamma = Tensor::ones({channels}).set_requires_grad(true);
        c.beta = Tensor::zeros({channels}).set_requires_grad(true);
        c.bn = BatchNormState::fresh(channels);
        return c;
    }
};

/// BN(K2 * (x_t1 + Fconv(K1 * x_t))): x_t [B,D,H,W] is the smaller map, x_t1 [B,D,2H,2W].
inline Tensor cff_fuse(const Tensor& x_t, const Tensor& x_t1, CffParams& params, Mode mode) {
    require_rank(x_t, 4, "cff smaller map");
    require_rank(x_t1, 4, "cff larger map");
    if (x_t1.dim(0) != x_t.dim(0) || x_t1.dim(1) != x_t.dim(1) || x_t1.dim(2) != 2 * x_t.dim(2) ||
        x_t1.dim(3) != 2 * x_t.dim(3)) {
        throw ShapeError("cff_fuse: maps " + to_string(x_t.dims()) + " and " + to_string(x_t1.dims()) +
                         " are not in a 2:1 spatial ratio");
    }
    const Tensor up = deconv2d(conv2d(x_t, params.reduce), params.upsample, 2);
    const Tensor smoothed = conv2d(add(x_t1, up), params.smooth, 1, 1);
    return batchnorm(smoothed, params.gamma, params.beta, params.bn, mode);
}

}  // namespace ccdn
