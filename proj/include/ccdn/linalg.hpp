#pragma once

// Second-order statistics: centered covariance and the coupled Newton-Schulz square root.

#include "ccdn/ops.hpp"

namespace ccdn {

/// Sigma = X C X^T per item with C = (1/N)(I - 11^T/N). x is [B,D,N] or [D,N]; the result is
/// [B,D,D] or [D,D] respectively.
inline Tensor covariance(const Tensor& x) {
    if (x.rank() != 2 && x.rank() != 3) throw ShapeError("covariance: expected [B,D,N] or [D,N]");
    const bool flat = x.rank() == 2;
    const std::size_t batch = flat ? 1 : x.dim(0);
    const std::size_t d = x.dims()[x.rank() - 2], n = x.dims()[x.rank() - 1];
    if (n < 2) throw DegenerateInputError("covariance: need at least 2 positions, got " + std::to_string(n));

    std::vector<double> centered(x.numel());
    for (std::size_t r = 0; r < batch * d; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[r * n + i];
        const double m = s / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) centered[r * n + i] = x[r * n + i] - m;
    }
    std::vector<double> v(batch * d * d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t b = 0; b < batch; ++b) {
        detail::CMapMat Xc(centered.data() + b * d * n, d, n);
        detail::MapMat S(v.data() + b * d * d, d, d);
        S.noalias() = inv_n * (Xc * Xc.transpose());
        // Exact symmetry regardless of summation order inside the product.
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) S(j, i) = S(i, j);
    }
    Shape dims = flat ? Shape{d, d} : Shape{batch, d, d};
    Tensor out = detail::make_result(std::move(dims), std::move(v), "covariance");
    detail::record(out, {&x}, [x, centered = std::move(centered), batch, d, n, inv_n](std::span<const double> g,
                                                                                     Gradients& gs) {
        auto gx = gs.accumulator(x);
        for (std::size_t b = 0; b < batch; ++b) {
            detail::CMapMat G(g.data() + b * d * d, d, d);
            detail::CMapMat Xc(centered.data() + b * d * n, d, n);
            // Rows of (G + G^T) Xc are already centered, so the centering projection is implicit.
            detail::MapMat(gx.data() + b * d * n, d, n).noalias() += inv_n * ((G + G.transpose()) * Xc);
        }
    });
    return out;
}

/// Matrix square root of SPD `sigma` ([D,D] or [B,D,D]) by the coupled Newton-Schulz iteration on
/// the trace-normalized matrix, followed by sqrt(trace) compensation. Built from tape primitives,
/// so gradients flow through every iteration.
inline Tensor newton_schulz_sqrt(const Tensor& sigma, std::size_t iters = 5) {
    if (iters == 0) throw ContractError("newton_schulz_sqrt: iters must be >= 1");
    const bool flat = sigma.rank() == 2;
    if (!flat && sigma.rank() != 3) throw ShapeError("newton_schulz_sqrt: expected [D,D] or [B,D,D]");
    const std::size_t d = sigma.dims().back();
    if (sigma.dims()[sigma.rank() - 2] != d) throw ShapeError("newton_schulz_sqrt: square matrices expected");
    const Tensor s = flat ? reshape(sigma, {1, d, d}) : sigma;
    const std::size_t batch = s.dim(0);

    const Tensor tr = trace(s);
    for (std::size_t b = 0; b < batch; ++b) {
        if (!(tr[b] > 0.0)) {
            throw DegenerateInputError("newton_schulz_sqrt: trace " + std::to_string(tr[b]) +
                                       " is not positive (add jitter to rank-deficient covariances)");
        }
    }
    std::vector<double> ones(batch, 1.0);
    const Tensor inv_tr = div(Tensor({batch}, ones), tr);
    Tensor y = scale_items(s, inv_tr);
    Tensor z = add_identity(Tensor::zeros({batch, d, d}), 1.0);
    for (std::size_t k = 0; k < iters; ++k) {
        const Tensor t = scale(add_identity(scale(matmul(z, y), -1.0), 3.0), 0.5);
        y = matmul(y, t);
        z = matmul(t, z);
    }
    Tensor out = scale_items(y, sqrt(tr));
    return flat ? reshape(out, {d, d}) : out;
}

}  // namespace ccdn
