#pragma once

// Independent reference computations for the test suites. Nothing here goes through the tape or
// the library's own kernels.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ccdn/rng.hpp"
#include "ccdn/tensor.hpp"

namespace ccdn::oracle {

inline Tensor random_tensor(Shape dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(dims));
    for (double& x : v) x = uniform(rng, lo, hi);
    return Tensor(std::move(dims), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Six nested loops, zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = k.dim(0), K = k.dim(2);
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    std::vector<double> v(B * O * Ho * Wo, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ki = 0; ki < K; ++ki)
                            for (std::size_t kj = 0; kj < K; ++kj) {
                                const long y = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                                const long xx = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                                s += x.at({b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)}) *
                                     k.at({o, c, ki, kj});
                            }
                    v[((b * O + o) * Ho + i) * Wo + j] = s;
                }
    return Tensor({B, O, Ho, Wo}, std::move(v));
}

/// Scatter form of the stride-2 transposed convolution with padding (k-2)/2.
inline Tensor deconv2d(const Tensor& x, const Tensor& k) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = k.dim(1), K = k.dim(2);
    const long pad = static_cast<long>((K - 2) / 2);
    std::vector<double> v(B * O * 4 * H * W, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    for (std::size_t o = 0; o < O; ++o)
                        for (std::size_t ki = 0; ki < K; ++ki)
                            for (std::size_t kj = 0; kj < K; ++kj) {
                                const long y = static_cast<long>(2 * i + ki) - pad;
                                const long xx = static_cast<long>(2 * j + kj) - pad;
                                if (y < 0 || xx < 0 || y >= static_cast<long>(2 * H) || xx >= static_cast<long>(2 * W)) continue;
                                v[((b * O + o) * 2 * H + static_cast<std::size_t>(y)) * 2 * W + static_cast<std::size_t>(xx)] +=
                                    x.at({b, c, i, j}) * k.at({c, o, ki, kj});
                            }
    return Tensor({B, O, 2 * H, 2 * W}, std::move(v));
}

/// Textbook covariance with explicit means, (1/N) normalization.
inline Eigen::MatrixXd covariance(const std::vector<std::vector<double>>& rows) {
    const std::size_t d = rows.size(), n = rows[0].size();
    std::vector<double> mean(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
        for (double x : rows[a]) mean[a] += x;
        mean[a] /= static_cast<double>(n);
    }
    Eigen::MatrixXd s(d, d);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += (rows[a][i] - mean[a]) * (rows[b][i] - mean[b]);
            s(a, b) = acc / static_cast<double>(n);
        }
    return s;
}

/// Principal square root through the symmetric eigendecomposition.
inline Eigen::MatrixXd sqrtm(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Random SPD matrix with eigenvalues log-uniform in [1, cond], both endpoints included.
inline Eigen::MatrixXd random_spd(std::size_t d, double cond, Rng& rng) {
    Eigen::MatrixXd g(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) g(i, j) = gaussian(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd ev(d);
    for (std::size_t i = 0; i < d; ++i) ev(i) = std::exp(uniform(rng, 0.0, std::log(cond)));
    ev(0) = 1.0;
    if (d > 1) ev(1) = cond;
    Eigen::MatrixXd s = q * ev.asDiagonal() * q.transpose();
    return 0.5 * (s + s.transpose());
}

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
    std::vector<double> v(m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

inline Eigen::MatrixXd to_matrix(const Tensor& t, std::size_t item = 0) {
    const std::size_t r = t.dims()[t.rank() - 2], c = t.dims()[t.rank() - 1];
    Eigen::MatrixXd m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = t[item * r * c + i * c + j];
    return m;
}

/// Projects a tensor onto fixed random weights so vector-valued ops can be gradient-checked.
inline Tensor projection_weights(const Shape& dims, std::uint64_t seed) {
    Rng rng = make_stream(seed, "projection");
    return random_tensor(dims, rng);
}

}  // namespace ccdn::oracle
