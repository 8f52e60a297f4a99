#pragma once

// Feature-map primitives: convolution, transposed convolution, batch normalization, pooling.
// Feature maps are [B, C, H, W] row-major.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ccdn/ops.hpp"

namespace ccdn {

namespace detail {

// Uninitialized temporary; callers overwrite every element.
inline std::unique_ptr<double[]> scratch(std::size_t n) { return std::make_unique_for_overwrite<double[]>(n); }

struct Geometry {
    std::size_t channels, height, width;  // image side
    std::size_t kernel, stride, pad;
    std::size_t out_h, out_w;  // grid side
};

// cols[(c,ki,kj), (i,j)] = img[c, i*stride - pad + ki, j*stride - pad + kj], zero outside.
// Rows of `cols` are `ld` apart, so several images can fill adjacent column blocks.
inline void im2col(const double* img, const Geometry& g, double* cols, std::size_t ld) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ld;
                for (std::size_t i = 0; i < g.out_h; ++i) {
                    const long y = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
                    double* dst = row + i * g.out_w;
                    if (y < 0 || y >= static_cast<long>(g.height)) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
                    for (std::size_t j = 0; j < g.out_w; ++j) {
                        const long x = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
                        dst[j] = (x < 0 || x >= static_cast<long>(g.width)) ? 0.0 : src[x];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters-and-adds cols back into img.
inline void col2im(const double* cols, const Geometry& g, double* img, std::size_t ld) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ld;
                for (std::size_t i = 0; i < g.out_h; ++i) {
                    const long y = static_cast<long>(i * g.stride + ki) - static_cast<long>(g.pad);
                    if (y < 0 || y >= static_cast<long>(g.height)) continue;
                    double* dst = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
                    const double* src = row + i * g.out_w;
                    for (std::size_t j = 0; j < g.out_w; ++j) {
                        const long x = static_cast<long>(j * g.stride + kj) - static_cast<long>(g.pad);
                        if (x >= 0 && x < static_cast<long>(g.width)) dst[x] += src[j];
                    }
                }
            }
        }
    }
}

// [B, C, N] <-> [C, B*N] layout changes for batch-wide matrix products.
inline void to_channel_major(const double* src, std::size_t batch, std::size_t c, std::size_t n, double* dst) {
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < c; ++k)
            std::copy_n(src + (b * c + k) * n, n, dst + k * batch * n + b * n);
}

inline void from_channel_major(const double* src, std::size_t batch, std::size_t c, std::size_t n, double* dst) {
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < c; ++k)
            std::copy_n(src + k * batch * n + b * n, n, dst + (b * c + k) * n);
}

}  // namespace detail

/// Cross-correlation. x [B,Cin,H,W], kernel [Cout,Cin,k,k].
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride = 1, std::size_t pad = 0) {
    require_rank(x, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != cin) {
        throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
    }
    if (kernel.dim(3) != k) throw ShapeError("conv2d: square kernels only");
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input");

    const detail::Geometry geo{cin, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1,
                               (w + 2 * pad - k) / stride + 1};
    const std::size_t grid = geo.out_h * geo.out_w, patch = cin * k * k, cols_ld = batch * grid;

    // One product for the whole batch: [Cout, patch] x [patch, B*grid].
    const auto cols = detail::scratch(patch * cols_ld);
    for (std::size_t b = 0; b < batch; ++b) {
        detail::im2col(x.values().data() + b * cin * h * w, geo, cols.get() + b * grid, cols_ld);
    }
    const auto y = detail::scratch(cout * cols_ld);
    detail::MapMat(y.get(), cout, cols_ld).noalias() =
        detail::CMapMat(kernel.values().data(), cout, patch) * detail::CMapMat(cols.get(), patch, cols_ld);
    std::vector<double> v(batch * cout * grid);
    detail::from_channel_major(y.get(), batch, cout, grid, v.data());
    Tensor out = detail::make_result({batch, cout, geo.out_h, geo.out_w}, std::move(v), "conv2d");
    detail::record(out, {&x, &kernel}, [x, kernel, geo, batch, cout](std::span<const double> g, Gradients& gs) {
        const std::size_t grid = geo.out_h * geo.out_w, cols_ld = batch * grid;
        const std::size_t patch = geo.channels * geo.kernel * geo.kernel;
        const std::size_t img_size = geo.channels * geo.height * geo.width;
        auto gx = gs.accumulator(x);
        auto gk = gs.accumulator(kernel);
        const auto gm = detail::scratch(cout * cols_ld);
        detail::to_channel_major(g.data(), batch, cout, grid, gm.get());
        const detail::CMapMat G(gm.get(), cout, cols_ld);
        if (!gk.empty()) {
            const auto cols = detail::scratch(patch * cols_ld);
            for (std::size_t b = 0; b < batch; ++b) {
                detail::im2col(x.values().data() + b * img_size, geo, cols.get() + b * grid, cols_ld);
            }
            detail::MapMat(gk.data(), cout, patch).noalias() += G * detail::CMapMat(cols.get(), patch, cols_ld).transpose();
        }
        if (!gx.empty()) {
            const auto gcols = detail::scratch(patch * cols_ld);
            detail::MapMat(gcols.get(), patch, cols_ld).noalias() =
                detail::CMapMat(kernel.values().data(), cout, patch).transpose() * G;
            for (std::size_t b = 0; b < batch; ++b) {
                detail::col2im(gcols.get() + b * grid, geo, gx.data() + b * img_size, cols_ld);
            }
        }
    });
    return out;
}

/// Transposed convolution doubling spatial dims. x [B,Cin,H,W], kernel [Cin,Cout,k,k] with k even
/// (2 or 4); padding (k-2)/2 so the output is exactly [B,Cout,2H,2W].
inline Tensor deconv2d(const Tensor& x, const Tensor& kernel, std::size_t stride = 2) {
    if (stride != 2) throw ContractError("deconv2d: only stride 2 is supported");
    require_rank(x, 4, "deconv2d input");
    require_rank(kernel, 4, "deconv2d kernel");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = kernel.dim(1), k = kernel.dim(2);
    if (kernel.dim(0) != cin) {
        throw ShapeError("deconv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(kernel.dim(0)));
    }
    if (kernel.dim(3) != k || k < 2 || k % 2 != 0) {
        throw ContractError("deconv2d: kernel must be square with even size >= 2");
    }
    const detail::Geometry geo{cout, 2 * h, 2 * w, k, 2, (k - 2) / 2, h, w};
    const std::size_t grid = h * w, patch = cout * k * k, out_size = cout * 4 * h * w, cols_ld = batch * grid;

    const auto xm = detail::scratch(cin * cols_ld);
    detail::to_channel_major(x.values().data(), batch, cin, grid, xm.get());
    const auto cols = detail::scratch(patch * cols_ld);
    detail::MapMat(cols.get(), patch, cols_ld).noalias() =
        detail::CMapMat(kernel.values().data(), cin, patch).transpose() * detail::CMapMat(xm.get(), cin, cols_ld);
    std::vector<double> v(batch * out_size, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        detail::col2im(cols.get() + b * grid, geo, v.data() + b * out_size, cols_ld);
    }
    Tensor out = detail::make_result({batch, cout, 2 * h, 2 * w}, std::move(v), "deconv2d");
    detail::record(out, {&x, &kernel}, [x, kernel, geo, batch, cin](std::span<const double> g, Gradients& gs) {
        const std::size_t grid = geo.out_h * geo.out_w, cols_ld = batch * grid;
        const std::size_t patch = geo.channels * geo.kernel * geo.kernel;
        const std::size_t out_size = geo.channels * geo.height * geo.width;
        auto gx = gs.accumulator(x);
        auto gk = gs.accumulator(kernel);
        const auto gcols = detail::scratch(patch * cols_ld);
        for (std::size_t b = 0; b < batch; ++b) {
            detail::im2col(g.data() + b * out_size, geo, gcols.get() + b * grid, cols_ld);
        }
        const detail::CMapMat GC(gcols.get(), patch, cols_ld);
        if (!gx.empty()) {
            const auto gxm = detail::scratch(cin * cols_ld);
            detail::MapMat(gxm.get(), cin, cols_ld).noalias() = detail::CMapMat(kernel.values().data(), cin, patch) * GC;
            const auto tmp = detail::scratch(batch * cin * grid);
            detail::from_channel_major(gxm.get(), batch, cin, grid, tmp.get());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
        }
        if (!gk.empty()) {
            const auto xm = detail::scratch(cin * cols_ld);
            detail::to_channel_major(x.values().data(), batch, cin, grid, xm.get());
            detail::MapMat(gk.data(), cin, patch).noalias() += detail::CMapMat(xm.get(), cin, cols_ld) * GC.transpose();
        }
    });
    return out;
}

enum class Mode { train, eval };

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;

    static BatchNormState fresh(std::size_t channels) {
        return {Tensor::zeros({channels}), Tensor::ones({channels})};
    }
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.9;  // weight of the previous running value
};

/// Per-channel normalization over (B,H,W). Train mode normalizes with batch moments and updates
/// `state`; eval mode normalizes with the running moments.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                        Mode mode, BatchNormOptions opt = {}) {
    require_rank(x, 4, "batchnorm input");
    const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require_dims(gamma, {c}, "batchnorm gamma");
    require_dims(beta, {c}, "batchnorm beta");
    require_dims(state.running_mean, {c}, "batchnorm running mean");
    require_dims(state.running_var, {c}, "batchnorm running var");
    if (!(opt.eps > 0.0)) throw ContractError("batchnorm: eps must be positive");
    const std::size_t count = batch * hw;
    if (count == 0) throw ShapeError("batchnorm: empty input");

    std::vector<double> mu(c), inv_std(c);
    if (mode == Mode::train) {
        auto rm = state.running_mean.mutable_values();
        auto rv = state.running_var.mutable_values();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < hw; ++i) s += x[(b * c + ch) * hw + i];
            const double m = s / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = x[(b * c + ch) * hw + i] - m;
                    sq += d * d;
                }
            const double var = sq / static_cast<double>(count);
            mu[ch] = m;
            inv_std[ch] = 1.0 / std::sqrt(var + opt.eps);
            const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
            rm[ch] = opt.momentum * rm[ch] + (1.0 - opt.momentum) * m;
            rv[ch] = opt.momentum * rv[ch] + (1.0 - opt.momentum) * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = state.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + opt.eps);
        }
    }

    std::vector<double> xhat(x.numel()), v(x.numel());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (b * c + ch) * hw + i;
                xhat[idx] = (x[idx] - mu[ch]) * inv_std[ch];
                v[idx] = gamma[ch] * xhat[idx] + beta[ch];
            }
    Tensor out = detail::make_result(x.dims(), std::move(v), "batchnorm");
    detail::record(out, {&x, &gamma, &beta},
                   [x, gamma, beta, xhat = std::move(xhat), inv_std, mode, batch, c, hw](std::span<const double> g,
                                                                                        Gradients& gs) {
                       const double n = static_cast<double>(batch * hw);
                       auto gx = gs.accumulator(x);
                       auto gg = gs.accumulator(gamma);
                       auto gb = gs.accumulator(beta);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                           double sum_g = 0.0, sum_gx = 0.0;
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t i = 0; i < hw; ++i) {
                                   const std::size_t idx = (b * c + ch) * hw + i;
                                   sum_g += g[idx];
                                   sum_gx += g[idx] * xhat[idx];
                               }
                           if (!gg.empty()) gg[ch] += sum_gx;
                           if (!gb.empty()) gb[ch] += sum_g;
                           if (gx.empty()) continue;
                           const double k = gamma[ch] * inv_std[ch];
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t i = 0; i < hw; ++i) {
                                   const std::size_t idx = (b * c + ch) * hw + i;
                                   if (mode == Mode::train) {
                                       gx[idx] += k * (g[idx] - sum_g / n - xhat[idx] * sum_gx / n);
                                   } else {
                                       gx[idx] += k * g[idx];
                                   }
                               }
                       }
                   });
    return out;
}

/// Global average pooling [B,C,H,W] -> [B,C].
inline Tensor gap(const Tensor& x) {
    require_rank(x, 4, "gap");
    const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (hw == 0) throw ShapeError("gap: empty spatial extent");
    std::vector<double> v(batch * c);
    for (std::size_t r = 0; r < batch * c; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x[r * hw + i];
        v[r] = s / static_cast<double>(hw);
    }
    Tensor out = detail::make_result({batch, c}, std::move(v), "gap");
    detail::record(out, {&x}, [x, hw](std::span<const double> g, Gradients& gs) {
        auto gx = gs.accumulator(x);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t r = 0; r < g.size(); ++r)
            for (std::size_t i = 0; i < hw; ++i) gx[r * hw + i] += g[r] * inv;
    });
    return out;
}

/// 2x2 average pooling with stride 2; H and W must be even.
inline Tensor avg_pool2(const Tensor& x) {
    require_rank(x, 4, "avg_pool2");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial dims " + to_string(x.dims()));
    const std::size_t ho = h / 2, wo = w / 2;
    std::vector<double> v(planes * ho * wo);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const double* s = x.values().data() + p * h * w;
                v[(p * ho + i) * wo + j] =
                    0.25 * (s[2 * i * w + 2 * j] + s[2 * i * w + 2 * j + 1] + s[(2 * i + 1) * w + 2 * j] +
                            s[(2 * i + 1) * w + 2 * j + 1]);
            }
    Tensor out = detail::make_result({x.dim(0), x.dim(1), ho, wo}, std::move(v), "avg_pool2");
    detail::record(out, {&x}, [x, planes, h, w](std::span<const double> g, Gradients& gs) {
        auto gx = gs.accumulator(x);
        const std::size_t ho = h / 2, wo = w / 2;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    gx[(p * h + i) * w + j] += 0.25 * g[(p * ho + i / 2) * wo + j / 2];
    });
    return out;
}

/// Nearest-neighbour 2x upsampling.
inline Tensor upsample2(const Tensor& x) {
    require_rank(x, 4, "upsample2");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> v(planes * 4 * h * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j) v[(p * 2 * h + i) * 2 * w + j] = x[(p * h + i / 2) * w + j / 2];
    Tensor out = detail::make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(v), "upsample2");
    detail::record(out, {&x}, [x, planes, h, w](std::span<const double> g, Gradients& gs) {
        auto gx = gs.accumulator(x);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < 2 * h; ++i)
                for (std::size_t j = 0; j < 2 * w; ++j) gx[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
    });
    return out;
}

/// out[b,c,:,:] = s[b,c] * x[b,c,:,:].
inline Tensor channel_scale(const Tensor& x, const Tensor& s) {
    require_rank(x, 4, "channel_scale input");
    require_dims(s, {x.dim(0), x.dim(1)}, "channel_scale factors");
    const std::size_t rows = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> v(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < hw; ++i) v[r * hw + i] = s[r] * x[r * hw + i];
    Tensor out = detail::make_result(x.dims(), std::move(v), "channel_scale");
    detail::record(out, {&x, &s}, [x, s, rows, hw](std::span<const double> g, Gradients& gs) {
        auto gx = gs.accumulator(x);
        auto gsc = gs.accumulator(s);
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                if (!gx.empty()) gx[r * hw + i] += s[r] * g[r * hw + i];
                acc += x[r * hw + i] * g[r * hw + i];
            }
            if (!gsc.empty()) gsc[r] += acc;
        }
    });
    return out;
}

/// Concatenation along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels of nothing");
    const std::size_t batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3), hw = h * w;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 4, "concat_channels part");
        if (p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: part dims " + to_string(p.dims()));
        }
        total += p.dim(1);
    }
    std::vector<double> v(batch * total * hw);
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t n = p.dim(1) * hw;
            std::copy_n(p.values().data() + b * n, n, v.data() + (b * total + off) * hw);
            off += p.dim(1);
        }
    }
    Tensor out = detail::make_result({batch, total, h, w}, std::move(v), "concat_channels");
    detail::record_many(out, parts, [parts, batch, total, hw](std::span<const double> g, Gradients& gs) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t n = p.dim(1) * hw;
            if (auto gp = gs.accumulator(p); !gp.empty()) {
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < n; ++i) gp[b * n + i] += g[(b * total + off) * hw + i];
            }
            off += p.dim(1);
        }
    });
    return out;
}

}  // namespace ccdn
