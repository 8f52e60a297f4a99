#pragma once

// Elementwise, reduction and matrix primitives on the tape.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ccdn/tape.hpp"

namespace ccdn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims() != b.dims()) {
        throw ShapeError(std::string(op) + ": operand dims " + to_string(a.dims()) + " vs " +
                         to_string(b.dims()));
    }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "add");
    std::vector<double> v(a.numel());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
    Tensor out = detail::make_result(a.dims(), std::move(v), "add");
    detail::record(out, {&a, &b}, [a, b](std::span<const double> g, Gradients& gs) {
        for (const Tensor* t : {&a, &b}) {
            auto acc = gs.accumulator(*t);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
        }
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "sub");
    std::vector<double> v(a.numel());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - y[i];
    Tensor out = detail::make_result(a.dims(), std::move(v), "sub");
    detail::record(out, {&a, &b}, [a, b](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        auto gb = gs.accumulator(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "mul");
    std::vector<double> v(a.numel());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
    Tensor out = detail::make_result(a.dims(), std::move(v), "mul");
    detail::record(out, {&a, &b}, [a, b](std::span<const double> g, Gradients& gs) {
        auto x = a.values(), y = b.values();
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
        auto gb = gs.accumulator(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
    });
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::require_same(a, b, "div");
    std::vector<double> v(a.numel());
    auto x = a.values(), y = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (y[i] == 0.0) throw DegenerateInputError("div: zero denominator");
        v[i] = x[i] / y[i];
    }
    Tensor out = detail::make_result(a.dims(), std::move(v), "div");
    detail::record(out, {&a, &b}, [a, b](std::span<const double> g, Gradients& gs) {
        auto x = a.values(), y = b.values();
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / y[i];
        auto gb = gs.accumulator(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i] * x[i] / (y[i] * y[i]);
    });
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.values().begin(), a.values().end());
    for (double& x : v) x *= c;
    Tensor out = detail::make_result(a.dims(), std::move(v), "scale");
    detail::record(out, {&a}, [a, c](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * g[i];
    });
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.values().begin(), a.values().end());
    for (double& x : v) x += c;
    Tensor out = detail::make_result(a.dims(), std::move(v), "add_scalar");
    detail::record(out, {&a}, [a](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
    return out;
}

inline Tensor sqrt(const Tensor& a) {
    std::vector<double> v(a.numel());
    auto x = a.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (x[i] < 0.0) throw DegenerateInputError("sqrt of negative value");
        v[i] = std::sqrt(x[i]);
    }
    Tensor out = detail::make_result(a.dims(), std::move(v), "sqrt");
    detail::record(out, {&a}, [a, out](std::span<const double> g, Gradients& gs) {
        auto y = out.values();
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 0.5 * g[i] / y[i];
    });
    return out;
}

enum class Activation { relu, sigmoid };

inline Tensor relu(const Tensor& a) {
    std::vector<double> v(a.numel());
    auto x = a.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? x[i] : 0.0;
    Tensor out = detail::make_result(a.dims(), std::move(v), "relu");
    detail::record(out, {&a}, [a](std::span<const double> g, Gradients& gs) {
        auto x = a.values();
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (x[i] > 0.0) ga[i] += g[i];
        }
    });
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.numel());
    auto x = a.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-x[i]));
    Tensor out = detail::make_result(a.dims(), std::move(v), "sigmoid");
    detail::record(out, {&a}, [a, out](std::span<const double> g, Gradients& gs) {
        auto y = out.values();
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return out;
}

inline Tensor activate(const Tensor& a, Activation kind) {
    return kind == Activation::relu ? relu(a) : sigmoid(a);
}

/// Sum of all entries as a scalar.
inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    Tensor out = detail::make_result({}, {s}, "sum");
    detail::record(out, {&a}, [a](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        for (double& x : ga) x += g[0];
    });
    return out;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor reshape(const Tensor& a, Shape dims) {
    if (numel(dims) != a.numel()) {
        throw ShapeError("reshape " + to_string(a.dims()) + " -> " + to_string(dims));
    }
    Tensor out = detail::make_result(std::move(dims), {a.values().begin(), a.values().end()}, "reshape");
    detail::record(out, {&a}, [a](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
    return out;
}

/// Batched matrix product: [B,M,K] x [B,K,N] -> [B,M,N]. Rank-2 operands are treated as B = 1
/// and return rank 2.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const bool flat = a.rank() == 2 && b.rank() == 2;
    if (!flat && !(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0))) {
        throw ShapeError("matmul: operands " + to_string(a.dims()) + " and " + to_string(b.dims()));
    }
    const std::size_t batch = flat ? 1 : a.dim(0);
    const std::size_t m = a.dims()[a.rank() - 2], k = a.dims()[a.rank() - 1];
    const std::size_t k2 = b.dims()[b.rank() - 2], n = b.dims()[b.rank() - 1];
    if (k != k2) {
        throw ShapeError("matmul: inner dims " + to_string(a.dims()) + " x " + to_string(b.dims()));
    }
    std::vector<double> v(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        detail::CMapMat A(a.values().data() + i * m * k, m, k);
        detail::CMapMat B(b.values().data() + i * k * n, k, n);
        detail::MapMat C(v.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    Shape dims = flat ? Shape{m, n} : Shape{batch, m, n};
    Tensor out = detail::make_result(std::move(dims), std::move(v), "matmul");
    detail::record(out, {&a, &b}, [a, b, batch, m, k, n](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        auto gb = gs.accumulator(b);
        for (std::size_t i = 0; i < batch; ++i) {
            detail::CMapMat G(g.data() + i * m * n, m, n);
            if (!ga.empty()) {
                detail::CMapMat B(b.values().data() + i * k * n, k, n);
                detail::MapMat GA(ga.data() + i * m * k, m, k);
                GA.noalias() += G * B.transpose();
            }
            if (!gb.empty()) {
                detail::CMapMat A(a.values().data() + i * m * k, m, k);
                detail::MapMat GB(gb.data() + i * k * n, k, n);
                GB.noalias() += A.transpose() * G;
            }
        }
    });
    return out;
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2 && a.rank() != 3) throw ShapeError("transpose: rank 2 or 3 expected");
    const bool flat = a.rank() == 2;
    const std::size_t batch = flat ? 1 : a.dim(0);
    const std::size_t m = a.dims()[a.rank() - 2], n = a.dims()[a.rank() - 1];
    std::vector<double> v(a.numel());
    auto x = a.values();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) v[b * m * n + j * m + i] = x[b * m * n + i * n + j];
    Shape dims = flat ? Shape{n, m} : Shape{batch, n, m};
    Tensor out = detail::make_result(std::move(dims), std::move(v), "transpose");
    detail::record(out, {&a}, [a, batch, m, n](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        if (ga.empty()) return;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[b * m * n + i * n + j] += g[b * m * n + j * m + i];
    });
    return out;
}

/// y = x W^T (+ bias): x [B,in], W [out,in], bias [out] or undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
    require_rank(x, 2, "linear input");
    require_rank(w, 2, "linear weight");
    const std::size_t batch = x.dim(0), in = x.dim(1), outc = w.dim(0);
    if (w.dim(1) != in) {
        throw ShapeError("linear: input " + to_string(x.dims()) + " weight " + to_string(w.dims()));
    }
    if (bias.defined()) require_dims(bias, {outc}, "linear bias");
    std::vector<double> v(batch * outc);
    detail::CMapMat X(x.values().data(), batch, in);
    detail::CMapMat W(w.values().data(), outc, in);
    detail::MapMat Y(v.data(), batch, outc);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < outc; ++o) v[b * outc + o] += bias[o];
    }
    Tensor out = detail::make_result({batch, outc}, std::move(v), "linear");
    detail::record(out, {&x, &w, &bias}, [x, w, bias, batch, in, outc](std::span<const double> g, Gradients& gs) {
        detail::CMapMat G(g.data(), batch, outc);
        if (auto gx = gs.accumulator(x); !gx.empty()) {
            detail::CMapMat W(w.values().data(), outc, in);
            detail::MapMat(gx.data(), batch, in).noalias() += G * W;
        }
        if (auto gw = gs.accumulator(w); !gw.empty()) {
            detail::CMapMat X(x.values().data(), batch, in);
            detail::MapMat(gw.data(), outc, in).noalias() += G.transpose() * X;
        }
        if (bias.defined()) {
            if (auto gb = gs.accumulator(bias); !gb.empty()) {
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < outc; ++o) gb[o] += g[b * outc + o];
            }
        }
    });
    return out;
}

/// Main diagonal of a square matrix [P,P] -> [P].
inline Tensor diag(const Tensor& q) {
    require_rank(q, 2, "diag");
    const std::size_t p = q.dim(0);
    if (q.dim(1) != p) throw ShapeError("diag: square matrix expected");
    std::vector<double> v(p);
    for (std::size_t i = 0; i < p; ++i) v[i] = q[i * p + i];
    Tensor out = detail::make_result({p}, std::move(v), "diag");
    detail::record(out, {&q}, [q, p](std::span<const double> g, Gradients& gs) {
        auto gq = gs.accumulator(q);
        if (gq.empty()) return;
        for (std::size_t i = 0; i < p; ++i) gq[i * p + i] += g[i];
    });
    return out;
}

/// Per-item trace of [B,D,D] -> [B].
inline Tensor trace(const Tensor& a) {
    require_rank(a, 3, "trace");
    const std::size_t batch = a.dim(0), d = a.dim(1);
    if (a.dim(2) != d) throw ShapeError("trace: square matrices expected");
    std::vector<double> v(batch, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < d; ++i) v[b] += a[b * d * d + i * d + i];
    Tensor out = detail::make_result({batch}, std::move(v), "trace");
    detail::record(out, {&a}, [a, batch, d](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        if (ga.empty()) return;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < d; ++i) ga[b * d * d + i * d + i] += g[b];
    });
    return out;
}

/// Multiplies every entry of item b of `a` by s[b]; s has dims [B].
inline Tensor scale_items(const Tensor& a, const Tensor& s) {
    require_rank(s, 1, "scale_items factors");
    if (a.rank() == 0 || a.dim(0) != s.dim(0)) {
        throw ShapeError("scale_items: " + to_string(a.dims()) + " by " + to_string(s.dims()));
    }
    const std::size_t batch = s.dim(0), per = a.numel() / batch;
    std::vector<double> v(a.numel());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < per; ++i) v[b * per + i] = a[b * per + i] * s[b];
    Tensor out = detail::make_result(a.dims(), std::move(v), "scale_items");
    detail::record(out, {&a, &s}, [a, s, batch, per](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        auto gsc = gs.accumulator(s);
        for (std::size_t b = 0; b < batch; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                if (!ga.empty()) ga[b * per + i] += g[b * per + i] * s[b];
                acc += g[b * per + i] * a[b * per + i];
            }
            if (!gsc.empty()) gsc[b] += acc;
        }
    });
    return out;
}

/// a + c * I for every item of [B,D,D].
inline Tensor add_identity(const Tensor& a, double c) {
    require_rank(a, 3, "add_identity");
    const std::size_t batch = a.dim(0), d = a.dim(1);
    std::vector<double> v(a.values().begin(), a.values().end());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < d; ++i) v[b * d * d + i * d + i] += c;
    Tensor out = detail::make_result(a.dims(), std::move(v), "add_identity");
    detail::record(out, {&a}, [a](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
    return out;
}

/// a + s[b] * I for every item of [B,D,D]; s has dims [B].
inline Tensor add_scaled_identity(const Tensor& a, const Tensor& s) {
    require_rank(a, 3, "add_scaled_identity");
    require_dims(s, {a.dim(0)}, "add_scaled_identity factors");
    const std::size_t batch = a.dim(0), d = a.dim(1);
    std::vector<double> v(a.values().begin(), a.values().end());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < d; ++i) v[b * d * d + i * d + i] += s[b];
    Tensor out = detail::make_result(a.dims(), std::move(v), "add_scaled_identity");
    detail::record(out, {&a, &s}, [a, s, batch, d](std::span<const double> g, Gradients& gs) {
        if (auto ga = gs.accumulator(a); !ga.empty()) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (auto gsc = gs.accumulator(s); !gsc.empty()) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < d; ++i) gsc[b] += g[b * d * d + i * d + i];
        }
    });
    return out;
}

/// Mean over the last axis: [..., N] -> [...].
inline Tensor mean_last(const Tensor& a) {
    if (a.rank() == 0) throw ShapeError("mean_last on scalar");
    const std::size_t n = a.dims().back(), rows = a.numel() / n;
    Shape dims(a.dims().begin(), a.dims().end() - 1);
    std::vector<double> v(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += a[r * n + i];
        v[r] = s / static_cast<double>(n);
    }
    Tensor out = detail::make_result(std::move(dims), std::move(v), "mean_last");
    detail::record(out, {&a}, [a, rows, n](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        if (ga.empty()) return;
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += g[r] * inv;
    });
    return out;
}

/// Mean over the first axis: [B, ...] -> [...].
inline Tensor mean_first(const Tensor& a) {
    if (a.rank() == 0) throw ShapeError("mean_first on scalar");
    const std::size_t batch = a.dim(0), per = a.numel() / batch;
    Shape dims(a.dims().begin() + 1, a.dims().end());
    std::vector<double> v(per, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < per; ++i) v[i] += a[b * per + i];
    for (double& x : v) x /= static_cast<double>(batch);
    Tensor out = detail::make_result(std::move(dims), std::move(v), "mean_first");
    detail::record(out, {&a}, [a, batch, per](std::span<const double> g, Gradients& gs) {
        auto ga = gs.accumulator(a);
        if (ga.empty()) return;
        const double inv = 1.0 / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < per; ++i) ga[b * per + i] += g[i] * inv;
    });
    return out;
}

/// Stacks equally-shaped tensors along a new leading axis.
inline Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack of nothing");
    const Shape& d0 = parts.front().dims();
    std::vector<double> v;
    v.reserve(parts.size() * parts.front().numel());
    for (const auto& p : parts) {
        if (p.dims() != d0) throw ShapeError("stack: mismatched part dims");
        v.insert(v.end(), p.values().begin(), p.values().end());
    }
    Shape dims{parts.size()};
    dims.insert(dims.end(), d0.begin(), d0.end());
    Tensor out = detail::make_result(std::move(dims), std::move(v), "stack");
    detail::record_many(out, parts, [parts](std::span<const double> g, Gradients& gs) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            auto gp = gs.accumulator(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
            off += p.numel();
        }
    });
    return out;
}

/// Row-wise l2 normalization of [B,D]: x / max(|x|, eps).
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
    require_rank(x, 2, "l2_normalize_rows");
    const std::size_t rows = x.dim(0), d = x.dim(1);
    std::vector<double> v(x.numel());
    std::vector<double> denom(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += x[r * d + i] * x[r * d + i];
        denom[r] = std::max(std::sqrt(s), eps);
        for (std::size_t i = 0; i < d; ++i) v[r * d + i] = x[r * d + i] / denom[r];
    }
    Tensor out = detail::make_result(x.dims(), std::move(v), "l2_normalize_rows");
    detail::record(out, {&x}, [x, out, denom, rows, d, eps](std::span<const double> g, Gradients& gs) {
        auto gx = gs.accumulator(x);
        if (gx.empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
            if (denom[r] > eps) {
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += out[r * d + i] * g[r * d + i];
                for (std::size_t i = 0; i < d; ++i)
                    gx[r * d + i] += (g[r * d + i] - out[r * d + i] * dot) / denom[r];
            } else {
                for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += g[r * d + i] / eps;
            }
        }
    });
    return out;
}

}  // namespace ccdn
