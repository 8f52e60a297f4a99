#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccdn/errors.hpp"

namespace ccdn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

namespace detail {

struct Storage {
    Shape dims;
    std::vector<double> data;
    bool requires_grad = false;
    // Produced by an operation recorded on a tape; only leaves keep their gradients.
    bool from_op = false;
};

inline void check_finite(std::span<const double> v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite value in ") + where);
    }
}

struct Access;

}  // namespace detail

/// Dense row-major float64 array. Copies share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled.
    explicit Tensor(Shape dims) : s_(std::make_shared<detail::Storage>()) {
        s_->data.assign(ccdn::numel(dims), 0.0);
        s_->dims = std::move(dims);
    }

    Tensor(Shape dims, std::vector<double> values, bool requires_grad = false)
        : s_(std::make_shared<detail::Storage>()) {
        if (ccdn::numel(dims) != values.size()) {
            throw ShapeError("tensor of dims " + to_string(dims) + " given " +
                             std::to_string(values.size()) + " values");
        }
        detail::check_finite(values, "tensor construction");
        s_->dims = std::move(dims);
        s_->data = std::move(values);
        s_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
    static Tensor full(Shape dims, double value) {
        const std::size_t n = ccdn::numel(dims);
        return Tensor(std::move(dims), std::vector<double>(n, value));
    }
    static Tensor ones(Shape dims) { return full(std::move(dims), 1.0); }
    static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& dims() const { return s_->dims; }
    std::size_t rank() const { return s_->dims.size(); }
    std::size_t dim(std::size_t i) const { return s_->dims.at(i); }
    std::size_t numel() const { return s_->data.size(); }

    std::span<const double> values() const& { return s_->data; }
    // A span into a temporary would dangle.
    std::span<const double> values() const&& = delete;
    /// Raw write access, used by initializers and optimizers. Keeps values finite.
    std::span<double> mutable_values() { return s_->data; }

    double operator[](std::size_t i) const { return s_->data[i]; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of dims " + to_string(dims()));
        return s_->data[0];
    }

    double at(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw ShapeError("at(): index rank mismatch");
        std::size_t off = 0;
        std::size_t k = 0;
        for (std::size_t i : idx) {
            if (i >= s_->dims[k]) throw ShapeError("at(): index out of range");
            off = off * s_->dims[k] + i;
            ++k;
        }
        return s_->data[off];
    }

    bool requires_grad() const { return s_ && s_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        s_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return !s_->from_op; }

    /// Deep copy as a fresh leaf with the same requires_grad flag.
    Tensor clone() const {
        Tensor t(s_->dims);
        t.s_->data = s_->data;
        t.s_->requires_grad = s_->requires_grad;
        return t;
    }

    /// Deep copy as an untracked leaf.
    Tensor detach() const {
        Tensor t = clone();
        t.s_->requires_grad = false;
        return t;
    }

    const detail::Storage* id() const { return s_.get(); }

private:
    friend struct detail::Access;
    std::shared_ptr<detail::Storage> s_;
};

namespace detail {

struct Access {
    static Storage& storage(const Tensor& t) { return *t.s_; }
    // Takes ownership without validation; callers have checked dims and values.
    static Tensor adopt(Shape dims, std::vector<double> values) {
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->dims = std::move(dims);
        t.s_->data = std::move(values);
        return t;
    }
};

/// Result tensor for an op; values are checked for finiteness.
inline Tensor make_result(Shape dims, std::vector<double> values, const char* op) {
    check_finite(values, op);
    return Access::adopt(std::move(dims), std::move(values));
}

}  // namespace detail

inline bool same_dims(const Tensor& a, const Tensor& b) { return a.dims() == b.dims(); }

inline void require_dims(const Tensor& t, const Shape& dims, const char* what) {
    if (t.dims() != dims) {
        throw ShapeError(std::string(what) + ": expected " + to_string(dims) + ", got " +
                         to_string(t.dims()));
    }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(t.dims()));
    }
}

}  // namespace ccdn
