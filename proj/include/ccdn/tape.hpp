#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ccdn/tensor.hpp"

namespace ccdn {

/// Gradient accumulators keyed by tensor storage, live during one backward pass.
class Gradients {
public:
    /// Buffer to accumulate into; empty when `t` is not tracked.
    std::span<double> accumulator(const Tensor& t) {
        if (!t.requires_grad()) return {};
        auto [it, fresh] = buf_.try_emplace(t.id());
        if (fresh) it->second.assign(t.numel(), 0.0);
        return it->second;
    }

    const std::vector<double>* find(const Tensor& t) const {
        auto it = buf_.find(t.id());
        return it == buf_.end() ? nullptr : &it->second;
    }

private:
    friend class GradientTape;
    std::unordered_map<const detail::Storage*, std::vector<double>> buf_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, Gradients&)>;

/// Leaf gradients produced by backward().
class GradientMap {
public:
    /// Gradient with the dims of `leaf`; zeros when the leaf did not influence the loss.
    Tensor operator()(const Tensor& leaf) const {
        auto it = grads_.find(leaf.id());
        if (it == grads_.end()) return Tensor::zeros(leaf.dims());
        return Tensor(leaf.dims(), it->second);
    }

    bool contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

    std::span<const double> raw(const Tensor& leaf) const {
        auto it = grads_.find(leaf.id());
        if (it == grads_.end()) return {};
        return it->second;
    }

private:
    friend class GradientTape;
    std::unordered_map<const detail::Storage*, std::vector<double>> grads_;
};

/// Records differentiable operations executed on this thread while alive.
/// Tapes nest; the innermost one is active. Not shareable across threads.
class GradientTape {
public:
    GradientTape() : prev_(current()) { current() = this; }
    ~GradientTape() { current() = prev_; }
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    static GradientTape* active() { return current(); }

    void record(const Tensor& output, BackwardFn fn) {
        entries_.push_back({output, std::move(fn)});
    }

    std::size_t size() const { return entries_.size(); }

    /// Reverse replay from a scalar loss. Each entry is visited exactly once.
    GradientMap backward(const Tensor& loss) {
        if (!loss.defined() || loss.numel() != 1) {
            throw ContractError("backward() needs a scalar loss");
        }
        Gradients g;
        if (loss.requires_grad()) g.accumulator(loss)[0] = 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            auto found = g.buf_.find(it->output.id());
            if (found == g.buf_.end()) continue;
            std::vector<double> grad_out = std::move(found->second);
            g.buf_.erase(found);
            it->fn(grad_out, g);
        }
        GradientMap out;
        for (auto& [id, v] : g.buf_) {
            if (!id->from_op) out.grads_.emplace(id, std::move(v));
        }
        return out;
    }

private:
    friend class NoGradScope;

    struct Entry {
        Tensor output;
        BackwardFn fn;
    };

    static GradientTape*& current() {
        thread_local GradientTape* tape = nullptr;
        return tape;
    }

    std::vector<Entry> entries_;
    GradientTape* prev_;
};

/// Suspends recording on this thread while alive (inference, finite differences).
class NoGradScope {
public:
    NoGradScope() : prev_(GradientTape::current()) { GradientTape::current() = nullptr; }
    ~NoGradScope() { GradientTape::current() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    GradientTape* prev_;
};

/// backward() against the active tape.
inline GradientMap backward(const Tensor& loss) {
    GradientTape* tape = GradientTape::active();
    if (!tape) throw ContractError("backward() without an active GradientTape");
    return tape->backward(loss);
}

namespace detail {

inline bool any_tracked(std::initializer_list<const Tensor*> inputs) {
    if (!GradientTape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

/// Marks `out` as an op result and records `fn` if any input is tracked.
template <class Fn>
void record(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
    if (!any_tracked(inputs)) return;
    auto& s = Access::storage(out);
    s.requires_grad = true;
    s.from_op = true;
    GradientTape::active()->record(out, BackwardFn(std::forward<Fn>(fn)));
}

inline bool tracked_any(const std::vector<Tensor>& inputs) {
    if (!GradientTape::active()) return false;
    for (const auto& t : inputs) {
        if (t.requires_grad()) return true;
    }
    return false;
}

template <class Fn>
void record_many(Tensor& out, const std::vector<Tensor>& inputs, Fn&& fn) {
    if (!tracked_any(inputs)) return;
    auto& s = Access::storage(out);
    s.requires_grad = true;
    s.from_op = true;
    GradientTape::active()->record(out, BackwardFn(std::forward<Fn>(fn)));
}

}  // namespace detail

}  // namespace ccdn
