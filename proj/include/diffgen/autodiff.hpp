#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "diffgen/tensor.hpp"

namespace diffgen {

// Reverse-mode autodiff over a define-by-run trace. Every op appends a node
// whose creation id fixes the adjoint replay order, so gradient accumulation
// is bit-reproducible for a given graph.

template <typename S>
struct NodeT;

template <typename S>
using VarT = std::shared_ptr<NodeT<S>>;

template <typename S>
struct NodeT {
    TensorT<S> value;
    TensorT<S> grad;  // allocated on first write
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::string name;  // set for parameters and named inputs
    std::vector<VarT<S>> parents;
    std::function<void(NodeT<S>&)> backward;

    TensorT<S>& ensure_grad() {
        if (grad.numel() != value.numel()) grad = TensorT<S>::zeros(value.shape());
        return grad;
    }

    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }
};

template <typename S>
VarT<S> constant(TensorT<S> value) {
    auto n = std::make_shared<NodeT<S>>();
    n->value = std::move(value);
    n->id = NodeT<S>::next_id();
    return n;
}

template <typename S>
VarT<S> leaf(TensorT<S> value, std::string name, bool requires_grad = true) {
    auto n = std::make_shared<NodeT<S>>();
    n->value = std::move(value);
    n->name = std::move(name);
    n->requires_grad = requires_grad;
    n->id = NodeT<S>::next_id();
    return n;
}

/// Build an op node. When no parent requires gradients the parents and the
/// adjoint hook are dropped, so inference-mode graphs collapse to bare values.
template <typename S>
VarT<S> make_op(TensorT<S> value, std::vector<VarT<S>> parents, std::function<void(NodeT<S>&)> backward) {
    auto n = std::make_shared<NodeT<S>>();
    n->value = std::move(value);
    n->id = NodeT<S>::next_id();
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return n;
}

/// Ordered trace of the op applications reachable from an output, newest
/// first. Replaying the hooks in this order performs adjoint accumulation.
template <typename S>
struct ComputationRecordT {
    VarT<S> output;
    std::vector<NodeT<S>*> ordered;
};

template <typename S>
ComputationRecordT<S> record_trace(const VarT<S>& out) {
    ComputationRecordT<S> rec;
    rec.output = out;
    std::unordered_set<const NodeT<S>*> seen;
    std::vector<NodeT<S>*> stack{out.get()};
    seen.insert(out.get());
    while (!stack.empty()) {
        NodeT<S>* n = stack.back();
        stack.pop_back();
        rec.ordered.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(rec.ordered.begin(), rec.ordered.end(),
              [](const NodeT<S>* a, const NodeT<S>* b) { return a->id > b->id; });
    return rec;
}

/// Accumulate d(output)·seed into the grad of every reachable node.
template <typename S>
void backward_grad(ComputationRecordT<S>& rec, const TensorT<S>& seed) {
    if (!rec.output->value.same_shape(seed))
        throw std::invalid_argument("backward_grad: seed shape " + shape_str(seed.shape()) + " != output shape " +
                                    shape_str(rec.output->value.shape()));
    auto& g = rec.output->ensure_grad();
    for (std::size_t i = 0; i < seed.numel(); ++i) g[i] += seed[i];
    for (NodeT<S>* n : rec.ordered) {
        if (n->backward && n->requires_grad) n->backward(*n);
    }
}

template <typename S>
void backward_grad(const VarT<S>& out, const TensorT<S>& seed) {
    auto rec = record_trace(out);
    backward_grad(rec, seed);
}

/// Backward from a scalar output with seed 1.
template <typename S>
void backward(const VarT<S>& out) {
    backward_grad(out, TensorT<S>::scalar(S(1)));
}

/// Named parameter registry. Registration order is the optimizer's
/// iteration order and the checkpoint's serialization order.
template <typename S>
class ParamStoreT {
public:
    VarT<S> add(const std::string& name, TensorT<S> init) {
        for (const auto& p : params_)
            if (p->name == name) throw std::invalid_argument("duplicate parameter name: " + name);
        auto v = leaf<S>(std::move(init), name, true);
        params_.push_back(v);
        return v;
    }

    const std::vector<VarT<S>>& params() const { return params_; }

    VarT<S> find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p;
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad().fill(S(0));
        }
    }

    void set_requires_grad(bool on) {
        for (auto& p : params_) p->requires_grad = on;
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    /// Gradient snapshot by name; parameters untouched by the last backward
    /// pass report zeros.
    std::map<std::string, TensorT<S>> named_grads() const {
        std::map<std::string, TensorT<S>> out;
        for (const auto& p : params_) {
            out.emplace(p->name, p->grad.numel() == p->value.numel() ? p->grad : TensorT<S>::zeros(p->value.shape()));
        }
        return out;
    }

private:
    std::vector<VarT<S>> params_;
};

}  // namespace diffgen
