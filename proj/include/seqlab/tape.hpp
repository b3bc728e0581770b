#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seqlab/tensor.hpp"

namespace seqlab {

template <class T>
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Dynamic reverse-mode tape over eagerly evaluated ops. Values are kept for
/// the lifetime of the tape; nodes are recorded in topological order and
/// replayed once, in reverse, by backward().
template <class T>
class Tape {
public:
    Var<T> input(Tensor<T> v, bool requires_grad = false) {
        slots_.push_back(Slot{std::move(v), Tensor<T>{}, requires_grad});
        return Var<T>{static_cast<std::int32_t>(slots_.size() - 1)};
    }

    const Tensor<T>& val(Var<T> v) const { return slots_[idx(v)].value; }
    bool needs_grad(Var<T> v) const { return slots_[idx(v)].requires_grad; }

    /// Gradient buffer, lazily allocated as zeros of the value's shape.
    Tensor<T>& grad(Var<T> v) {
        Slot& s = slots_[idx(v)];
        if (s.grad.data.empty() && s.value.numel() > 0) s.grad = Tensor<T>(s.value.shape);
        return s.grad;
    }

    /// Records the output of an op. make_backward is called with the output
    /// Var and must return the backward closure; if no input requires grad the
    /// node is dropped and only the value is kept.
    template <class Factory>
    Var<T> record(Tensor<T> out, std::vector<std::int32_t> inputs, const char* op_name,
                  Factory make_backward) {
        bool any = false;
        for (auto i : inputs) any = any || slots_[static_cast<std::size_t>(i)].requires_grad;
        Var<T> v = input(std::move(out), any);
        if (any) nodes_.push_back(Node{v.id, std::move(inputs), op_name, make_backward(v)});
        return v;
    }

    bool any_requires_grad(std::initializer_list<Var<T>> vs) const {
        for (auto v : vs)
            if (needs_grad(v)) return true;
        return false;
    }

    /// Reverse sweep from a scalar root. With check_finite set, throws as soon
    /// as a node's incoming gradient turns non-finite, naming the op.
    void backward(Var<T> root) {
        require(val(root).numel() == 1, "backward: root must be scalar");
        require(needs_grad(root), "backward: root does not require grad");
        grad(root)[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (check_finite) {
                const Tensor<T>& g = grad(Var<T>{it->output});
                if (!g.all_finite())
                    throw std::runtime_error(std::string("non-finite gradient entering op '") +
                                             it->op_name + "'");
            }
            it->backward_fn(*this);
            if (check_finite) {
                for (auto i : it->inputs) {
                    Var<T> in{i};
                    if (!needs_grad(in)) continue;
                    if (!grad(in).all_finite())
                        throw std::runtime_error(
                            std::string("non-finite gradient produced by op '") + it->op_name +
                            "'");
                }
            }
        }
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_slots() const { return slots_.size(); }

    bool check_finite = false;

private:
    struct Slot {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
    };
    struct Node {
        std::int32_t output;
        std::vector<std::int32_t> inputs;
        const char* op_name;
        std::function<void(Tape&)> backward_fn;
    };

    static std::size_t idx(Var<T> v) { return static_cast<std::size_t>(v.id); }

    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
};

}  // namespace seqlab
