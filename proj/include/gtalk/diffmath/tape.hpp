#pragma once

#include "gtalk/diffmath/array.hpp"

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace gtalk::diff {

class Tape;

// Handle to a node recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Array& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct BackwardContext {
    const Array& grad_output;
    const Array& output;
    std::span<const Array* const> inputs;
    // One slot per input; null when that input does not need a gradient.
    std::span<Array* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Gradients of every trainable leaf reached by a backward pass. Leaves that the
// output does not depend on still get a zero array of the right shape.
class Gradients {
public:
    const Array& operator[](Var leaf) const { return of(leaf.id()); }
    const Array& of(std::size_t leaf_id) const;
    bool contains(Var leaf) const { return grads_.count(leaf.id()) != 0; }
    std::size_t size() const { return grads_.size(); }
    // Moves a gradient out; used by optimizers to avoid copying large buffers.
    Array take(Var leaf);

private:
    friend class Tape;
    std::unordered_map<std::size_t, Array> grads_;
};

// Records operations in topological order. Built per training step, then dropped.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Array value, bool trainable = true);
    // Non-owning leaf; `value` must outlive the tape and stay unmodified while it is in use.
    Var leaf_ref(const Array& value, bool trainable = true);
    Var constant(Array value) { return leaf(std::move(value), false); }

    // Appends a node. `kind` must have static storage duration.
    Var record(const char* kind, std::vector<Var> inputs, Array value, BackwardFn backward);

    const Array& value(std::size_t id) const;
    const char* kind(std::size_t id) const { return nodes_.at(id).kind; }
    bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    Gradients backward(Var output, const Array& seed) const;

private:
    struct Node {
        const char* kind = "";
        std::vector<std::size_t> inputs;
        Array owned;
        const Array* external = nullptr;
        bool is_leaf = false;
        bool trainable = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
};

} // namespace gtalk::diff
