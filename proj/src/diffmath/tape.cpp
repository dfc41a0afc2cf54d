#include "gtalk/diffmath/tape.hpp"

#include "gtalk/util/error.hpp"

namespace gtalk::diff {

const Array& Var::value() const {
    if (!tape_) throw Error("value() on an unbound Var");
    return tape_->value(id_);
}

const Array& Gradients::of(std::size_t leaf_id) const {
    auto it = grads_.find(leaf_id);
    if (it == grads_.end()) throw Error("no gradient for node " + std::to_string(leaf_id) + " (not a trainable leaf)");
    return it->second;
}

Array Gradients::take(Var leaf) {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) throw Error("no gradient for node " + std::to_string(leaf.id()));
    Array out = std::move(it->second);
    grads_.erase(it);
    return out;
}

Var Tape::leaf(Array value, bool trainable) {
    Node n;
    n.kind = "leaf";
    n.owned = std::move(value);
    n.is_leaf = true;
    n.trainable = trainable;
    n.requires_grad = trainable;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf_ref(const Array& value, bool trainable) {
    Node n;
    n.kind = "leaf";
    n.external = &value;
    n.is_leaf = true;
    n.trainable = trainable;
    n.requires_grad = trainable;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* kind, std::vector<Var> inputs, Array value, BackwardFn backward) {
    Node n;
    n.kind = kind;
    n.owned = std::move(value);
    n.backward = std::move(backward);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape() != this) throw Error(std::string("op '") + kind + "': input recorded on a different tape");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Array& Tape::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
}

Gradients Tape::backward(Var output, const Array& seed) const {
    if (nodes_.empty()) throw Error("backward on an empty tape");
    if (output.tape() != this) throw Error("backward: output belongs to a different tape");
    const Array& out_value = value(output.id());
    if (seed.shape() != out_value.shape())
        throw ShapeError("backward: seed shape " + shape_string(seed.shape()) + " does not match output shape " +
                         shape_string(out_value.shape()));

    std::vector<Array> grads(output.id() + 1);
    if (nodes_[output.id()].requires_grad) grads[output.id()] = seed;

    std::vector<const Array*> in_values;
    std::vector<Array*> in_grads;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (node.is_leaf || grads[i].empty() || !node.backward) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t in : node.inputs) {
            in_values.push_back(&value(in));
            if (nodes_[in].requires_grad) {
                if (grads[in].empty()) grads[in] = Array::zeros_like(value(in));
                in_grads.push_back(&grads[in]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardContext{grads[i], value(i), in_values, in_grads});
        // Interior gradients are no longer needed once propagated.
        grads[i] = Array();
    }

    Gradients result;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& node = nodes_[i];
        if (!node.is_leaf || !node.trainable) continue;
        if (i < grads.size() && !grads[i].empty())
            result.grads_.emplace(i, std::move(grads[i]));
        else
            result.grads_.emplace(i, Array::zeros_like(value(i)));
    }
    return result;
}

} // namespace gtalk::diff
