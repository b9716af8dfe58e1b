#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cmw {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

namespace detail {

// One vertex of the reverse-mode graph. `grad` is empty until something
// flows into it; `backward` pushes this node's grad into its parents.
template <typename Scalar>
struct TensorNode {
    Shape shape;
    ArrayX<Scalar> data;
    ArrayX<Scalar> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    bool is_leaf() const { return !backward; }

    ArrayX<Scalar>& grad_buffer()
    {
        if (grad.size() != data.size()) grad = ArrayX<Scalar>::Zero(data.size());
        return grad;
    }
};

} // namespace detail

/// Dense row-major N-d array that records the operations producing it so
/// gradients can be propagated back to leaves with `backward`.
///
/// Copies are shallow: two Tensor handles may refer to the same node.
/// Use `detach()` for an independent copy without history.
template <typename Scalar>
class Tensor {
public:
    using Node = detail::TensorNode<Scalar>;
    using Array = ArrayX<Scalar>;

    Tensor() : node_(std::make_shared<Node>()) {}

    explicit Tensor(Shape shape, bool requires_grad = false)
        : Tensor(shape, Array::Zero(shape_numel(shape)), requires_grad)
    {
    }

    Tensor(Shape shape, Array data, bool requires_grad = false)
        : node_(std::make_shared<Node>())
    {
        for (Index d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_string(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("Tensor: shape " + shape_string(shape) + " does not match "
                                        + std::to_string(data.size()) + " values");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }

    static Tensor constant(Shape shape, Scalar value, bool requires_grad = false)
    {
        const Index n = shape_numel(shape);
        return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
    }

    static Tensor scalar(Scalar value, bool requires_grad = false)
    {
        return Tensor(Shape{1}, Array::Constant(1, value), requires_grad);
    }

    static Tensor from_values(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false)
    {
        Array data(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar v : values) data[i++] = v;
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    Index rank() const { return static_cast<Index>(node_->shape.size()); }
    Index dim(Index axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
    Index numel() const { return node_->data.size(); }

    Array& data() { return node_->data; }
    const Array& data() const { return node_->data; }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && node_->data.size() > 0; }
    const Array& grad() const { return node_->grad; }
    Array& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.resize(0); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->is_leaf(); }

    Scalar item() const
    {
        if (numel() != 1) throw std::invalid_argument("Tensor::item on tensor of shape " + shape_string(shape()));
        return node_->data[0];
    }

    Scalar& at(Index i) { return node_->data[i]; }
    Scalar at(Index i) const { return node_->data[i]; }

    Tensor detach() const { return Tensor(shape(), data(), false); }

    Tensor reshaped(Shape shape) const;

    template <typename Other>
    Tensor<Other> cast() const
    {
        return Tensor<Other>(shape(), data().template cast<Other>(), requires_grad());
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<Node>& node() const { return node_; }

    // Builds a non-leaf result. `backward` receives the result node and is
    // only invoked when its grad is populated.
    static Tensor make_result(Shape shape, Array data, std::vector<Tensor> parents,
                              std::function<void(Node&)> backward)
    {
        Tensor out(std::move(shape), std::move(data), false);
        bool needs = false;
        for (const Tensor& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            out.node_->requires_grad = true;
            for (Tensor& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

private:
    std::shared_ptr<Node> node_;
};

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape new_shape) const
{
    if (shape_numel(new_shape) != numel()) {
        throw std::invalid_argument("reshape: " + shape_string(shape()) + " -> " + shape_string(new_shape));
    }
    return make_result(std::move(new_shape), data(), {*this}, [](Node& self) {
        auto& parent = *self.parents[0];
        if (parent.requires_grad) parent.grad_buffer() += self.grad;
    });
}

/// Reverse-mode sweep from a scalar `loss`.
///
/// Interior gradients are recomputed on every call; leaf gradients
/// accumulate until the caller zeroes them.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss)
{
    using Node = detail::TensorNode<Scalar>;
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) {
        if (!node->is_leaf()) node->grad = ArrayX<Scalar>::Zero(node->data.size());
    }
    loss.node()->grad_buffer()[0] += Scalar(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->is_leaf()) node->backward(*node);
    }
}

/// Throws if any element of `t` is NaN or infinite.
template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const std::string& what)
{
    if (!t.data().allFinite()) throw std::runtime_error(what + ": non-finite value encountered");
}

} // namespace cmw
