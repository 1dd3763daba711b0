#include "bcaps/tensor.hpp"

#include "bcaps/error.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <unordered_set>

namespace bcaps {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_str(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

template <class T>
Tensor<T>::Tensor() = default;

template <class T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) {
    for (auto extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    node_ = std::make_shared<Node<T>>();
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    for (auto extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (values.size() != shape_numel(shape)) {
        throw DimensionError(fmt::format("shape {} needs {} values, got {}", shape_str(shape),
                                         shape_numel(shape), values.size()));
    }
    node_ = std::make_shared<Node<T>>();
    node_->data = std::move(values);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::from_op(const char* op, Shape shape, std::vector<T> values,
                             std::vector<Tensor> inputs, BackwardFn<T> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs_grad = needs_grad || in.node().requires_grad;
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->leaf = false;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node_);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

template <class T>
Node<T>& Tensor<T>::node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
}

template <class T>
const Shape& Tensor<T>::shape() const { return node().shape; }

template <class T>
std::size_t Tensor<T>::numel() const { return node().data.size(); }

template <class T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, shape_str(s)));
    }
    return s[axis];
}

template <class T>
std::span<const T> Tensor<T>::data() const { return node().data; }

template <class T>
std::span<T> Tensor<T>::mutable_data() { return node().data; }

template <class T>
std::span<const T> Tensor<T>::grad() const { return node().grad; }

template <class T>
bool Tensor<T>::has_grad() const { return !node().grad.empty(); }

template <class T>
void Tensor<T>::zero_grad() {
    auto& n = node();
    if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <class T>
bool Tensor<T>::requires_grad() const { return node().requires_grad; }

template <class T>
void Tensor<T>::set_requires_grad(bool on) {
    auto& n = node();
    if (!n.leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
    n.requires_grad = on;
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node().data[0];
}

template <class T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) {
        throw DimensionError(fmt::format("index of rank {} into shape {}", index.size(), shape_str(s)));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw DimensionError(fmt::format("index {} out of range on axis {}", i, axis));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node().data[flat];
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
    const auto& n = node();
    auto copy = std::make_shared<Node<T>>();
    copy->shape = n.shape;
    copy->data = n.data;
    return Tensor(std::move(copy));
}

template <class T>
const char* Tensor<T>::op_name() const { return node().op; }

template <class T>
void Tensor<T>::backward() const {
    auto& root = node();
    if (root.released) {
        throw ContractError("backward() called again on a graph that was already consumed; run a fresh forward pass");
    }
    if (root.data.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
    }
    if (!root.requires_grad) {
        throw ContractError("backward() on a tensor that does not depend on any parameter");
    }

    // Iterative post-order DFS yields inputs before consumers.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [current, next] = stack.back();
        if (next < current->inputs.size()) {
            Node<T>* child = current->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                if (child->released) {
                    throw ContractError(std::string("graph node '") + child->op +
                                        "' was released by an earlier backward()");
                }
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(current);
            stack.pop_back();
        }
    }

    root.grad_span()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->leaf && n->backward && !n->grad.empty()) n->backward(*n);
    }

    for (Node<T>* n : order) {
        if (n->leaf) continue;
        n->backward = nullptr;
        n->inputs.clear();
        n->inputs.shrink_to_fit();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->released = true;
    }
}

template class Tensor<float>;
template class Tensor<double>;

} // namespace bcaps
