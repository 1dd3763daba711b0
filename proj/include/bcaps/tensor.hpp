#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bcaps {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
struct Node;

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

/// One vertex of the computation graph. Leaves own parameters and inputs;
/// interior nodes carry the closure that pushes their gradient to `inputs`.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
    bool released = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn<T> backward;

    /// Gradient buffer, zero-filled on first access.
    std::span<T> grad_span() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Dense row-major tensor with reverse-mode autodiff. Copies share the
/// underlying node (handle semantics); use clone()/detach() for a deep copy.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor();
    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor scalar(T value, bool requires_grad = false);

    /// Builds an op result. Records the graph edge only when grad mode is on
    /// and at least one input requires a gradient.
    static Tensor from_op(const char* op, Shape shape, std::vector<T> values,
                          std::vector<Tensor> inputs, BackwardFn<T> backward);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;

    std::span<const T> data() const;
    std::span<T> mutable_data();
    std::span<const T> grad() const;
    bool has_grad() const;
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool on);

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    /// Fresh leaf holding a copy of the values, detached from any graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    /// Reverse sweep from this scalar. The graph is released afterwards; a
    /// second call on the same result throws ContractError.
    void backward() const;

    const char* op_name() const;
    Node<T>& node() const;
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<Node<T>> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace bcaps
