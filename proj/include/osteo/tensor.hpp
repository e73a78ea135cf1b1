#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "osteo/error.hpp"

namespace osteo {

using Shape = std::vector<std::size_t>;

template <typename T>
class Tensor;

template <typename T>
struct TensorImpl;

/// One recorded primitive: its inputs and the closure that pushes the output
/// gradient back into them. Nodes are ordered by creation sequence, which is
/// a valid topological order of the recorded graph.
template <typename T>
struct Node {
    std::uint64_t sequence = 0;
    std::vector<Tensor<T>> inputs;
    std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;  // producer; null for leaves
};

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Gradient recording and finiteness checking are thread-local switches.
bool grad_enabled();
bool finite_checks_enabled();
void set_finite_checks(bool enabled);
std::uint64_t next_node_sequence();

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Shared handle to a dense row-major array. Copies alias the same storage;
/// use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
        impl_->data.assign(shape_numel(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                                 shape_string(shape));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::vector<T>& values() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
        return impl_->data[0];
    }
    T operator[](std::size_t i) const { return impl_->data[i]; }
    T& operator[](std::size_t i) { return impl_->data[i]; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> grad() { return impl_->grad; }

    /// Gradient buffer, allocated zero-filled on first use.
    std::vector<T>& grad_buffer() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        impl_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return impl_->node == nullptr; }
    const std::shared_ptr<Node<T>>& node() const { return impl_->node; }

    Tensor clone() const {
        Tensor copy;
        copy.impl_ = std::make_shared<TensorImpl<T>>();
        copy.impl_->shape = impl_->shape;
        copy.impl_->data = impl_->data;
        copy.impl_->requires_grad = impl_->requires_grad;
        return copy;
    }

    /// Same storage, cut from the graph.
    Tensor detach() const {
        Tensor out;
        out.impl_ = std::make_shared<TensorImpl<T>>();
        out.impl_->shape = impl_->shape;
        out.impl_->data = impl_->data;
        return out;
    }

    TensorImpl<T>* impl() const { return impl_.get(); }

    /// Attaches a backward closure to a freshly computed output when any input
    /// participates in gradient computation.
    void record(std::vector<Tensor<T>> inputs, std::function<void(const TensorImpl<T>&)> backward) {
        if (!grad_enabled()) return;
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (!any) return;
        auto node = std::make_shared<Node<T>>();
        node->sequence = next_node_sequence();
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        impl_->node = std::move(node);
        impl_->requires_grad = true;
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

/// Reverse sweep from `root`. With no seed, root must be a single element and
/// receives gradient 1.
template <typename T>
void backward(Tensor<T>& root, const std::vector<T>* seed = nullptr);

/// Raises NumericError if any element is NaN or Inf (only when finite checks are on).
template <typename T>
void check_finite(const Tensor<T>& t, const char* where);

}  // namespace osteo
