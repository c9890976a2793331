#include "tunet/tensor.hpp"

#include <atomic>
#include <sstream>

namespace tunet {

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Index flat_index(const Shape& shape, std::initializer_list<Index> idx) {
    if (idx.size() != shape.size()) {
        throw DimensionError("index rank " + std::to_string(idx.size()) + " does not match shape " +
                             to_string(shape));
    }
    Index offset = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
        if (i < 0 || i >= shape[axis]) {
            throw DimensionError("index out of range for shape " + to_string(shape));
        }
        offset = offset * shape[axis] + i;
        ++axis;
    }
    return offset;
}

namespace detail {

std::uint64_t next_tensor_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar>::Tensor() : Tensor(Shape{1}, Vector<Scalar>::Zero(1)) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Vector<Scalar> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
    for (Index d : shape) {
        if (d <= 0) {
            throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
        }
    }
    if (shape.empty()) {
        throw DimensionError("tensor rank must be at least 1");
    }
    if (tunet::numel(shape) != values.size()) {
        throw DimensionError("shape " + to_string(shape) + " needs " +
                             std::to_string(tunet::numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    node_->id = detail::next_tensor_id();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(const Shape& shape, Scalar value, bool requires_grad) {
    return Tensor(shape, Vector<Scalar>::Constant(tunet::numel(shape), value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(const Shape& shape, std::initializer_list<Scalar> values,
                                    bool requires_grad) {
    return from(shape, std::span<const Scalar>(values.begin(), values.size()), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(const Shape& shape, std::span<const Scalar> values,
                                    bool requires_grad) {
    Vector<Scalar> v(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), v.data());
    return Tensor(shape, std::move(v), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
    return full(Shape{1}, value, requires_grad);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + to_string(shape()));
    }
    return node_->value[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> idx) const {
    return node_->value[flat_index(shape(), idx)];
}

template <typename Scalar>
Vector<Scalar> Tensor<Scalar>::grad() const {
    if (node_->grad.size() == 0) {
        return Vector<Scalar>::Zero(node_->value.size());
    }
    return node_->grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
    return Tensor(shape(), value());
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace tunet
