#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tunet/errors.hpp"

namespace tunet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename Scalar>
struct TensorNode {
    Shape shape;
    Vector<Scalar> value;
    Vector<Scalar> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::uint64_t id = 0;

    void accumulate_grad(const Eigen::Ref<const Vector<Scalar>>& g) {
        if (grad.size() == 0) {
            grad = g;
        } else {
            grad += g;
        }
    }
};

std::uint64_t next_tensor_id();

}  // namespace detail

/// Dense row-major tensor handle.
///
/// Copies share the underlying storage and gradient, the same way parameters are
/// shared between a model, its optimizer and the tape that records a forward pass.
/// Values are treated as immutable once an operation has consumed them; the only
/// in-place mutations are gradient accumulation and optimizer updates.
template <typename Scalar>
class Tensor {
public:
    using scalar_type = Scalar;
    using Node = detail::TensorNode<Scalar>;

    Tensor();
    Tensor(Shape shape, Vector<Scalar> values, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, Scalar value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::initializer_list<Scalar> values,
                       bool requires_grad = false);
    static Tensor from(const Shape& shape, std::span<const Scalar> values,
                       bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    Index dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    Index numel() const { return node_->value.size(); }

    const Vector<Scalar>& value() const { return node_->value; }
    std::span<const Scalar> data() const {
        return {node_->value.data(), static_cast<std::size_t>(node_->value.size())};
    }
    /// Direct write access; only for optimizers and fixtures, never while a tape
    /// holds this tensor as a saved input.
    Vector<Scalar>& mutable_value() { return node_->value; }

    Scalar item() const;
    Scalar at(std::initializer_list<Index> idx) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return node_->grad.size() != 0; }
    /// Gradient, or zeros of matching size when nothing has flowed in yet.
    Vector<Scalar> grad() const;
    void zero_grad() { node_->grad.setZero(node_->value.size()); }
    void clear_grad() { node_->grad.resize(0); }

    std::uint64_t id() const { return node_->id; }

    /// Fresh leaf holding a copy of the values.
    Tensor detach() const;

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape(), value().template cast<Other>());
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Row-major linear offset of a multi-index.
Index flat_index(const Shape& shape, std::initializer_list<Index> idx);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tunet
