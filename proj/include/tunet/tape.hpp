#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "tunet/tensor.hpp"

namespace tunet {

enum class OpKind {
    MatMul,
    Conv2d,
    MaxPool2d,
    Upsample2x,
    LayerNorm,
    Softmax,
    Elu,
    Sigmoid,
    Add,
    AddBias,
    Mul,
    Scale,
    ConcatChannels,
    ConcatCols,
    SliceCols,
    Reshape,
    TransposeLast2,
    Gather,
    Sum,
    BceLoss,
};

std::string_view op_name(OpKind op);

template <typename Scalar>
struct TapeRecord {
    using NodePtr = std::shared_ptr<detail::TensorNode<Scalar>>;

    OpKind op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    /// Receives the output gradient and accumulates into the inputs. Values the
    /// rule needs (argmax indices, normalized activations, ...) live in its captures.
    std::function<void(const Vector<Scalar>&)> backward;
};

/// Reverse-mode tape. While a GradTape is alive on a thread it is the active tape
/// for that thread and every differentiable op whose inputs require gradients
/// appends a record. Records are appended in execution order, so the vector is
/// already topologically sorted.
template <typename Scalar>
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void push(TapeRecord<Scalar> record) { records_.push_back(std::move(record)); }
    const std::vector<TapeRecord<Scalar>>& records() const { return records_; }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
    /// accumulate into leaves; callers zero them between steps.
    void backward(const Tensor<Scalar>& loss);

    static GradTape* active();

private:
    std::vector<TapeRecord<Scalar>> records_;
    GradTape* previous_;
};

/// Backward through the thread's active tape.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
    auto* tape = GradTape<Scalar>::active();
    if (tape == nullptr) {
        throw ContractError("backward() called with no active GradTape");
    }
    tape->backward(loss);
}

namespace detail {

/// Marks `out` as differentiable and records it when a tape is active and any
/// input needs a gradient. Returns `out` unchanged otherwise.
template <typename Scalar>
Tensor<Scalar> record(OpKind op, std::initializer_list<Tensor<Scalar>> inputs, Tensor<Scalar> out,
                      std::function<void(const Vector<Scalar>&)> backward) {
    auto* tape = GradTape<Scalar>::active();
    if (tape == nullptr) {
        return out;
    }
    bool any = false;
    for (const auto& t : inputs) {
        any = any || t.requires_grad();
    }
    if (!any) {
        return out;
    }
    out.set_requires_grad(true);
    TapeRecord<Scalar> rec{op, {}, out.node(), std::move(backward)};
    for (const auto& t : inputs) {
        rec.inputs.push_back(t.node());
    }
    tape->push(std::move(rec));
    return out;
}

template <typename Scalar, typename Expr>
void accumulate(const std::shared_ptr<TensorNode<Scalar>>& node, const Expr& g) {
    if (node->requires_grad) {
        node->accumulate_grad(g);
    }
}

}  // namespace detail

/// Test hook: when set, the ELU backward rule is deliberately wrong so gradient
/// checks can demonstrate they catch broken rules.
void set_corrupt_backward(bool enabled);
bool corrupt_backward();

extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace tunet
