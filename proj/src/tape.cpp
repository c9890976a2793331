#include "tunet/tape.hpp"

#include <atomic>

namespace tunet {

std::string_view op_name(OpKind op) {
    switch (op) {
        case OpKind::MatMul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::MaxPool2d: return "maxpool2d";
        case OpKind::Upsample2x: return "bilinear_upsample2x";
        case OpKind::LayerNorm: return "layernorm";
        case OpKind::Softmax: return "softmax_lastdim";
        case OpKind::Elu: return "elu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Add: return "add";
        case OpKind::AddBias: return "add_bias";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::ConcatChannels: return "concat_channels";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::Reshape: return "reshape";
        case OpKind::TransposeLast2: return "transpose_last2";
        case OpKind::Gather: return "gather";
        case OpKind::Sum: return "sum";
        case OpKind::BceLoss: return "bce_loss";
    }
    return "unknown";
}

namespace {

std::atomic<bool> g_corrupt_backward{false};

template <typename Scalar>
GradTape<Scalar>*& active_slot() {
    thread_local GradTape<Scalar>* tape = nullptr;
    return tape;
}

}  // namespace

void set_corrupt_backward(bool enabled) { g_corrupt_backward.store(enabled); }
bool corrupt_backward() { return g_corrupt_backward.load(); }

template <typename Scalar>
GradTape<Scalar>::GradTape() : previous_(active_slot<Scalar>()) {
    active_slot<Scalar>() = this;
}

template <typename Scalar>
GradTape<Scalar>::~GradTape() {
    active_slot<Scalar>() = previous_;
}

template <typename Scalar>
GradTape<Scalar>* GradTape<Scalar>::active() {
    return active_slot<Scalar>();
}

template <typename Scalar>
void GradTape<Scalar>::backward(const Tensor<Scalar>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    loss.node()->accumulate_grad(Vector<Scalar>::Ones(1));
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output->grad.size() == 0) {
            continue;
        }
        it->backward(it->output->grad);
    }
}

template class GradTape<float>;
template class GradTape<double>;

}  // namespace tunet
