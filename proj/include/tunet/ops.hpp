#pragma once

#include <vector>

#include "tunet/tape.hpp"
#include "tunet/tensor.hpp"

// Differentiable primitives. Every function records a backward rule on the
// active GradTape when one of its inputs requires a gradient. Images and feature
// maps are [C x H x W]; token sequences are [L x d].

namespace tunet {

/// [m x k] * [k x p] -> [m x p].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Same-padded cross-correlation with per-channel bias. `w` is [C_out x C_in x k x k]
/// with k in {1, 3}.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b);

/// 2x2 stride-2 max pooling. Ties resolve to the first element in row-major order.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x);

/// Bilinear x2 upsampling, half-pixel centers, edge-clamped source coordinates.
template <typename Scalar>
Tensor<Scalar> bilinear_upsample2x(const Tensor<Scalar>& x);

/// Per-row normalization over the last axis of an [L x d] tensor.
template <typename Scalar>
Tensor<Scalar> layernorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                         const Tensor<Scalar>& beta, Scalar eps = Scalar(1e-5));

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> elu(const Tensor<Scalar>& x, Scalar alpha = Scalar(1));

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Adds a length-d bias to every row of an [L x d] tensor.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

/// [C1 x H x W] ++ [C2 x H x W] -> [(C1+C2) x H x W].
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Column-wise concatenation of [L x d_i] blocks.
template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts);

/// Columns [start, start+count) of an [L x d] tensor.
template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, const Shape& shape);

/// Swaps the two trailing axes; leading axes are treated as a batch.
template <typename Scalar>
Tensor<Scalar> transpose_last2(const Tensor<Scalar>& x);

/// out.flat[i] = x.flat[index[i]]. Backward scatters (adds) into x.
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, const Shape& shape, std::vector<Index> index);

/// Sum of all elements as a [1] tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

/// Affine layer on row vectors: x * w + b, with w [d_in x d_out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
    return add_bias(matmul(x, w), b);
}

}  // namespace tunet
