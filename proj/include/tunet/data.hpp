#pragma once

#include <cstdint>
#include <vector>

#include "tunet/tensor.hpp"

namespace tunet {

/// One image/label pair: image [C x H x W] in normalized units, mask [1 x H x W]
/// with values in {0, 1}.
template <typename Scalar>
struct Sample {
    Tensor<Scalar> image;
    Tensor<Scalar> mask;

    template <typename Other>
    Sample<Other> cast() const {
        return {image.template cast<Other>(), mask.template cast<Other>()};
    }
};

/// Raw CT intensities are divided by this before entering the network.
inline constexpr double kIntensityScale = 1024.0;

/// raw / 1024, no clipping.
template <typename Scalar>
Tensor<Scalar> normalize(const Tensor<Scalar>& raw);

/// Deterministic blob dataset: smooth background noise in [-0.3, 0.3] with one to
/// three non-overlapping bright ellipses; the mask is the union of the ellipses.
/// Each image keeps its foreground fraction in [0.01, 0.40] and its mean in
/// [-0.2, 0.5]. Size must be square, a power of two and at least 32.
std::vector<Sample<double>> synth_dataset(std::uint64_t seed, Index count, Index height, Index width);

template <typename Scalar>
struct DatasetSplit {
    std::vector<Sample<Scalar>> train;
    std::vector<Sample<Scalar>> val;
};

/// Leading samples go to train, the trailing round(count * val_fraction) to val.
template <typename Scalar>
DatasetSplit<Scalar> split_dataset(const std::vector<Sample<Scalar>>& samples, double val_fraction);

template <typename Scalar, typename From>
std::vector<Sample<Scalar>> cast_samples(const std::vector<Sample<From>>& samples) {
    std::vector<Sample<Scalar>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.template cast<Scalar>());
    return out;
}

}  // namespace tunet
