#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tunet/tensor.hpp"

namespace tunet {

struct BinaryMask {
    Shape shape;
    std::vector<std::uint8_t> bits;
};

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
    double miou = 0, dice = 0, pixel_acc = 0, precision = 0, recall = 0;
    ConfusionCounts counts;
};

inline constexpr double kDefaultThreshold = 0.8;

/// pixel -> 1 iff prob > threshold. Probabilities must lie in [0, 1].
template <typename Scalar>
BinaryMask binarize(const Tensor<Scalar>& prob, double threshold = kDefaultThreshold);

/// Validates that a tensor holds only 0/1 and converts it.
template <typename Scalar>
BinaryMask mask_from_tensor(const Tensor<Scalar>& mask);

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth);

/// Precision, recall, Dice, pixel accuracy and the mean of foreground and
/// background IoU. A ratio with a zero denominator is 1 when the class it
/// measures is absent from both masks and 0 otherwise.
MetricsReport compute_metrics(const ConfusionCounts& counts);

/// `epoch,split,loss,miou,dice,pixel_acc,precision,recall`
std::string metrics_csv_header();
std::string metrics_csv_row(long epoch, const std::string& split, double loss,
                            const MetricsReport& report);

}  // namespace tunet
