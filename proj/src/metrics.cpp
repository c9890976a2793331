#include "tunet/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace tunet {

template <typename Scalar>
BinaryMask binarize(const Tensor<Scalar>& prob, double threshold) {
    BinaryMask mask{prob.shape(), std::vector<std::uint8_t>(static_cast<std::size_t>(prob.numel()))};
    const auto& v = prob.value();
    for (Index i = 0; i < v.size(); ++i) {
        const double p = static_cast<double>(v[i]);
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError("binarize: probability " + std::to_string(p) + " at index " +
                                  std::to_string(i) + " is outside [0, 1]");
        }
        mask.bits[static_cast<std::size_t>(i)] = p > threshold ? 1 : 0;
    }
    return mask;
}

template <typename Scalar>
BinaryMask mask_from_tensor(const Tensor<Scalar>& t) {
    BinaryMask mask{t.shape(), std::vector<std::uint8_t>(static_cast<std::size_t>(t.numel()))};
    const auto& v = t.value();
    for (Index i = 0; i < v.size(); ++i) {
        if (v[i] != Scalar(0) && v[i] != Scalar(1)) {
            throw ValidationError("mask value " + std::to_string(static_cast<double>(v[i])) +
                                  " at index " + std::to_string(i) + " is not binary");
        }
        mask.bits[static_cast<std::size_t>(i)] = v[i] == Scalar(1) ? 1 : 0;
    }
    return mask;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
    if (pred.shape != truth.shape || pred.bits.size() != truth.bits.size()) {
        throw ValidationError("confusion: prediction " + to_string(pred.shape) +
                              " and ground truth " + to_string(truth.shape) + " differ in shape");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        const auto p = pred.bits[i], t = truth.bits[i];
        if (p > 1 || t > 1) {
            throw ValidationError("confusion: non-binary value at index " + std::to_string(i));
        }
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool class_absent_from_both) {
    if (den == 0) return class_absent_from_both ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(const ConfusionCounts& c) {
    if (c.total() == 0) {
        throw ContractError("compute_metrics: no pixels counted");
    }
    const bool fg_absent = c.tp + c.fp + c.fn == 0;
    const bool bg_absent = c.tn + c.fp + c.fn == 0;
    MetricsReport r;
    r.counts = c;
    r.precision = ratio(c.tp, c.tp + c.fp, fg_absent);
    r.recall = ratio(c.tp, c.tp + c.fn, fg_absent);
    r.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, fg_absent);
    r.pixel_acc = ratio(c.tp + c.tn, c.total(), false);
    const double iou_fg = ratio(c.tp, c.tp + c.fp + c.fn, fg_absent);
    const double iou_bg = ratio(c.tn, c.tn + c.fp + c.fn, bg_absent);
    r.miou = 0.5 * (iou_fg + iou_bg);
    return r;
}

std::string metrics_csv_header() { return "epoch,split,loss,miou,dice,pixel_acc,precision,recall"; }

std::string metrics_csv_row(long epoch, const std::string& split, double loss,
                            const MetricsReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ld,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", epoch, split.c_str(), loss,
                  r.miou, r.dice, r.pixel_acc, r.precision, r.recall);
    return buf;
}

template BinaryMask binarize(const Tensor<float>&, double);
template BinaryMask binarize(const Tensor<double>&, double);
template BinaryMask mask_from_tensor(const Tensor<float>&);
template BinaryMask mask_from_tensor(const Tensor<double>&);

}  // namespace tunet
