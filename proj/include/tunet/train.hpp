#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tunet/data.hpp"
#include "tunet/metrics.hpp"
#include "tunet/model.hpp"

namespace tunet {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kBceEpsilon = 1e-7;

/// Mean pixel-wise binary cross-entropy. `target` must be binary.
template <typename Scalar>
Tensor<Scalar> bce_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
    /// Skip decay for biases and layer-norm gains/offsets.
    bool exclude_norms_and_biases = false;
};

template <typename Scalar>
struct AdamWState {
    AdamWOptions options;
    std::vector<Vector<Scalar>> m;
    std::vector<Vector<Scalar>> v;
    long step = 0;

    AdamWState() = default;
    AdamWState(const std::vector<NamedTensor<Scalar>>& params, AdamWOptions opts);
};

/// One decoupled-decay Adam update:
///   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2,
///   theta = theta (1 - lr wd) - lr * mhat / (sqrt(vhat) + eps).
/// Gradients are read from each tensor (zero when none has accumulated).
template <typename Scalar>
void adamw_step(const std::vector<NamedTensor<Scalar>>& params, AdamWState<Scalar>& state, double lr);

/// Same update with explicit gradients, one per parameter.
template <typename Scalar>
void adamw_step(const std::vector<NamedTensor<Scalar>>& params,
                std::span<const Vector<Scalar>> grads, AdamWState<Scalar>& state, double lr);

struct TrainConfig {
    long epochs = 120;
    double base_lr = 1e-3;
    std::vector<long> milestones{60, 100};
    long batch_size = 1;
    double weight_decay = 1e-6;
    bool decay_exclude_norms_and_biases = false;
    std::uint64_t seed = 0;
    /// Train in 64-bit; otherwise 32-bit.
    bool gradcheck_mode = false;
    double threshold = kDefaultThreshold;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// base_lr halved once for every milestone <= epoch.
double lr_at(long epoch, const TrainConfig& config);

struct EvalResult {
    double loss = 0;
    MetricsReport report;
};

/// Micro-averaged metrics over a split plus mean BCE.
template <typename Scalar>
EvalResult evaluate(const TUnetParams<Scalar>& params, const ModelConfig& config,
                    const std::vector<Sample<Scalar>>& samples, double threshold);

struct EpochLog {
    long epoch;
    std::string split;
    long step;  // optimizer steps completed when the row was written
    EvalResult result;
};

template <typename Scalar>
struct TrainResult {
    TUnetParams<Scalar> last;
    TUnetParams<Scalar> best;
    std::vector<EpochLog> log;
    /// Mean batch loss of every optimizer step, measured before the update.
    std::vector<double> step_losses;
    long steps = 0;
};

struct TrainOutputs {
    /// When set, metrics.csv, last.ckpt and best.ckpt are written here.
    std::filesystem::path dir;
    std::function<void(const EpochLog&)> on_epoch;
};

/// Seeded shuffle, per-batch AdamW updates with the staged schedule, and one
/// metrics row per split after every epoch. The best checkpoint tracks the
/// highest validation Dice (training Dice when there is no validation split).
template <typename Scalar>
TrainResult<Scalar> train(const ModelConfig& model_config, const TrainConfig& train_config,
                          const std::vector<Sample<Scalar>>& train_set,
                          const std::vector<Sample<Scalar>>& val_set, const TrainOutputs& outputs = {});

}  // namespace tunet
