#include "tunet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "tunet/io.hpp"

namespace tunet {

template <typename Scalar>
Tensor<Scalar> bce_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("bce_loss: prediction " + to_string(pred.shape()) + " vs target " +
                             to_string(target.shape()));
    }
    const auto& p = pred.value();
    const auto& y = target.value();
    const Index n = p.size();
    const double lo = kBceEpsilon, hi = 1.0 - kBceEpsilon;
    double total = 0;
    for (Index i = 0; i < n; ++i) {
        if (y[i] != Scalar(0) && y[i] != Scalar(1)) {
            throw ValidationError("bce_loss: target value " + std::to_string(static_cast<double>(y[i])) +
                                  " at index " + std::to_string(i) + " is not binary");
        }
        const double pc = std::clamp(static_cast<double>(p[i]), lo, hi);
        total -= y[i] == Scalar(1) ? std::log(pc) : std::log1p(-pc);
    }
    auto pn = pred.node();
    auto yn = target.node();
    return detail::record<Scalar>(
        OpKind::BceLoss, {pred}, Tensor<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(n))),
        [pn, yn, n, lo, hi](const Vector<Scalar>& g) {
            if (!pn->requires_grad) return;
            Vector<Scalar> gp(n);
            const double scale_n = static_cast<double>(g[0]) / static_cast<double>(n);
            for (Index i = 0; i < n; ++i) {
                const double pv = static_cast<double>(pn->value[i]);
                if (pv < lo || pv > hi) {
                    gp[i] = 0;  // clamped
                    continue;
                }
                const double yv = static_cast<double>(yn->value[i]);
                gp[i] = static_cast<Scalar>((pv - yv) / (pv * (1.0 - pv)) * scale_n);
            }
            pn->accumulate_grad(gp);
        });
}

template <typename Scalar>
AdamWState<Scalar>::AdamWState(const std::vector<NamedTensor<Scalar>>& params, AdamWOptions opts)
    : options(opts) {
    for (const auto& [name, t] : params) {
        m.push_back(Vector<Scalar>::Zero(t.numel()));
        v.push_back(Vector<Scalar>::Zero(t.numel()));
    }
}

namespace {

bool is_norm_or_bias(const std::string& name) {
    return name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta");
}

}  // namespace

template <typename Scalar>
void adamw_step(const std::vector<NamedTensor<Scalar>>& params,
                std::span<const Vector<Scalar>> grads, AdamWState<Scalar>& state, double lr) {
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw DimensionError("adamw_step: " + std::to_string(params.size()) + " parameters, " +
                             std::to_string(grads.size()) + " gradients, " +
                             std::to_string(state.m.size()) + " moment slots");
    }
    const auto& o = state.options;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(o.beta1, t);
    const double bc2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& name = params[p].first;
        auto theta = params[p].second;
        auto& value = theta.mutable_value();
        const auto& g = grads[p];
        if (g.size() != value.size() || state.m[p].size() != value.size()) {
            throw DimensionError("adamw_step: gradient for '" + name + "' has " +
                                 std::to_string(g.size()) + " entries, parameter has " +
                                 std::to_string(value.size()));
        }
        const bool decay = !(o.exclude_norms_and_biases && is_norm_or_bias(name));
        const double shrink = decay ? 1.0 - lr * o.weight_decay : 1.0;
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (Index i = 0; i < value.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * gi;
            const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * gi * gi;
            m[i] = static_cast<Scalar>(mi);
            v[i] = static_cast<Scalar>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            const double step = lr * (m_hat / (std::sqrt(v_hat) + o.eps));
            value[i] = static_cast<Scalar>(static_cast<double>(value[i]) * shrink - step);
        }
    }
}

template <typename Scalar>
void adamw_step(const std::vector<NamedTensor<Scalar>>& params, AdamWState<Scalar>& state, double lr) {
    std::vector<Vector<Scalar>> grads;
    grads.reserve(params.size());
    for (const auto& [name, t] : params) grads.push_back(t.grad());
    adamw_step<Scalar>(params, std::span<const Vector<Scalar>>(grads), state, lr);
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (epochs < 0) fail("epochs must be non-negative");
    if (!(base_lr > 0) || !std::isfinite(base_lr)) fail("base_lr must be positive");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
    if (!(threshold >= 0.0 && threshold <= 1.0)) fail("threshold must lie in [0, 1]");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] <= 0 || milestones[i] >= epochs) {
            fail("milestone " + std::to_string(milestones[i]) + " must lie in (0, epochs=" +
                 std::to_string(epochs) + ")");
        }
        if (i > 0 && milestones[i] <= milestones[i - 1]) fail("milestones must be strictly increasing");
    }
}

double lr_at(long epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) {
        throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(config.epochs) + ")");
    }
    double lr = config.base_lr;
    for (long m : config.milestones) {
        if (epoch >= m) lr *= 0.5;
    }
    return lr;
}

template <typename Scalar>
EvalResult evaluate(const TUnetParams<Scalar>& params, const ModelConfig& config,
                    const std::vector<Sample<Scalar>>& samples, double threshold) {
    if (samples.empty()) {
        throw ContractError("evaluate: empty split");
    }
    ConfusionCounts counts;
    double loss = 0;
    for (const auto& s : samples) {
        const auto prob = forward(s.image, params, config);
        loss += static_cast<double>(bce_loss(prob, s.mask).item());
        counts += confusion(binarize(prob, threshold), mask_from_tensor(s.mask));
    }
    return {loss / static_cast<double>(samples.size()), compute_metrics(counts)};
}

template <typename Scalar>
TrainResult<Scalar> train(const ModelConfig& model_config, const TrainConfig& train_config,
                          const std::vector<Sample<Scalar>>& train_set,
                          const std::vector<Sample<Scalar>>& val_set, const TrainOutputs& outputs) {
    model_config.validate();
    train_config.validate();
    if (train_set.empty()) {
        throw ContractError("train: empty training set");
    }

    TrainResult<Scalar> result;
    result.last = init_params<Scalar>(model_config, train_config.seed);
    result.best = result.last.clone();
    const auto named = result.last.named();

    AdamWOptions opts;
    opts.weight_decay = train_config.weight_decay;
    opts.exclude_norms_and_biases = train_config.decay_exclude_norms_and_biases;
    AdamWState<Scalar> state(named, opts);

    std::ofstream csv;
    if (!outputs.dir.empty()) {
        std::filesystem::create_directories(outputs.dir);
        const auto path = outputs.dir / "metrics.csv";
        csv.open(path, std::ios::trunc);
        if (!csv) throw IoError("cannot open " + path.string() + " for writing");
        csv << metrics_csv_header() << '\n';
        csv.flush();
    }
    auto emit = [&](EpochLog row) {
        if (csv.is_open()) {
            csv << metrics_csv_row(row.epoch, row.split, row.result.loss, row.result.report) << '\n';
            csv.flush();
            if (!csv) throw IoError("write failed for " + (outputs.dir / "metrics.csv").string());
        }
        if (outputs.on_epoch) outputs.on_epoch(row);
        result.log.push_back(std::move(row));
    };

    std::mt19937_64 shuffle_rng(train_config.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(train_config.batch_size);
    double best_dice = -1.0;

    for (long epoch = 0; epoch < train_config.epochs; ++epoch) {
        const double lr = lr_at(epoch, train_config);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0, b = 0; start < order.size(); start += batch, ++b) {
            const std::size_t end = std::min(order.size(), start + batch);
            const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(end - start));
            result.last.zero_grad();
            double batch_loss = 0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = train_set[order[i]];
                GradTape<Scalar> tape;
                const auto loss = bce_loss(forward(s.image, result.last, model_config), s.mask);
                if (!std::isfinite(static_cast<double>(loss.item()))) {
                    throw RuntimeFailure("non-finite training loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(b));
                }
                batch_loss += static_cast<double>(loss.item());
                tape.backward(scale(loss, inv));
            }
            adamw_step(named, state, lr);
            result.step_losses.push_back(batch_loss / static_cast<double>(end - start));
            ++result.steps;
        }

        emit({epoch, "train", result.steps,
              evaluate(result.last, model_config, train_set, train_config.threshold)});
        double dice = result.log.back().result.report.dice;
        if (!val_set.empty()) {
            emit({epoch, "val", result.steps,
                  evaluate(result.last, model_config, val_set, train_config.threshold)});
            dice = result.log.back().result.report.dice;
        }
        if (!std::isfinite(result.log.back().result.loss)) {
            throw RuntimeFailure("non-finite evaluation loss at epoch " + std::to_string(epoch));
        }
        if (dice > best_dice) {
            best_dice = dice;
            result.best = result.last.clone();
            if (!outputs.dir.empty()) save_checkpoint(outputs.dir / "best.ckpt", result.best, model_config);
        }
    }

    if (!outputs.dir.empty()) {
        save_checkpoint(outputs.dir / "last.ckpt", result.last, model_config);
        if (train_config.epochs == 0) save_checkpoint(outputs.dir / "best.ckpt", result.best, model_config);
    }
    return result;
}

#define TUNET_INSTANTIATE_TRAIN(S)                                                                 \
    template Tensor<S> bce_loss(const Tensor<S>&, const Tensor<S>&);                               \
    template struct AdamWState<S>;                                                                 \
    template void adamw_step(const std::vector<NamedTensor<S>>&, std::span<const Vector<S>>,       \
                             AdamWState<S>&, double);                                              \
    template void adamw_step(const std::vector<NamedTensor<S>>&, AdamWState<S>&, double);          \
    template EvalResult evaluate(const TUnetParams<S>&, const ModelConfig&,                        \
                                 const std::vector<Sample<S>>&, double);                           \
    template TrainResult<S> train(const ModelConfig&, const TrainConfig&,                          \
                                  const std::vector<Sample<S>>&, const std::vector<Sample<S>>&,    \
                                  const TrainOutputs&);

TUNET_INSTANTIATE_TRAIN(float)
TUNET_INSTANTIATE_TRAIN(double)

#undef TUNET_INSTANTIATE_TRAIN

}  // namespace tunet
