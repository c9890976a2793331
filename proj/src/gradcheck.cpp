#include "tunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tunet/data.hpp"
#include "tunet/train.hpp"

namespace tunet {

double relative_error(double analytic, double numeric, double floor) {
    const double den = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / den;
}

GradCheckReport gradcheck(const std::function<Tensor<double>()>& loss,
                          const std::vector<NamedTensor<double>>& inputs,
                          const GradCheckOptions& options) {
    for (const auto& [name, t] : inputs) {
        auto handle = t;
        handle.set_requires_grad(true);
        handle.zero_grad();
    }
    {
        GradTape<double> tape;
        tape.backward(loss());
    }

    Index total = 0;
    for (const auto& [name, t] : inputs) total += t.numel();
    std::vector<Index> coords(static_cast<std::size_t>(total));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.samples > 0 && options.samples < total) {
        std::vector<Index> chosen;
        std::mt19937_64 rng(options.seed);
        std::sample(coords.begin(), coords.end(), std::back_inserter(chosen), options.samples, rng);
        coords = std::move(chosen);
    }

    GradCheckReport report;
    for (Index flat : coords) {
        std::size_t which = 0;
        Index offset = flat;
        while (offset >= inputs[which].second.numel()) {
            offset -= inputs[which].second.numel();
            ++which;
        }
        auto tensor = inputs[which].second;
        auto& value = tensor.mutable_value();
        const double original = value[offset];
        value[offset] = original + options.step;
        const double plus = loss().item();
        value[offset] = original - options.step;
        const double minus = loss().item();
        value[offset] = original;

        GradCheckEntry e;
        e.name = inputs[which].first;
        e.index = offset;
        e.analytic = tensor.grad()[offset];
        e.numeric = (plus - minus) / (2.0 * options.step);
        e.rel_error = relative_error(e.analytic, e.numeric, options.floor);
        report.worst = std::max(report.worst, e.rel_error);
        report.entries.push_back(std::move(e));
    }
    report.passed = report.worst <= options.tolerance;
    return report;
}

GradCheckReport gradcheck_model(const ModelConfig& config, const GradCheckOptions& options) {
    config.validate();
    auto params = init_params<double>(config, options.seed);
    const auto sample = synth_dataset(options.seed + 1, 1, config.height, config.width).front();
    Tensor<double> image = sample.image;
    if (config.channels != 1) {
        // Synthetic data is single-channel; give each extra channel a distinct scaled copy.
        Vector<double> v(config.channels * sample.image.numel());
        for (Index c = 0; c < config.channels; ++c) {
            v.segment(c * sample.image.numel(), sample.image.numel()) =
                sample.image.value() * (1.0 - 0.25 * static_cast<double>(c) / static_cast<double>(config.channels));
        }
        image = Tensor<double>({config.channels, config.height, config.width}, std::move(v));
    }
    const auto loss = [&]() { return bce_loss(forward(image, params, config), sample.mask); };
    return gradcheck(loss, params.named(), options);
}

}  // namespace tunet
