#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tunet/model.hpp"

namespace tunet {

struct GradCheckOptions {
    Index samples = 200;
    double step = 1e-4;
    double tolerance = 1e-3;
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    double floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string name;
    Index index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Central-difference check of a scalar function of a list of tensors. `loss`
/// is evaluated with and without an active tape; `inputs` are perturbed in place
/// and restored. Checks every coordinate when `samples` <= 0, otherwise a
/// uniform sample without replacement.
GradCheckReport gradcheck(const std::function<Tensor<double>()>& loss,
                          const std::vector<NamedTensor<double>>& inputs,
                          const GradCheckOptions& options);

/// BCE loss of the full model on one synthetic sample, sampled over all parameters.
GradCheckReport gradcheck_model(const ModelConfig& config, const GradCheckOptions& options);

}  // namespace tunet
