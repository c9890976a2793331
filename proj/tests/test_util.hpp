#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tunet/ops.hpp"

namespace tunet::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0, bool requires_grad = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vector<double> v(numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
    return Tensor<double>(shape, std::move(v), requires_grad);
}

using TensorFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Worst relative error between the tape gradient of <f(inputs), R> (R a fixed
/// random cotangent) and central differences of the same scalar computed from
/// plain forward values.
inline double fd_max_rel_error(const TensorFn& f, std::vector<Tensor<double>> inputs,
                               std::uint64_t seed = 99, double h = 1e-4, double floor = 1e-6) {
    std::mt19937_64 rng(seed);
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const auto probe = f(inputs);
    const auto cot = random_tensor(probe.shape(), rng);
    {
        GradTape<double> tape;
        tape.backward(sum(mul(f(inputs), cot)));
    }
    auto objective = [&]() { return f(inputs).value().dot(cot.value()); };
    double worst = 0;
    for (auto& t : inputs) {
        const auto analytic = t.grad();
        auto& v = t.mutable_value();
        for (Index i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double plus = objective();
            v[i] = orig - h;
            const double minus = objective();
            v[i] = orig;
            const double numeric = (plus - minus) / (2 * h);
            const double den = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / den);
        }
    }
    return worst;
}

}  // namespace tunet::testing
