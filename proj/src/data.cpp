#include "tunet/data.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace tunet {

template <typename Scalar>
Tensor<Scalar> normalize(const Tensor<Scalar>& raw) {
    return Tensor<Scalar>(raw.shape(), raw.value() / static_cast<Scalar>(kIntensityScale));
}

namespace {

struct Ellipse {
    double cy, cx, a, b, angle, gain;

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / a;
        const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / b;
        return u * u + v * v <= 1.0;
    }
};

constexpr int kNoiseGrid = 5;
constexpr int kMaxPlacementTries = 200;

// Bilinear interpolation of a coarse random grid; stays inside the grid's range.
std::vector<double> smooth_noise(std::mt19937_64& rng, Index h, Index w) {
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    double grid[kNoiseGrid][kNoiseGrid];
    for (auto& row : grid) {
        for (double& g : row) g = u(rng);
    }
    std::vector<double> out(static_cast<std::size_t>(h * w));
    for (Index y = 0; y < h; ++y) {
        const double gy = static_cast<double>(y) / static_cast<double>(h - 1) * (kNoiseGrid - 1);
        const int y0 = std::min(static_cast<int>(gy), kNoiseGrid - 2);
        const double fy = gy - y0;
        for (Index x = 0; x < w; ++x) {
            const double gx = static_cast<double>(x) / static_cast<double>(w - 1) * (kNoiseGrid - 1);
            const int x0 = std::min(static_cast<int>(gx), kNoiseGrid - 2);
            const double fx = gx - x0;
            const double top = grid[y0][x0] * (1 - fx) + grid[y0][x0 + 1] * fx;
            const double bot = grid[y0 + 1][x0] * (1 - fx) + grid[y0 + 1][x0 + 1] * fx;
            out[static_cast<std::size_t>(y * w + x)] = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

bool place_ellipses(std::mt19937_64& rng, Index size, std::vector<Ellipse>& out) {
    const double s = static_cast<double>(size);
    std::uniform_int_distribution<int> count_dist(1, 3);
    std::uniform_real_distribution<double> axis(0.08 * s, 0.22 * s);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::uniform_real_distribution<double> gain(0.3, 0.7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int count = count_dist(rng);
    out.clear();
    for (int e = 0; e < count; ++e) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxPlacementTries && !placed; ++attempt) {
            Ellipse el{};
            el.a = axis(rng);
            el.b = axis(rng);
            el.angle = angle(rng);
            el.gain = gain(rng);
            const double r = std::max(el.a, el.b);
            const double lo = r + 1.0, hi = s - r - 1.0;
            if (hi <= lo) continue;
            el.cy = lo + unit(rng) * (hi - lo);
            el.cx = lo + unit(rng) * (hi - lo);
            placed = true;
            for (const auto& other : out) {
                const double dist = std::hypot(el.cy - other.cy, el.cx - other.cx);
                if (dist <= r + std::max(other.a, other.b) + 1.0) {
                    placed = false;
                    break;
                }
            }
            if (placed) out.push_back(el);
        }
        if (!placed) return false;
    }
    return true;
}

}  // namespace

std::vector<Sample<double>> synth_dataset(std::uint64_t seed, Index count, Index height, Index width) {
    if (height != width || height < 32 || (height & (height - 1)) != 0) {
        throw ConfigError("synth_dataset: size must be square, a power of two and >= 32, got " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if (count < 0) {
        throw ConfigError("synth_dataset: negative sample count");
    }
    std::mt19937_64 rng(seed);
    std::vector<Sample<double>> samples;
    samples.reserve(static_cast<std::size_t>(count));
    const auto npix = static_cast<std::size_t>(height * width);
    std::vector<Ellipse> ellipses;
    while (static_cast<Index>(samples.size()) < count) {
        auto pixels = smooth_noise(rng, height, width);
        if (!place_ellipses(rng, height, ellipses)) continue;
        Vector<double> mask = Vector<double>::Zero(static_cast<Index>(npix));
        for (Index y = 0; y < height; ++y) {
            for (Index x = 0; x < width; ++x) {
                const auto i = static_cast<std::size_t>(y * width + x);
                for (const auto& el : ellipses) {
                    if (el.contains(static_cast<double>(y), static_cast<double>(x))) {
                        pixels[i] += el.gain;
                        mask[static_cast<Index>(i)] = 1.0;
                        break;
                    }
                }
            }
        }
        const double fg = mask.mean();
        Vector<double> image = Eigen::Map<const Vector<double>>(pixels.data(), static_cast<Index>(npix));
        const double mean = image.mean();
        if (fg < 0.01 || fg > 0.40 || mean < -0.2 || mean > 0.5) continue;
        samples.push_back({Tensor<double>({1, height, width}, std::move(image)),
                           Tensor<double>({1, height, width}, std::move(mask))});
    }
    return samples;
}

template <typename Scalar>
DatasetSplit<Scalar> split_dataset(const std::vector<Sample<Scalar>>& samples, double val_fraction) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw ConfigError("val_fraction must be in [0, 1)");
    }
    const auto n = samples.size();
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
    DatasetSplit<Scalar> split;
    split.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n - n_val));
    split.val.assign(samples.begin() + static_cast<std::ptrdiff_t>(n - n_val), samples.end());
    return split;
}

template Tensor<float> normalize(const Tensor<float>&);
template Tensor<double> normalize(const Tensor<double>&);
template DatasetSplit<float> split_dataset(const std::vector<Sample<float>>&, double);
template DatasetSplit<double> split_dataset(const std::vector<Sample<double>>&, double);

}  // namespace tunet
