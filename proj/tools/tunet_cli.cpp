// tunet: train, evaluate, run and verify the Transformer-Unet segmentation model.
//
// Exit codes: 0 success, 2 configuration or argument error, 3 runtime failure.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tunet/gradcheck.hpp"
#include "tunet/io.hpp"
#include "tunet/run_config.hpp"
#include "tunet/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct UsageError : tunet::ConfigError {
    using tunet::ConfigError::ConfigError;
};

template <typename Scalar>
std::vector<tunet::Sample<Scalar>> load_samples(const tunet::RunConfig& rc, const std::string& dir_override) {
    std::vector<tunet::Sample<Scalar>> samples;
    if (!dir_override.empty()) {
        samples = tunet::load_dataset_dir<Scalar>(dir_override, rc.data.normalize);
    } else if (rc.data.source == "dir") {
        samples = tunet::load_dataset_dir<Scalar>(rc.data.path, rc.data.normalize);
    } else {
        samples = tunet::cast_samples<Scalar>(
            tunet::synth_dataset(rc.train.seed + 1, rc.data.count, rc.model.height, rc.model.width));
    }
    if (samples.empty()) {
        throw tunet::ConfigError("dataset is empty");
    }
    const tunet::Shape want{rc.model.channels, rc.model.height, rc.model.width};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].image.shape() != want) {
            throw tunet::ConfigError("sample " + std::to_string(i) + " has shape " +
                                     tunet::to_string(samples[i].image.shape()) +
                                     ", config expects " + tunet::to_string(want));
        }
    }
    return samples;
}

template <typename Scalar>
int run_train(const tunet::RunConfig& rc, const std::string& out_dir) {
    const auto samples = load_samples<Scalar>(rc, "");
    const auto split = tunet::split_dataset(samples, rc.data.val_fraction);
    tunet::TrainOutputs outputs;
    outputs.dir = out_dir;
    outputs.on_epoch = [](const tunet::EpochLog& row) {
        std::fprintf(stderr, "epoch %ld %-5s step %ld  loss %.6f  dice %.4f  miou %.4f\n", row.epoch,
                     row.split.c_str(), row.step, row.result.loss, row.result.report.dice,
                     row.result.report.miou);
    };
    const auto result = tunet::train(rc.model, rc.train, split.train, split.val, outputs);
    if (!result.log.empty()) {
        for (auto it = result.log.rbegin(); it != result.log.rend(); ++it) {
            if (it->split == "train") {
                std::printf("final train loss %.6f dice %.6f after %ld steps\n", it->result.loss,
                            it->result.report.dice, result.steps);
                break;
            }
        }
    }
    return kExitOk;
}

template <typename Scalar>
int run_eval(const tunet::RunConfig& rc, const std::string& ckpt, const std::string& data_dir) {
    const auto params = tunet::load_checkpoint<Scalar>(ckpt, rc.model);
    const auto samples = load_samples<Scalar>(rc, data_dir);
    const auto res = tunet::evaluate(params, rc.model, samples, rc.eval.threshold);
    std::printf("%s\n%s\n", tunet::metrics_csv_header().c_str(),
                tunet::metrics_csv_row(0, "eval", res.loss, res.report).c_str());
    return kExitOk;
}

template <typename Scalar>
int run_infer(const std::string& ckpt, const std::string& in, const std::string& out,
              const std::string& mask_out, double threshold) {
    const auto cp = tunet::load_checkpoint<double>(ckpt);
    const auto image = tunet::load_tensor<double>(in);
    const tunet::Shape want{cp.config.channels, cp.config.height, cp.config.width};
    if (image.shape() != want) {
        throw tunet::ConfigError("input " + in + " has shape " + tunet::to_string(image.shape()) +
                                 ", checkpoint expects " + tunet::to_string(want));
    }
    const auto prob = tunet::forward(image, cp.params, cp.config);
    const auto bits = tunet::binarize(prob, threshold);
    tunet::Vector<double> mask(prob.numel());
    for (tunet::Index i = 0; i < mask.size(); ++i) mask[i] = bits.bits[static_cast<std::size_t>(i)];
    tunet::save_tensor(out, prob.template cast<Scalar>());
    if (!mask_out.empty()) {
        tunet::save_tensor(mask_out, tunet::Tensor<Scalar>(prob.shape(), mask.template cast<Scalar>()));
    }
    return kExitOk;
}

int run_gradcheck(const tunet::RunConfig& rc, long samples, std::uint64_t seed, bool corrupt) {
    if (samples <= 0) {
        throw UsageError("--samples must be a positive integer, got " + std::to_string(samples));
    }
    tunet::GradCheckOptions opts;
    opts.samples = samples;
    opts.seed = seed;
    tunet::set_corrupt_backward(corrupt);
    const auto report = tunet::gradcheck_model(rc.model, opts);
    tunet::set_corrupt_backward(false);
    const tunet::GradCheckEntry* worst = nullptr;
    for (const auto& e : report.entries) {
        if (worst == nullptr || e.rel_error > worst->rel_error) worst = &e;
    }
    std::printf("checked %zu coordinates (64-bit, central differences, step %.0e)\n",
                report.entries.size(), opts.step);
    if (worst != nullptr) {
        std::printf("worst relative error %.3e at %s[%ld] (analytic %.9e, numeric %.9e)\n", worst->rel_error,
                    worst->name.c_str(), static_cast<long>(worst->index), worst->analytic, worst->numeric);
    }
    std::printf("%s (tolerance %.0e)\n", report.passed ? "PASS" : "FAIL", opts.tolerance);
    return report.passed ? kExitOk : 1;
}

int run_synth(std::uint64_t seed, long count, long size, const std::string& out) {
    if (count < 0) throw UsageError("--count must be non-negative");
    if (size < 32 || (size & (size - 1)) != 0) {
        throw UsageError("--size must be a power of two >= 32, got " + std::to_string(size));
    }
    tunet::save_dataset_dir(out, tunet::synth_dataset(seed, count, size, size));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transformer-Unet segmentation: training, evaluation, inference and verification"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt, data_dir, in_path, out_path, mask_path;
    double threshold = tunet::kDefaultThreshold;
    long samples = 200, count = 8, size = 32;
    std::uint64_t seed = 0;
    bool corrupt = false;

    auto* train = app.add_subcommand("train", "train a model and write metrics.csv, last.ckpt, best.ckpt");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "print one CSV metrics row for a checkpoint");
    eval->add_option("--config", config_path, "run config JSON")->required();
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "directory of img_/msk_ TensorFiles (default: config data)");

    auto* infer = app.add_subcommand("infer", "write probability map and binary mask TensorFiles");
    infer->add_option("--ckpt", ckpt, "checkpoint file")->required();
    infer->add_option("--in", in_path, "input image TensorFile [C x H x W]")->required();
    infer->add_option("--out", out_path, "output probability TensorFile")->required();
    infer->add_option("--mask", mask_path, "output binary mask TensorFile");
    infer->add_option("--threshold", threshold, "binarization threshold (strict >)");

    auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
    grad->add_option("--config", config_path, "run config JSON")->required();
    grad->add_option("--samples", samples, "number of parameter coordinates");
    grad->add_option("--seed", seed, "sampling and initialization seed");
    grad->add_flag("--corrupt-backward", corrupt, "test hook: break the ELU backward rule")->group("");

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset of TensorFiles");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--count", count, "number of samples");
    synth->add_option("--size", size, "image side length (power of two >= 32)");
    synth->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*synth) return run_synth(seed, count, size, out_dir);
        if (*infer) {
            if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
            const auto dtype = tunet::decode_tensor_header(tunet::read_file(in_path)).dtype;
            return dtype == tunet::DType::Float64
                       ? run_infer<double>(ckpt, in_path, out_path, mask_path, threshold)
                       : run_infer<float>(ckpt, in_path, out_path, mask_path, threshold);
        }
        const auto rc = tunet::load_run_config(config_path);
        if (*grad) return run_gradcheck(rc, samples, seed, corrupt);
        if (*train) {
            return rc.train.gradcheck_mode ? run_train<double>(rc, out_dir) : run_train<float>(rc, out_dir);
        }
        if (*eval) {
            return rc.train.gradcheck_mode ? run_eval<double>(rc, ckpt, data_dir)
                                           : run_eval<float>(rc, ckpt, data_dir);
        }
    } catch (const tunet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const tunet::SchemaError& e) {
        std::cerr << "checkpoint/config mismatch: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}
