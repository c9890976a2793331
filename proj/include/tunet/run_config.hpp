#pragma once

#include <filesystem>
#include <string>

#include "tunet/model.hpp"
#include "tunet/train.hpp"

namespace tunet {

struct DataConfig {
    std::string source = "synth";  // "synth" or "dir"
    Index count = 8;
    std::string path;
    double val_fraction = 0.2;
    /// Divide images by 1024 when loading a directory of raw slices.
    bool normalize = false;

    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    double threshold = kDefaultThreshold;
};

/// The JSON run document:
///
///   { "model": {...}, "train": {...}, "data": {...}, "eval": {...} }
///
/// Absent keys take the defaults of the 512x512 configuration. Unknown keys are
/// rejected. When encoder_widths is absent it defaults to the first `stages`
/// entries of [16, 32, 64, 128, 256]; decoder_widths defaults to the reverse of
/// encoder_widths.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace tunet
