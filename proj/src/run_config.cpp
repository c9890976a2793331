#include "tunet/run_config.hpp"

#include <set>

#include <json.hpp>

#include "tunet/io.hpp"

namespace tunet {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
    if (!obj.is_object()) {
        throw ConfigError("'" + section + "' must be a JSON object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + (section.empty() ? key : section + "." + key) + "'");
        }
    }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("invalid value for '" + section + "." + key + "': " + e.what());
    }
}

const std::vector<Index> kDefaultEncoderWidths{16, 32, 64, 128, 256};

ModelConfig model_from(const json& m) {
    reject_unknown(m, "model",
                   {"height", "width", "channels", "patch_size", "heads", "layers", "mlp_ratio",
                    "embed_channels", "encoder_widths", "decoder_widths", "decoder_convs", "alpha"});
    ModelConfig c;
    read(m, "model", "height", c.height);
    read(m, "model", "width", c.width);
    read(m, "model", "channels", c.channels);
    read(m, "model", "patch_size", c.patch_size);
    read(m, "model", "heads", c.heads);
    read(m, "model", "layers", c.layers);
    read(m, "model", "mlp_ratio", c.mlp_ratio);
    read(m, "model", "embed_channels", c.embed_channels);
    read(m, "model", "decoder_convs", c.decoder_convs);
    read(m, "model", "alpha", c.alpha);
    if (c.patch_size <= 0 || c.height <= 0 || c.height % c.patch_size != 0) {
        c.validate();  // reports the precise problem
    }
    const auto stages = static_cast<std::size_t>(c.stages());
    if (m.contains("encoder_widths")) {
        read(m, "model", "encoder_widths", c.encoder_widths);
    } else {
        const auto n = std::min(stages, kDefaultEncoderWidths.size());
        c.encoder_widths.assign(kDefaultEncoderWidths.begin(),
                                kDefaultEncoderWidths.begin() + static_cast<std::ptrdiff_t>(n));
    }
    if (m.contains("decoder_widths")) {
        read(m, "model", "decoder_widths", c.decoder_widths);
    } else {
        c.decoder_widths.assign(c.encoder_widths.rbegin(), c.encoder_widths.rend());
    }
    c.validate();
    return c;
}

json model_to(const ModelConfig& c) {
    return json{{"height", c.height},
                {"width", c.width},
                {"channels", c.channels},
                {"patch_size", c.patch_size},
                {"heads", c.heads},
                {"layers", c.layers},
                {"mlp_ratio", c.mlp_ratio},
                {"embed_channels", c.embed_channels},
                {"encoder_widths", c.encoder_widths},
                {"decoder_widths", c.decoder_widths},
                {"decoder_convs", c.decoder_convs},
                {"alpha", c.alpha}};
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed config JSON: ") + e.what());
    }
    reject_unknown(doc, "", {"model", "train", "data", "eval"});
    RunConfig rc;
    rc.model = model_from(doc.value("model", json::object()));

    const json t = doc.value("train", json::object());
    reject_unknown(t, "train",
                   {"epochs", "base_lr", "milestones", "batch_size", "weight_decay", "seed",
                    "gradcheck_mode", "decay_exclude_norms_and_biases"});
    read(t, "train", "epochs", rc.train.epochs);
    read(t, "train", "base_lr", rc.train.base_lr);
    read(t, "train", "milestones", rc.train.milestones);
    read(t, "train", "batch_size", rc.train.batch_size);
    read(t, "train", "weight_decay", rc.train.weight_decay);
    read(t, "train", "seed", rc.train.seed);
    read(t, "train", "gradcheck_mode", rc.train.gradcheck_mode);
    read(t, "train", "decay_exclude_norms_and_biases", rc.train.decay_exclude_norms_and_biases);

    const json d = doc.value("data", json::object());
    reject_unknown(d, "data", {"source", "count", "path", "val_fraction", "normalize"});
    read(d, "data", "source", rc.data.source);
    read(d, "data", "count", rc.data.count);
    read(d, "data", "path", rc.data.path);
    read(d, "data", "val_fraction", rc.data.val_fraction);
    read(d, "data", "normalize", rc.data.normalize);
    if (rc.data.source != "synth" && rc.data.source != "dir") {
        throw ConfigError("data.source must be \"synth\" or \"dir\", got \"" + rc.data.source + "\"");
    }
    if (rc.data.source == "dir" && rc.data.path.empty()) {
        throw ConfigError("data.path is required when data.source is \"dir\"");
    }
    if (rc.data.count < 1) throw ConfigError("data.count must be at least 1");
    if (!(rc.data.val_fraction >= 0.0 && rc.data.val_fraction < 1.0)) {
        throw ConfigError("data.val_fraction must lie in [0, 1)");
    }

    const json e = doc.value("eval", json::object());
    reject_unknown(e, "eval", {"threshold"});
    read(e, "eval", "threshold", rc.eval.threshold);
    rc.train.threshold = rc.eval.threshold;

    rc.train.validate();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(text);
}

std::string model_config_to_json(const ModelConfig& config) { return model_to(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    try {
        return model_from(json::parse(text));
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("stored model config is not valid JSON: ") + e.what());
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("stored model config is invalid: ") + e.what());
    }
}

}  // namespace tunet
