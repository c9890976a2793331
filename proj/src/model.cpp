#include "tunet/model.hpp"

#include <cmath>
#include <random>

namespace tunet {

namespace {

bool is_power_of_two(Index v) { return v > 0 && (v & (v - 1)) == 0; }

std::string widths_to_string(const std::vector<Index>& w) {
    std::string s = "[";
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(w[i]);
    }
    return s + "]";
}

}  // namespace

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (height <= 0 || width <= 0 || channels <= 0) fail("height, width and channels must be positive");
    if (height != width) {
        fail("only square images are supported, got " + std::to_string(height) + "x" +
             std::to_string(width));
    }
    if (patch_size <= 0) fail("patch_size must be positive");
    if (height % patch_size != 0 || width % patch_size != 0) {
        fail("image size " + std::to_string(height) + " is not divisible by patch_size " +
             std::to_string(patch_size));
    }
    if (!is_power_of_two(height / patch_size)) {
        fail("height / patch_size must be a power of two, got " + std::to_string(height / patch_size));
    }
    if (heads <= 0 || layers < 0 || mlp_ratio <= 0 || embed_channels <= 0) {
        fail("heads, mlp_ratio and embed_channels must be positive; layers non-negative");
    }
    if (token_dim() % heads != 0) {
        fail("token dim " + std::to_string(token_dim()) + " is not divisible by " +
             std::to_string(heads) + " heads");
    }
    const auto n_stages = static_cast<std::size_t>(stages());
    if (encoder_widths.size() != n_stages || decoder_widths.size() != n_stages) {
        fail("need " + std::to_string(n_stages) + " encoder and decoder widths, got " +
             widths_to_string(encoder_widths) + " and " + widths_to_string(decoder_widths));
    }
    for (Index w : encoder_widths) if (w <= 0) fail("encoder widths must be positive");
    for (Index w : decoder_widths) if (w <= 0) fail("decoder widths must be positive");
    if (decoder_convs < 1) fail("decoder_convs must be at least 1");
    if (!(alpha > 0) || !std::isfinite(alpha)) fail("alpha must be positive and finite");
}

Index ModelConfig::stages() const {
    Index s = 0;
    for (Index r = height / patch_size; r > 1; r /= 2) ++s;
    return s;
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.height = 32;
    c.width = 32;
    c.channels = 1;
    c.patch_size = 8;
    c.heads = 2;
    c.layers = 1;
    c.embed_channels = 1;
    c.encoder_widths = {4, 8};
    c.decoder_widths = {8, 4};
    return c;
}

template <typename Scalar>
std::vector<NamedTensor<Scalar>> TUnetParams<Scalar>::named() const {
    std::vector<NamedTensor<Scalar>> out;
    auto conv = [&out](const std::string& p, const ConvParams<Scalar>& c) {
        out.emplace_back(p + ".weight", c.weight);
        out.emplace_back(p + ".bias", c.bias);
    };
    auto lin = [&out](const std::string& p, const LinearParams<Scalar>& l) {
        out.emplace_back(p + ".weight", l.weight);
        out.emplace_back(p + ".bias", l.bias);
    };
    auto ln = [&out](const std::string& p, const LayerNormParams<Scalar>& l) {
        out.emplace_back(p + ".gamma", l.gamma);
        out.emplace_back(p + ".beta", l.beta);
    };
    conv("embed", embed);
    out.emplace_back("pos_embed", pos_embed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i);
        const auto& l = layers[i];
        ln(p + ".ln1", l.ln1);
        lin(p + ".attn.q", l.q);
        lin(p + ".attn.k", l.k);
        lin(p + ".attn.v", l.v);
        lin(p + ".attn.o", l.o);
        ln(p + ".ln2", l.ln2);
        lin(p + ".mlp.fc1", l.fc1);
        lin(p + ".mlp.fc2", l.fc2);
    }
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        conv("encoder." + std::to_string(i), encoder[i]);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        for (std::size_t j = 0; j < decoder[i].convs.size(); ++j) {
            conv("decoder." + std::to_string(i) + ".conv" + std::to_string(j), decoder[i].convs[j]);
        }
    }
    conv("head", head);
    return out;
}

template <typename Scalar>
Index TUnetParams<Scalar>::parameter_count() const {
    Index n = 0;
    for (const auto& [name, t] : named()) n += t.numel();
    return n;
}

template <typename Scalar>
void TUnetParams<Scalar>::zero_grad() {
    for (auto& [name, t] : named()) t.zero_grad();
}

template <typename Scalar>
TUnetParams<Scalar> TUnetParams<Scalar>::clone() const {
    return cast<Scalar>();
}

template <typename Scalar>
TUnetParams<Scalar> make_params(const ModelConfig& config) {
    config.validate();
    auto z = [](Shape s) { return Tensor<Scalar>::zeros(s, true); };
    auto conv = [&](Index cout, Index cin, Index k) {
        return ConvParams<Scalar>{z({cout, cin, k, k}), z({cout})};
    };
    auto lin = [&](Index din, Index dout) { return LinearParams<Scalar>{z({din, dout}), z({dout})}; };
    auto ln = [&](Index d) {
        return LayerNormParams<Scalar>{Tensor<Scalar>::full({d}, Scalar(1), true), z({d})};
    };
    const Index d = config.token_dim();
    TUnetParams<Scalar> p;
    p.embed = conv(config.embed_channels, config.channels, 1);
    p.pos_embed = z({config.seq_len(), d});
    for (Index i = 0; i < config.layers; ++i) {
        p.layers.push_back({ln(d), lin(d, d), lin(d, d), lin(d, d), lin(d, d), ln(d),
                            lin(d, config.mlp_hidden()), lin(config.mlp_hidden(), d)});
    }
    Index in = config.channels;
    for (Index w : config.encoder_widths) {
        p.encoder.push_back(conv(w, in, 3));
        in = w;
    }
    in = config.embed_channels * config.seq_len();
    const auto n_stages = config.encoder_widths.size();
    for (std::size_t s = 0; s < n_stages; ++s) {
        DecoderStageParams<Scalar> stage;
        Index cin = in + config.encoder_widths[n_stages - 1 - s];
        for (Index c = 0; c < config.decoder_convs; ++c) {
            stage.convs.push_back(conv(config.decoder_widths[s], cin, 3));
            cin = config.decoder_widths[s];
        }
        p.decoder.push_back(std::move(stage));
        in = config.decoder_widths[s];
    }
    p.head = conv(1, in, 1);
    return p;
}

template <typename Scalar>
TUnetParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
    auto p = make_params<Scalar>(config);
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : p.named()) {
        auto& v = t.mutable_value();
        if (name == "pos_embed") {
            std::normal_distribution<double> dist(0.0, 0.02);
            for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
        } else if (name.ends_with(".weight")) {
            // [d_in x d_out] for linear layers, [C_out x C_in x k x k] for convs.
            const Shape& s = t.shape();
            const Index fan_in = s.size() == 2 ? s[0] : s[1] * s[2] * s[3];
            const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
        }
    }
    return p;
}

template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& image, Index patch) {
    if (image.rank() != 3) {
        throw DimensionError("patchify: expected [C x H x W], got " + to_string(image.shape()));
    }
    const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (patch <= 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("patchify: image " + to_string(image.shape()) +
                          " cannot be tiled by patch size " + std::to_string(patch));
    }
    const Index gw = w / patch, seq = (h / patch) * gw, dim = c * patch * patch;
    std::vector<Index> index(static_cast<std::size_t>(seq * dim));
    std::size_t k = 0;
    for (Index s = 0; s < seq; ++s) {
        const Index py = (s / gw) * patch, px = (s % gw) * patch;
        for (Index ch = 0; ch < c; ++ch) {
            for (Index i = 0; i < patch; ++i) {
                for (Index j = 0; j < patch; ++j) {
                    index[k++] = (ch * h + py + i) * w + px + j;
                }
            }
        }
    }
    return gather(image, {seq, dim}, std::move(index));
}

template <typename Scalar>
Tensor<Scalar> unpatchify(const Tensor<Scalar>& tokens, Index channels, Index height, Index width,
                          Index patch) {
    if (patch <= 0 || height % patch != 0 || width % patch != 0) {
        throw ConfigError("unpatchify: " + std::to_string(height) + "x" + std::to_string(width) +
                          " cannot be tiled by patch size " + std::to_string(patch));
    }
    const Index gw = width / patch, seq = (height / patch) * gw, dim = channels * patch * patch;
    if (tokens.shape() != Shape{seq, dim}) {
        throw DimensionError("unpatchify: expected tokens " + to_string({seq, dim}) + ", got " +
                             to_string(tokens.shape()));
    }
    std::vector<Index> index(static_cast<std::size_t>(seq * dim));
    for (Index s = 0; s < seq; ++s) {
        const Index py = (s / gw) * patch, px = (s % gw) * patch;
        for (Index ch = 0; ch < channels; ++ch) {
            for (Index i = 0; i < patch; ++i) {
                for (Index j = 0; j < patch; ++j) {
                    const Index img = (ch * height + py + i) * width + px + j;
                    index[static_cast<std::size_t>(img)] = s * dim + (ch * patch + i) * patch + j;
                }
            }
        }
    }
    return gather(tokens, {channels, height, width}, std::move(index));
}

namespace {

void check_image(const Shape& shape, const ModelConfig& config, const char* who) {
    const Shape want{config.channels, config.height, config.width};
    if (shape != want) {
        throw ConfigError(std::string(who) + ": image " + to_string(shape) +
                          " does not match configured " + to_string(want));
    }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> embed(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                     const ModelConfig& config) {
    check_image(image.shape(), config, "embed");
    const auto projected = conv2d(image, params.embed.weight, params.embed.bias);
    return add(patchify(projected, config.patch_size), params.pos_embed);
}

template <typename Scalar>
Tensor<Scalar> mha(const Tensor<Scalar>& x, const TransformerLayerParams<Scalar>& layer, Index heads,
                   std::vector<Tensor<Scalar>>* attention) {
    const Index d = x.dim(1);
    if (heads <= 0 || d % heads != 0) {
        throw ConfigError("mha: token dim " + std::to_string(d) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const Index hd = d / heads;
    const auto q = linear(x, layer.q.weight, layer.q.bias);
    const auto k = linear(x, layer.k.weight, layer.k.bias);
    const auto v = linear(x, layer.v.weight, layer.v.bias);
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
    std::vector<Tensor<Scalar>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
        const auto qh = slice_cols(q, h * hd, hd);
        const auto kh = slice_cols(k, h * hd, hd);
        const auto vh = slice_cols(v, h * hd, hd);
        const auto weights = softmax_lastdim(scale(matmul(qh, transpose_last2(kh)), inv_sqrt));
        if (attention != nullptr) attention->push_back(weights);
        outs.push_back(matmul(weights, vh));
    }
    const auto merged = heads == 1 ? outs.front() : concat_cols(outs);
    return linear(merged, layer.o.weight, layer.o.bias);
}

template <typename Scalar>
Tensor<Scalar> transformer_block(const Tensor<Scalar>& z, const TransformerLayerParams<Scalar>& layer,
                                 const ModelConfig& config) {
    const auto alpha = static_cast<Scalar>(config.alpha);
    const auto attended = add(mha(layernorm(z, layer.ln1.gamma, layer.ln1.beta), layer, config.heads), z);
    const auto hidden =
        elu(linear(layernorm(attended, layer.ln2.gamma, layer.ln2.beta), layer.fc1.weight, layer.fc1.bias),
            alpha);
    return add(linear(hidden, layer.fc2.weight, layer.fc2.bias), attended);
}

template <typename Scalar>
Tensor<Scalar> transformer(const Tensor<Scalar>& z0, const TUnetParams<Scalar>& params,
                           const ModelConfig& config) {
    auto z = z0;
    for (const auto& layer : params.layers) {
        z = transformer_block(z, layer, config);
    }
    return z;
}

template <typename Scalar>
Tensor<Scalar> tokens_to_map(const Tensor<Scalar>& tokens, const ModelConfig& config) {
    const Index n = config.patch_size;
    if (tokens.rank() != 2 || tokens.dim(1) != config.embed_channels * n * n) {
        throw ConfigError("tokens_to_map: token shape " + to_string(tokens.shape()) +
                          " does not have dim E_c*n*n = " +
                          std::to_string(config.embed_channels * n * n));
    }
    return reshape(tokens, {tokens.dim(0) * config.embed_channels, n, n});
}

template <typename Scalar>
Tensor<Scalar> map_to_tokens(const Tensor<Scalar>& map, const ModelConfig& config) {
    const Index n = config.patch_size;
    if (map.rank() != 3 || map.dim(1) != n || map.dim(2) != n ||
        map.dim(0) % config.embed_channels != 0) {
        throw ConfigError("map_to_tokens: map shape " + to_string(map.shape()) +
                          " is incompatible with the configured patch grid");
    }
    return reshape(map, {map.dim(0) / config.embed_channels, config.embed_channels * n * n});
}

template <typename Scalar>
SkipSet<Scalar> unet_encoder(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                             const ModelConfig& config) {
    check_image(image.shape(), config, "unet_encoder");
    const auto alpha = static_cast<Scalar>(config.alpha);
    SkipSet<Scalar> skips;
    auto x = image;
    for (std::size_t s = 0; s < params.encoder.size(); ++s) {
        x = elu(conv2d(x, params.encoder[s].weight, params.encoder[s].bias), alpha);
        skips.maps.push_back(x);
        // The pooled output of the last stage feeds nothing.
        if (s + 1 < params.encoder.size()) x = maxpool2d(x);
    }
    return skips;
}

template <typename Scalar>
Tensor<Scalar> decoder(const Tensor<Scalar>& tmap, const SkipSet<Scalar>& skips,
                       const TUnetParams<Scalar>& params, const ModelConfig& config) {
    const auto alpha = static_cast<Scalar>(config.alpha);
    if (skips.maps.size() != params.decoder.size()) {
        throw DimensionError("decoder: got " + std::to_string(skips.maps.size()) + " skips for " +
                             std::to_string(params.decoder.size()) + " stages");
    }
    auto x = tmap;
    for (std::size_t s = 0; s < params.decoder.size(); ++s) {
        x = bilinear_upsample2x(x);
        const auto& skip = skips.maps[skips.maps.size() - 1 - s];
        if (skip.rank() != 3 || skip.dim(1) != x.dim(1) || skip.dim(2) != x.dim(2)) {
            throw DimensionError("decoder stage " + std::to_string(s) + ": upsampled map " +
                                 to_string(x.shape()) + " does not match skip " +
                                 to_string(skip.shape()));
        }
        x = concat_channels(x, skip);
        for (const auto& conv : params.decoder[s].convs) {
            x = elu(conv2d(x, conv.weight, conv.bias), alpha);
        }
    }
    return conv2d(x, params.head.weight, params.head.bias);
}

template <typename Scalar>
Tensor<Scalar> forward_logits(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                              const ModelConfig& config) {
    const auto tokens = transformer(embed(image, params, config), params, config);
    return decoder(tokens_to_map(tokens, config), unet_encoder(image, params, config), params, config);
}

template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                       const ModelConfig& config) {
    return sigmoid(forward_logits(image, params, config));
}

#define TUNET_INSTANTIATE_MODEL(S)                                                                \
    template struct TUnetParams<S>;                                                               \
    template TUnetParams<S> make_params<S>(const ModelConfig&);                                   \
    template TUnetParams<S> init_params<S>(const ModelConfig&, std::uint64_t);                    \
    template Tensor<S> patchify(const Tensor<S>&, Index);                                         \
    template Tensor<S> unpatchify(const Tensor<S>&, Index, Index, Index, Index);                  \
    template Tensor<S> embed(const Tensor<S>&, const TUnetParams<S>&, const ModelConfig&);        \
    template Tensor<S> mha(const Tensor<S>&, const TransformerLayerParams<S>&, Index,             \
                           std::vector<Tensor<S>>*);                                              \
    template Tensor<S> transformer_block(const Tensor<S>&, const TransformerLayerParams<S>&,      \
                                         const ModelConfig&);                                     \
    template Tensor<S> transformer(const Tensor<S>&, const TUnetParams<S>&, const ModelConfig&);  \
    template Tensor<S> tokens_to_map(const Tensor<S>&, const ModelConfig&);                       \
    template Tensor<S> map_to_tokens(const Tensor<S>&, const ModelConfig&);                       \
    template SkipSet<S> unet_encoder(const Tensor<S>&, const TUnetParams<S>&, const ModelConfig&); \
    template Tensor<S> decoder(const Tensor<S>&, const SkipSet<S>&, const TUnetParams<S>&,        \
                               const ModelConfig&);                                               \
    template Tensor<S> forward_logits(const Tensor<S>&, const TUnetParams<S>&, const ModelConfig&); \
    template Tensor<S> forward(const Tensor<S>&, const TUnetParams<S>&, const ModelConfig&);

TUNET_INSTANTIATE_MODEL(float)
TUNET_INSTANTIATE_MODEL(double)

#undef TUNET_INSTANTIATE_MODEL

}  // namespace tunet
