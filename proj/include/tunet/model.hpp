#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tunet/ops.hpp"
#include "tunet/tensor.hpp"

namespace tunet {

/// Architecture hyperparameters. Defaults reproduce the 512x512 CT configuration:
/// 16x16 patches, 8 heads, 6 layers, a 1024-token sequence of 256-dim tokens.
struct ModelConfig {
    Index height = 512;
    Index width = 512;
    Index channels = 1;
    Index patch_size = 16;
    Index heads = 8;
    Index layers = 6;
    Index mlp_ratio = 4;
    Index embed_channels = 1;
    std::vector<Index> encoder_widths{16, 32, 64, 128, 256};
    /// Lowest resolution first.
    std::vector<Index> decoder_widths{256, 128, 64, 32, 16};
    /// 3x3 convolutions per decoder stage; the shallow backbone uses 1.
    Index decoder_convs = 2;
    double alpha = 1.0;

    /// Throws ConfigError on any violated invariant.
    void validate() const;

    Index seq_len() const { return (height / patch_size) * (width / patch_size); }
    Index token_dim() const { return embed_channels * patch_size * patch_size; }
    Index head_dim() const { return token_dim() / heads; }
    Index mlp_hidden() const { return mlp_ratio * token_dim(); }
    /// Number of factor-2 steps between the patch grid and full resolution.
    Index stages() const;

    bool operator==(const ModelConfig&) const = default;

    static ModelConfig paper();
    /// 32x32, n=8, one layer, two heads, widths [4, 8].
    static ModelConfig tiny();
};

template <typename Scalar>
struct LayerNormParams {
    Tensor<Scalar> gamma, beta;
};

/// Row-vector affine map; weight is [d_in x d_out].
template <typename Scalar>
struct LinearParams {
    Tensor<Scalar> weight, bias;
};

template <typename Scalar>
struct ConvParams {
    Tensor<Scalar> weight, bias;
};

template <typename Scalar>
struct TransformerLayerParams {
    LayerNormParams<Scalar> ln1;
    LinearParams<Scalar> q, k, v, o;
    LayerNormParams<Scalar> ln2;
    LinearParams<Scalar> fc1, fc2;
};

template <typename Scalar>
struct DecoderStageParams {
    std::vector<ConvParams<Scalar>> convs;
};

template <typename Scalar>
using NamedTensor = std::pair<std::string, Tensor<Scalar>>;

template <typename Scalar>
struct TUnetParams {
    ConvParams<Scalar> embed;  // 1x1, C -> E_c
    Tensor<Scalar> pos_embed;  // [S x d]
    std::vector<TransformerLayerParams<Scalar>> layers;
    std::vector<ConvParams<Scalar>> encoder;
    std::vector<DecoderStageParams<Scalar>> decoder;
    ConvParams<Scalar> head;  // 1x1 to a single logit channel

    /// Handles to every learnable tensor in a fixed order with stable names.
    std::vector<NamedTensor<Scalar>> named() const;
    Index parameter_count() const;
    void zero_grad();

    /// Deep copy (fresh storage, same values).
    TUnetParams clone() const;

    template <typename Other>
    TUnetParams<Other> cast() const;
};

/// Feature maps recorded by the auxiliary encoder, highest resolution first.
template <typename Scalar>
struct SkipSet {
    std::vector<Tensor<Scalar>> maps;
};

/// Structure-only parameter set: every tensor allocated with its final shape and
/// zero values.
template <typename Scalar>
TUnetParams<Scalar> make_params(const ModelConfig& config);

/// Uniform(+-sqrt(1/fan_in)) weights, N(0, 0.02) positional embedding, unit LN
/// gains, zero biases. Deterministic in `seed`.
template <typename Scalar>
TUnetParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

/// [C x H x W] -> [S x C*n*n]. Patches in row-major order; each token is
/// channel-major, then row-major pixels.
template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& image, Index patch);

template <typename Scalar>
Tensor<Scalar> unpatchify(const Tensor<Scalar>& tokens, Index channels, Index height, Index width,
                          Index patch);

template <typename Scalar>
Tensor<Scalar> embed(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                     const ModelConfig& config);

/// Multi-head self-attention. When `attention` is non-null, receives one [S x S]
/// weight matrix per head.
template <typename Scalar>
Tensor<Scalar> mha(const Tensor<Scalar>& x, const TransformerLayerParams<Scalar>& layer, Index heads,
                   std::vector<Tensor<Scalar>>* attention = nullptr);

/// Pre-LN block: z' = MHA(LN(z)) + z; out = MLP(LN(z')) + z'.
template <typename Scalar>
Tensor<Scalar> transformer_block(const Tensor<Scalar>& z, const TransformerLayerParams<Scalar>& layer,
                                 const ModelConfig& config);

template <typename Scalar>
Tensor<Scalar> transformer(const Tensor<Scalar>& z0, const TUnetParams<Scalar>& params,
                           const ModelConfig& config);

/// [S x E_c*n*n] -> [E_c*S x n x n], a row-major reinterpretation.
template <typename Scalar>
Tensor<Scalar> tokens_to_map(const Tensor<Scalar>& tokens, const ModelConfig& config);

template <typename Scalar>
Tensor<Scalar> map_to_tokens(const Tensor<Scalar>& map, const ModelConfig& config);

template <typename Scalar>
SkipSet<Scalar> unet_encoder(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                             const ModelConfig& config);

/// Returns [1 x H x W] logits.
template <typename Scalar>
Tensor<Scalar> decoder(const Tensor<Scalar>& tmap, const SkipSet<Scalar>& skips,
                       const TUnetParams<Scalar>& params, const ModelConfig& config);

template <typename Scalar>
Tensor<Scalar> forward_logits(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                              const ModelConfig& config);

/// Probability map [1 x H x W].
template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& image, const TUnetParams<Scalar>& params,
                       const ModelConfig& config);

template <typename Scalar>
template <typename Other>
TUnetParams<Other> TUnetParams<Scalar>::cast() const {
    auto conv = [](const ConvParams<Scalar>& c) {
        return ConvParams<Other>{c.weight.template cast<Other>(), c.bias.template cast<Other>()};
    };
    auto lin = [](const LinearParams<Scalar>& l) {
        return LinearParams<Other>{l.weight.template cast<Other>(), l.bias.template cast<Other>()};
    };
    auto ln = [](const LayerNormParams<Scalar>& l) {
        return LayerNormParams<Other>{l.gamma.template cast<Other>(), l.beta.template cast<Other>()};
    };
    TUnetParams<Other> out;
    out.embed = conv(embed);
    out.pos_embed = pos_embed.template cast<Other>();
    for (const auto& l : layers) {
        out.layers.push_back({ln(l.ln1), lin(l.q), lin(l.k), lin(l.v), lin(l.o), ln(l.ln2),
                              lin(l.fc1), lin(l.fc2)});
    }
    for (const auto& e : encoder) out.encoder.push_back(conv(e));
    for (const auto& st : decoder) {
        DecoderStageParams<Other> s;
        for (const auto& c : st.convs) s.convs.push_back(conv(c));
        out.decoder.push_back(std::move(s));
    }
    out.head = conv(head);
    for (auto& [name, t] : out.named()) t.set_requires_grad(true);
    return out;
}

}  // namespace tunet
