#pragma once

#include <optional>
#include <string>

#include "kst/attention.hpp"

namespace kst {

inline constexpr double kLayerNormEps = 1e-5;

// A layer is key-sparse exactly when sparse_ratio is set.
struct EncoderLayerConfig {
    int d_model = 0;
    int heads = 0;
    int ffn_dim = 0;
    double dropout_p = 0.0;
    std::optional<double> sparse_ratio;
    bool renormalize_after_mask = false;
};

struct EncoderLayerParams {
    MhaParams attn;
    Tensor norm1_gain, norm1_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor norm2_gain, norm2_bias;
};

// Post-norm Transformer encoder layer: attention sublayer (dense or
// key-sparse) with residual + layer norm, then position-wise feed-forward
// with residual + layer norm. Dropout after the attention output projection
// and after the FFN, active only in training.
Tensor encoder_layer_forward(const Tensor& x_q, const Tensor& x_kv, const EncoderLayerConfig& cfg,
                             const EncoderLayerParams& params, const Padding& pad,
                             ForwardCtx& ctx, const std::string& site);

// Sinusoidal position table [length, d_model]; added once to the inputs of
// the feature-extraction stacks. d_model must be even.
Tensor positional_encoding(int64_t length, int64_t d_model);

} // namespace kst
