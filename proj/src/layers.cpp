#include "kst/layers.hpp"

#include <cmath>

namespace kst {

Tensor encoder_layer_forward(const Tensor& x_q, const Tensor& x_kv, const EncoderLayerConfig& cfg,
                             const EncoderLayerParams& params, const Padding& pad,
                             ForwardCtx& ctx, const std::string& site) {
    if (x_q.ndim() != 2 || x_q.dim(1) != cfg.d_model) {
        throw ShapeError("encoder layer expects [seq, " + std::to_string(cfg.d_model) + "], got " +
                         shape_str(x_q.shape()));
    }

    Tensor attn = multi_head_attention(x_q, x_kv, params.attn, cfg.heads, cfg.sparse_ratio, pad,
                                       ctx, site, cfg.renormalize_after_mask);
    if (ctx.training && cfg.dropout_p > 0.0) {
        if (!ctx.rng) throw ContractError("training forward requires an rng for dropout");
        attn = dropout(attn, cfg.dropout_p, *ctx.rng);
    }
    Tensor h = layer_norm(add(x_q, attn), params.norm1_gain, params.norm1_bias, kLayerNormEps);

    Tensor f = linear(relu(linear(h, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2);
    if (ctx.training && cfg.dropout_p > 0.0) {
        f = dropout(f, cfg.dropout_p, *ctx.rng);
    }
    return layer_norm(add(h, f), params.norm2_gain, params.norm2_bias, kLayerNormEps);
}

Tensor positional_encoding(int64_t length, int64_t d_model) {
    if (length < 1) throw ConfigError("positional_encoding length must be >= 1");
    if (d_model < 2 || d_model % 2 != 0) {
        throw ConfigError("positional_encoding d_model must be even, got " + std::to_string(d_model));
    }
    Tensor table = Tensor::zeros({length, d_model});
    double* tv = table.values_mut().data();
    for (int64_t pos = 0; pos < length; ++pos) {
        for (int64_t i = 0; i < d_model / 2; ++i) {
            const double rate =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) * rate;
            tv[pos * d_model + 2 * i] = std::sin(angle);
            tv[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return table;
}

} // namespace kst
