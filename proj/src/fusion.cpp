#include "kst/fusion.hpp"

namespace kst {

namespace {

EncoderLayerConfig ks_layer_cfg(const FusionConfig& cfg) {
    EncoderLayerConfig lc;
    lc.d_model = cfg.d_model;
    lc.heads = cfg.heads;
    lc.ffn_dim = cfg.ffn_dim;
    lc.dropout_p = cfg.dropout_p;
    lc.sparse_ratio = cfg.sparse_ratio;
    lc.renormalize_after_mask = cfg.renormalize_after_mask;
    return lc;
}

} // namespace

Tensor ccab_forward(const Tensor& a, const Tensor& b, const CCABParams& params,
                    const FusionConfig& cfg, const Padding& pad_a, const Padding& pad_b,
                    ForwardCtx& ctx, const std::string& site_prefix) {
    if (a.dim(1) != b.dim(1)) {
        throw ShapeError("ccab streams must share d_model: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const EncoderLayerConfig lc = ks_layer_cfg(cfg);

    Padding cross_pad;
    cross_pad.q_valid = pad_a.q_valid;
    cross_pad.kv_valid = pad_b.kv_valid;
    Tensor fused = encoder_layer_forward(a, b, lc, params.cross, cross_pad, ctx,
                                         site_prefix + ".cross");

    Padding self_pad;
    self_pad.q_valid = pad_a.q_valid;
    self_pad.kv_valid = pad_a.q_valid;
    return encoder_layer_forward(fused, fused, lc, params.self_attn, self_pad, ctx,
                                 site_prefix + ".self");
}

Tensor interaction_stack_forward(const Tensor& a0, const Tensor& b,
                                 const std::vector<CCABParams>& params, const FusionConfig& cfg,
                                 const Padding& pad_a, const Padding& pad_b, ForwardCtx& ctx) {
    if (cfg.n_ccab < 0) throw ConfigError("n_ccab must be >= 0");
    if (static_cast<size_t>(cfg.n_ccab) > params.size()) {
        throw ConfigError("interaction stack has " + std::to_string(params.size()) +
                          " parameter blocks but n_ccab = " + std::to_string(cfg.n_ccab));
    }
    if (cfg.n_ccab == 0) return a0;

    Tensor a = a0;
    for (int t = 0; t < cfg.n_ccab; ++t) {
        a = ccab_forward(a, b, params[static_cast<size_t>(t)], cfg, pad_a, pad_b, ctx,
                         "interaction.ccab" + std::to_string(t));
    }
    return add(a0, a);
}

Tensor deep_fusion_forward(const Tensor& fused, const std::vector<EncoderLayerParams>& params,
                           const FusionConfig& cfg, const Padding& pad, ForwardCtx& ctx) {
    if (cfg.n_deep < 0) throw ConfigError("n_deep must be >= 0");
    if (static_cast<size_t>(cfg.n_deep) > params.size()) {
        throw ConfigError("deep fusion has " + std::to_string(params.size()) +
                          " parameter blocks but n_deep = " + std::to_string(cfg.n_deep));
    }
    const EncoderLayerConfig lc = ks_layer_cfg(cfg);
    Tensor x = fused;
    for (int t = 0; t < cfg.n_deep; ++t) {
        x = encoder_layer_forward(x, x, lc, params[static_cast<size_t>(t)], pad, ctx,
                                  "deep." + std::to_string(t));
    }
    return x;
}

} // namespace kst
