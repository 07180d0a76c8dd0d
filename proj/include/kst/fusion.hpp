#pragma once

#include <string>
#include <vector>

#include "kst/layers.hpp"

namespace kst {

// Parameters of one cascaded cross-attention block: a key-sparse
// cross-attention layer (Q from stream A, K/V from stream B) followed by a
// key-sparse self-attention layer on the fused features.
struct CCABParams {
    EncoderLayerParams cross;
    EncoderLayerParams self_attn;
};

struct FusionConfig {
    int n_ccab = 3;
    int n_deep = 2;
    int d_model = 0;
    int heads = 0;
    int ffn_dim = 0;
    double dropout_p = 0.0;
    // Unset runs the fusion layers dense; the architecture proper always
    // sets it (CCAB and deep-fusion layers are key-sparse).
    std::optional<double> sparse_ratio = 0.5;
    bool renormalize_after_mask = false;
};

// One interaction: cross-attention from a into b, then self-attention on the
// fused features. Output length matches a.
Tensor ccab_forward(const Tensor& a, const Tensor& b, const CCABParams& params,
                    const FusionConfig& cfg, const Padding& pad_a, const Padding& pad_b,
                    ForwardCtx& ctx, const std::string& site_prefix);

// a_{t+1} = ccab(a_t, b) for n_ccab steps, K/V always from b, plus one long
// skip connection from the stack input to the stack output. n_ccab = 0
// returns a0 unchanged (module removed).
Tensor interaction_stack_forward(const Tensor& a0, const Tensor& b,
                                 const std::vector<CCABParams>& params, const FusionConfig& cfg,
                                 const Padding& pad_a, const Padding& pad_b, ForwardCtx& ctx);

// n_deep key-sparse self-attention layers applied sequentially.
Tensor deep_fusion_forward(const Tensor& fused, const std::vector<EncoderLayerParams>& params,
                           const FusionConfig& cfg, const Padding& pad, ForwardCtx& ctx);

} // namespace kst
