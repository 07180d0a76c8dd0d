#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "kst/fusion.hpp"

namespace kst {

// Every architectural and training-relevant hyperparameter, serializable.
// Defaults: 8 heads, 5 feature-extraction layers per modality, 3 CCABs,
// 2 deep-fusion layers, sparsity 0.5, max sequence lengths 460 (audio) and
// 20 (text), dropout 0.5, 4 classes.
struct ModelConfig {
    int d_model = 256;
    int heads = 8;
    int n_feat_layers = 5;
    int n_ccab = 3;
    int n_deep = 2;
    double sparse_ratio = 0.5;
    int n_classes = 4;
    int audio_in_dim = 512;
    int text_in_dim = 768;
    int max_audio_len = 460;
    int max_text_len = 20;
    double dropout_p = 0.5;
    int ffn_dim = 0; // 0 means 4 * d_model
    bool sparse_enabled = true; // false runs fusion/deep layers dense (ablation twin)
    bool renormalize_after_mask = false;
    std::string query_modality = "audio"; // stream A of the interaction stack

    int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * d_model; }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Fixed label set: angry=0, neutral=1, happy=2, sad=3.
struct EmotionLabel {
    int id = 0;
    std::string name;
};

inline constexpr std::array<const char*, 4> kEmotionNames = {"angry", "neutral", "happy", "sad"};

EmotionLabel emotion_from_id(int id);
EmotionLabel emotion_from_name(const std::string& name);

struct ModelParams {
    Tensor audio_proj_w, audio_proj_b;
    Tensor text_proj_w, text_proj_b;
    std::vector<EncoderLayerParams> audio_feat;
    std::vector<EncoderLayerParams> text_feat;
    std::vector<CCABParams> ccabs;
    std::vector<EncoderLayerParams> deep;
    Tensor classifier_w, classifier_b;
};

// The complete two-modality classifier: per-modality input projections and
// positional encoding, vanilla self-attention feature stacks, the CCAB
// interaction stack, deep fusion, mean pooling over valid positions, and a
// linear classifier producing raw logits.
class Model {
public:
    Model(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const ModelParams& params() const { return params_; }
    std::vector<Parameter>& parameters() { return registry_; }
    const std::vector<Parameter>& parameters() const { return registry_; }
    int64_t parameter_count() const;
    uint64_t init_seed() const { return seed_; }

    // Same parameter tensors under a different configuration. Layer counts
    // and dimensions must match; used for dense/sparse twin comparisons.
    Model twin_with_config(ModelConfig cfg) const;

    // audio: [L_a, audio_in_dim], text: [L_t, text_in_dim]. Sequences longer
    // than the configured maxima are truncated (recorded in ctx.warnings).
    Tensor forward(const Tensor& audio, const Tensor& text, const std::vector<uint8_t>& audio_valid,
                   const std::vector<uint8_t>& text_valid, ForwardCtx& ctx) const;

    // All positions valid.
    Tensor forward(const Tensor& audio, const Tensor& text, ForwardCtx& ctx) const;

private:
    Model() = default;

    ModelConfig cfg_;
    ModelParams params_;
    std::vector<Parameter> registry_;
    uint64_t seed_ = 0;
};

// Argmax with lowest-id tie-break.
EmotionLabel predict(const Tensor& logits);

// Checkpoint directory layout: manifest.json (config, seed, epoch, history,
// parameter name/shape table) plus params.bin, a flat blob of parameters in
// manifest order, each name- and shape-prefixed, values little-endian f64.
void save_checkpoint(const std::string& dir, const Model& model, uint64_t seed, int epoch,
                     const nlohmann::json& history);

struct LoadedCheckpoint {
    Model model;
    uint64_t seed = 0;
    int epoch = 0;
    nlohmann::json history;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// Desk-scale configurations used by gradient checks and fast tests.
ModelConfig tiny_preset();  // d_model 8, 2 heads, 1 feature layer, 1 CCAB, 1 deep
ModelConfig small_preset(); // d_model 16, 4 heads, 2 of each

} // namespace kst
