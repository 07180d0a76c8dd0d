#include "kst/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bytes.hpp"
#include "kst/rng.hpp"

namespace kst {

void ModelConfig::validate() const {
    if (d_model < 2 || d_model % 2 != 0) throw ConfigError("d_model must be even and >= 2");
    if (heads < 1 || d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " must be divisible by heads " +
                          std::to_string(heads));
    }
    if (n_feat_layers < 0 || n_ccab < 0 || n_deep < 0) throw ConfigError("layer counts must be >= 0");
    if (!(sparse_ratio > 0.0 && sparse_ratio <= 1.0)) {
        throw ConfigError("sparse_ratio must be in (0, 1], got " + std::to_string(sparse_ratio));
    }
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (audio_in_dim < 1 || text_in_dim < 1) throw ConfigError("input dimensions must be >= 1");
    if (max_audio_len < 1 || max_text_len < 1) throw ConfigError("max lengths must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
    if (query_modality != "audio" && query_modality != "text") {
        throw ConfigError("query_modality must be \"audio\" or \"text\", got " + query_modality);
    }
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["d_model"] = d_model;
    j["heads"] = heads;
    j["n_feat_layers"] = n_feat_layers;
    j["n_ccab"] = n_ccab;
    j["n_deep"] = n_deep;
    j["sparse_ratio"] = sparse_ratio;
    j["n_classes"] = n_classes;
    j["audio_in_dim"] = audio_in_dim;
    j["text_in_dim"] = text_in_dim;
    j["max_audio_len"] = max_audio_len;
    j["max_text_len"] = max_text_len;
    j["dropout_p"] = dropout_p;
    j["ffn_dim"] = ffn_dim;
    j["sparse_enabled"] = sparse_enabled;
    j["renormalize_after_mask"] = renormalize_after_mask;
    j["query_modality"] = query_modality;
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.n_feat_layers = j.value("n_feat_layers", c.n_feat_layers);
    c.n_ccab = j.value("n_ccab", c.n_ccab);
    c.n_deep = j.value("n_deep", c.n_deep);
    c.sparse_ratio = j.value("sparse_ratio", c.sparse_ratio);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.audio_in_dim = j.value("audio_in_dim", c.audio_in_dim);
    c.text_in_dim = j.value("text_in_dim", c.text_in_dim);
    c.max_audio_len = j.value("max_audio_len", c.max_audio_len);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.sparse_enabled = j.value("sparse_enabled", c.sparse_enabled);
    c.renormalize_after_mask = j.value("renormalize_after_mask", c.renormalize_after_mask);
    c.query_modality = j.value("query_modality", c.query_modality);
    c.validate();
    return c;
}

EmotionLabel emotion_from_id(int id) {
    if (id < 0 || id >= static_cast<int>(kEmotionNames.size())) {
        throw ContractError("emotion id out of range: " + std::to_string(id));
    }
    return {id, kEmotionNames[static_cast<size_t>(id)]};
}

EmotionLabel emotion_from_name(const std::string& name) {
    for (size_t i = 0; i < kEmotionNames.size(); ++i) {
        if (name == kEmotionNames[i]) return {static_cast<int>(i), name};
    }
    throw ContractError("unknown emotion name: " + name);
}

namespace {

// Deterministic initialization: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
// for linear weights and biases, gain 1 / bias 0 for norms, drawn in registry
// order from a single stream.
struct ParamBuilder {
    Rng rng;
    std::vector<Parameter>* registry;

    Tensor lin_w(int64_t din, int64_t dout, const std::string& name) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(din));
        Tensor t = Tensor::zeros({din, dout}, true);
        for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
        registry->emplace_back(name, t);
        return t;
    }

    Tensor lin_b(int64_t din, int64_t dout, const std::string& name) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(din));
        Tensor t = Tensor::zeros({dout}, true);
        for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
        registry->emplace_back(name, t);
        return t;
    }

    Tensor norm_gain(int64_t d, const std::string& name) {
        Tensor t = Tensor::full({d}, 1.0, true);
        registry->emplace_back(name, t);
        return t;
    }

    Tensor norm_bias(int64_t d, const std::string& name) {
        Tensor t = Tensor::zeros({d}, true);
        registry->emplace_back(name, t);
        return t;
    }

    MhaParams mha(int64_t d, const std::string& prefix) {
        MhaParams p;
        p.wq = lin_w(d, d, prefix + ".wq");
        p.bq = lin_b(d, d, prefix + ".bq");
        p.wk = lin_w(d, d, prefix + ".wk");
        p.bk = lin_b(d, d, prefix + ".bk");
        p.wv = lin_w(d, d, prefix + ".wv");
        p.bv = lin_b(d, d, prefix + ".bv");
        p.wo = lin_w(d, d, prefix + ".wo");
        p.bo = lin_b(d, d, prefix + ".bo");
        return p;
    }

    EncoderLayerParams layer(int64_t d, int64_t ffn, const std::string& prefix) {
        EncoderLayerParams p;
        p.attn = mha(d, prefix + ".attn");
        p.norm1_gain = norm_gain(d, prefix + ".norm1.gain");
        p.norm1_bias = norm_bias(d, prefix + ".norm1.bias");
        p.ffn_w1 = lin_w(d, ffn, prefix + ".ffn.w1");
        p.ffn_b1 = lin_b(d, ffn, prefix + ".ffn.b1");
        p.ffn_w2 = lin_w(ffn, d, prefix + ".ffn.w2");
        p.ffn_b2 = lin_b(ffn, d, prefix + ".ffn.b2");
        p.norm2_gain = norm_gain(d, prefix + ".norm2.gain");
        p.norm2_bias = norm_bias(d, prefix + ".norm2.bias");
        return p;
    }
};

} // namespace

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    const int64_t d = cfg_.d_model;
    const int64_t ffn = cfg_.effective_ffn_dim();
    ParamBuilder b{Rng(seed), &registry_};

    params_.audio_proj_w = b.lin_w(cfg_.audio_in_dim, d, "audio_proj.w");
    params_.audio_proj_b = b.lin_b(cfg_.audio_in_dim, d, "audio_proj.b");
    params_.text_proj_w = b.lin_w(cfg_.text_in_dim, d, "text_proj.w");
    params_.text_proj_b = b.lin_b(cfg_.text_in_dim, d, "text_proj.b");
    for (int l = 0; l < cfg_.n_feat_layers; ++l) {
        params_.audio_feat.push_back(b.layer(d, ffn, "audio_feat." + std::to_string(l)));
    }
    for (int l = 0; l < cfg_.n_feat_layers; ++l) {
        params_.text_feat.push_back(b.layer(d, ffn, "text_feat." + std::to_string(l)));
    }
    for (int t = 0; t < cfg_.n_ccab; ++t) {
        const std::string prefix = "interaction.ccab" + std::to_string(t);
        CCABParams cp;
        cp.cross = b.layer(d, ffn, prefix + ".cross");
        cp.self_attn = b.layer(d, ffn, prefix + ".self");
        params_.ccabs.push_back(std::move(cp));
    }
    for (int t = 0; t < cfg_.n_deep; ++t) {
        params_.deep.push_back(b.layer(d, ffn, "deep." + std::to_string(t)));
    }
    params_.classifier_w = b.lin_w(d, cfg_.n_classes, "classifier.w");
    params_.classifier_b = b.lin_b(d, cfg_.n_classes, "classifier.b");
}

int64_t Model::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : registry_) n += p.tensor.numel();
    return n;
}

Model Model::twin_with_config(ModelConfig cfg) const {
    cfg.validate();
    if (cfg.d_model != cfg_.d_model || cfg.heads != cfg_.heads ||
        cfg.n_feat_layers != cfg_.n_feat_layers || cfg.n_ccab != cfg_.n_ccab ||
        cfg.n_deep != cfg_.n_deep || cfg.audio_in_dim != cfg_.audio_in_dim ||
        cfg.text_in_dim != cfg_.text_in_dim || cfg.n_classes != cfg_.n_classes ||
        cfg.effective_ffn_dim() != cfg_.effective_ffn_dim()) {
        throw ConfigError("twin_with_config requires an architecture-compatible configuration");
    }
    Model m(*this); // shares parameter tensors
    m.cfg_ = std::move(cfg);
    return m;
}

namespace {

struct PreparedModality {
    Tensor input;
    std::vector<uint8_t> valid;
};

PreparedModality prepare_modality(const Tensor& x, const std::vector<uint8_t>& valid,
                                  int64_t in_dim, int64_t max_len, const char* which,
                                  ForwardCtx& ctx) {
    if (x.ndim() != 2 || x.dim(1) != in_dim) {
        throw ShapeError(std::string(which) + " input must be [L, " + std::to_string(in_dim) +
                         "], got " + shape_str(x.shape()));
    }
    const int64_t L = x.dim(0);
    if (static_cast<int64_t>(valid.size()) != L) {
        throw ShapeError(std::string(which) + " validity mask length " +
                         std::to_string(valid.size()) + " does not match L=" + std::to_string(L));
    }
    PreparedModality out;
    if (L > max_len) {
        if (ctx.warnings) {
            ctx.warnings->push_back(std::string(which) + " sequence truncated from " +
                                    std::to_string(L) + " to " + std::to_string(max_len));
        }
        std::vector<double> data(x.values().begin(), x.values().begin() + max_len * in_dim);
        out.input = Tensor::from_data({max_len, in_dim}, std::move(data));
        out.valid.assign(valid.begin(), valid.begin() + max_len);
    } else {
        out.input = x;
        out.valid = valid;
    }
    bool any = false;
    for (uint8_t v : out.valid) any = any || v;
    if (!any) throw EmptyContextError(std::string(which) + " modality has no valid positions");
    return out;
}

} // namespace

Tensor Model::forward(const Tensor& audio, const Tensor& text,
                      const std::vector<uint8_t>& audio_valid,
                      const std::vector<uint8_t>& text_valid, ForwardCtx& ctx) const {
    PreparedModality am =
        prepare_modality(audio, audio_valid, cfg_.audio_in_dim, cfg_.max_audio_len, "audio", ctx);
    PreparedModality tm =
        prepare_modality(text, text_valid, cfg_.text_in_dim, cfg_.max_text_len, "text", ctx);

    EncoderLayerConfig feat_cfg;
    feat_cfg.d_model = cfg_.d_model;
    feat_cfg.heads = cfg_.heads;
    feat_cfg.ffn_dim = cfg_.effective_ffn_dim();
    feat_cfg.dropout_p = cfg_.dropout_p;
    // feature extraction is vanilla: no sparse_ratio

    Tensor a = linear(am.input, params_.audio_proj_w, params_.audio_proj_b);
    a = add(a, positional_encoding(a.dim(0), cfg_.d_model));
    Padding pad_a{am.valid, am.valid};
    for (size_t l = 0; l < params_.audio_feat.size(); ++l) {
        a = encoder_layer_forward(a, a, feat_cfg, params_.audio_feat[l], pad_a, ctx,
                                  "audio_feat." + std::to_string(l));
    }

    Tensor t = linear(tm.input, params_.text_proj_w, params_.text_proj_b);
    t = add(t, positional_encoding(t.dim(0), cfg_.d_model));
    Padding pad_t{tm.valid, tm.valid};
    for (size_t l = 0; l < params_.text_feat.size(); ++l) {
        t = encoder_layer_forward(t, t, feat_cfg, params_.text_feat[l], pad_t, ctx,
                                  "text_feat." + std::to_string(l));
    }

    const bool audio_is_query = cfg_.query_modality == "audio";
    const Tensor& stream_a = audio_is_query ? a : t;
    const Tensor& stream_b = audio_is_query ? t : a;
    const Padding& pad_qa = audio_is_query ? pad_a : pad_t;
    const Padding& pad_kb = audio_is_query ? pad_t : pad_a;

    FusionConfig fc;
    fc.n_ccab = cfg_.n_ccab;
    fc.n_deep = cfg_.n_deep;
    fc.d_model = cfg_.d_model;
    fc.heads = cfg_.heads;
    fc.ffn_dim = cfg_.effective_ffn_dim();
    fc.dropout_p = cfg_.dropout_p;
    fc.sparse_ratio =
        cfg_.sparse_enabled ? std::optional<double>(cfg_.sparse_ratio) : std::nullopt;
    fc.renormalize_after_mask = cfg_.renormalize_after_mask;

    Tensor fused = interaction_stack_forward(stream_a, stream_b, params_.ccabs, fc, pad_qa, pad_kb, ctx);
    Tensor deep = deep_fusion_forward(fused, params_.deep, fc, pad_qa, ctx);

    Tensor pooled = mean_pool_valid(deep, pad_qa.q_valid);
    return linear(pooled, params_.classifier_w, params_.classifier_b);
}

Tensor Model::forward(const Tensor& audio, const Tensor& text, ForwardCtx& ctx) const {
    std::vector<uint8_t> av(static_cast<size_t>(audio.dim(0)), 1);
    std::vector<uint8_t> tv(static_cast<size_t>(text.dim(0)), 1);
    return forward(audio, text, av, tv, ctx);
}

EmotionLabel predict(const Tensor& logits) {
    if (logits.ndim() != 1) throw ShapeError("predict expects 1-D logits, got " + shape_str(logits.shape()));
    const auto& v = logits.values();
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return emotion_from_id(static_cast<int>(best));
}

void save_checkpoint(const std::string& dir, const Model& model, uint64_t seed, int epoch,
                     const nlohmann::json& history) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format"] = "kst-checkpoint";
    manifest["version"] = 1;
    manifest["config"] = model.config().to_json();
    manifest["seed"] = seed;
    manifest["epoch"] = epoch;
    manifest["history"] = history;
    manifest["data_file"] = "params.bin";
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : model.parameters()) {
        nlohmann::json pj;
        pj["name"] = p.name;
        pj["shape"] = p.tensor.shape();
        plist.push_back(std::move(pj));
    }
    manifest["params"] = std::move(plist);

    const fs::path mpath = fs::path(dir) / "manifest.json";
    {
        std::ofstream os(mpath.string() + ".tmp", std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + mpath.string());
        os << manifest.dump(2) << "\n";
    }
    fs::rename(mpath.string() + ".tmp", mpath);

    const fs::path bpath = fs::path(dir) / "params.bin";
    std::ofstream os(bpath.string() + ".tmp", std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + bpath.string());
    for (const auto& p : model.parameters()) {
        bytes::write_u32(os, static_cast<uint32_t>(p.name.size()));
        bytes::write_bytes(os, p.name);
        bytes::write_u32(os, static_cast<uint32_t>(p.tensor.ndim()));
        for (int64_t d : p.tensor.shape()) bytes::write_u32(os, static_cast<uint32_t>(d));
        for (double v : p.tensor.values()) bytes::write_f64(os, v);
    }
    os.close();
    fs::rename(bpath.string() + ".tmp", bpath);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream ms(mpath, std::ios::binary);
    if (!ms) throw IoError("cannot open " + mpath.string());
    nlohmann::json manifest;
    try {
        ms >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "kst-checkpoint") {
        throw FormatError("not a checkpoint manifest: " + mpath.string());
    }

    LoadedCheckpoint out{Model(ModelConfig::from_json(manifest.at("config")),
                               manifest.value("seed", uint64_t{0})),
                         manifest.value("seed", uint64_t{0}), manifest.value("epoch", 0),
                         manifest.value("history", nlohmann::json::array())};

    const fs::path bpath = fs::path(dir) / manifest.value("data_file", "params.bin");
    std::ifstream is(bpath, std::ios::binary);
    if (!is) throw IoError("cannot open " + bpath.string());
    for (auto& p : out.model.parameters()) {
        const uint32_t name_len = bytes::read_u32(is, "parameter name length");
        const std::string name = bytes::read_string(is, name_len, "parameter name");
        if (name != p.name) {
            throw FormatError("checkpoint parameter order mismatch: expected " + p.name + ", found " +
                              name);
        }
        const uint32_t ndim = bytes::read_u32(is, "parameter rank");
        Shape shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i) {
            shape[i] = static_cast<int64_t>(bytes::read_u32(is, "parameter dimension"));
        }
        if (shape != p.tensor.shape()) {
            throw FormatError("checkpoint shape mismatch for " + p.name + ": file " + shape_str(shape) +
                              ", model " + shape_str(p.tensor.shape()));
        }
        for (double& v : p.tensor.values_mut()) v = bytes::read_f64(is, "parameter values");
    }
    is.peek();
    if (!is.eof()) throw CorruptFileError("trailing bytes after last parameter in " + bpath.string());
    return out;
}

ModelConfig tiny_preset() {
    ModelConfig c;
    c.d_model = 8;
    c.heads = 2;
    c.n_feat_layers = 1;
    c.n_ccab = 1;
    c.n_deep = 1;
    c.audio_in_dim = 6;
    c.text_in_dim = 5;
    c.max_audio_len = 46;
    c.max_text_len = 12;
    return c;
}

ModelConfig small_preset() {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 4;
    c.n_feat_layers = 2;
    c.n_ccab = 2;
    c.n_deep = 2;
    c.audio_in_dim = 8;
    c.text_in_dim = 7;
    c.max_audio_len = 46;
    c.max_text_len = 12;
    return c;
}

} // namespace kst
