#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kst/ops.hpp"
#include "kst/tensor.hpp"

namespace kst {

// Q/K/V of one multi-head attention call. K and V share sequence length j;
// Q and K share the trailing dimension d_q that scales the logits.
struct AttentionTriple {
    Tensor q; // [heads, i, d_q]
    Tensor k; // [heads, j, d_q]
    Tensor v; // [heads, j, d_v]
    std::vector<uint8_t> key_valid; // size j, nonzero marks a usable key position
};

struct AttentionOut {
    Tensor attn;    // [heads, i, d_v]
    Tensor weights; // [heads, i, j], rows sum to 1 over valid keys; padded keys exactly 0
};

// Per-head column sums of the weight matrix over valid query rows: the
// importance score of each key position. Plain values, not recorded.
struct ImportanceScores {
    Tensor s; // [heads, j]
};

// Per-head binary keep/drop decision over key positions.
struct SparseMask {
    std::vector<uint8_t> keep; // [heads * j], row-major per head
    std::vector<int> kept_count; // per head
    int heads = 0;
    int64_t cols = 0;
    double ratio = 0.0;

    bool kept(int head, int64_t z) const { return keep[static_cast<size_t>(head) * cols + z] != 0; }
};

struct SparseAttentionOut {
    Tensor attn;           // [heads, i, d_v]
    Tensor weights_sparse; // [heads, i, j]
    Tensor weights_dense;  // [heads, i, j] pre-mask
    SparseMask mask;
};

// attn = softmax(Q K^T / sqrt(d_q)) V with padded keys forced to zero weight.
AttentionOut scaled_dot_attention(const AttentionTriple& t);

// Sum each weight column over valid query rows. Operates on values only;
// the result never carries gradient history (the mask derived from it is a
// constant of the forward pass).
ImportanceScores column_importance(const Tensor& weights, const std::vector<uint8_t>& query_valid);

// Keep, per head, the positions whose importance is at least the k-th
// largest among valid positions, k = max(1, round(ratio * j_valid)). Ties at
// the threshold are all kept. Padded positions are always dropped.
SparseMask topk_mask(const ImportanceScores& s, double ratio, const std::vector<uint8_t>& key_valid);

// Dense attention, then zero the weights of dropped key columns without
// renormalizing: kept weights are unchanged. Gradients flow only through
// kept entries. When `renormalize` is set each row is rescaled to sum to 1
// after masking (ablation switch, off by default).
SparseAttentionOut key_sparse_attention(const AttentionTriple& t, double ratio,
                                        const std::vector<uint8_t>& query_valid,
                                        bool renormalize = false,
                                        const SparseMask* frozen_mask = nullptr);

// One captured attention site: dense weights, mask and masked weights for
// every head, exportable as JSON (the data behind weight heatmaps).
struct AttnTraceEntry {
    std::string layer;
    int heads = 0;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> dense;  // heads*rows*cols
    std::vector<uint8_t> mask;  // heads*cols, all-ones for dense layers
    std::vector<double> sparse; // heads*rows*cols, equals dense for dense layers
};

struct AttnTrace {
    std::vector<AttnTraceEntry> entries;
};

// Serialize a trace as a JSON array of {layer, head, rows, cols, dense,
// mask, sparse} objects, one per (layer, head).
std::string attn_trace_to_json(const AttnTrace& trace);

// Records masks on the first pass and replays them on later passes; used to
// freeze the top-k selection during finite-difference checks.
class MaskStore {
public:
    enum class Mode { Record, Replay };

    explicit MaskStore(Mode m = Mode::Record) : mode_(m) {}

    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    void put(const std::string& site, const SparseMask& mask);
    const SparseMask* get(const std::string& site) const;

private:
    Mode mode_;
    std::vector<std::pair<std::string, SparseMask>> stored_;
};

// Per-call side context threaded through forward passes.
struct ForwardCtx {
    bool training = false;
    Rng* rng = nullptr;          // consumed by dropout when training
    AttnTrace* trace = nullptr;  // optional weight capture
    MaskStore* masks = nullptr;  // optional frozen-mask record/replay
    std::vector<std::string>* warnings = nullptr;
};

struct MhaParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct Padding {
    std::vector<uint8_t> q_valid;
    std::vector<uint8_t> kv_valid;

    static Padding all_valid(int64_t i, int64_t j);
};

// Projects x_q -> Q and x_kv -> K, V; runs dense or key-sparse attention per
// head depending on sparse_ratio; concatenates heads and applies the output
// projection.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p, int heads,
                            std::optional<double> sparse_ratio, const Padding& pad,
                            ForwardCtx& ctx, const std::string& site,
                            bool renormalize_after_mask = false);

} // namespace kst
