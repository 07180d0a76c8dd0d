#include "kst/attention.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace kst {

namespace {

void validate_triple(const AttentionTriple& t) {
    if (t.q.ndim() != 3 || t.k.ndim() != 3 || t.v.ndim() != 3) {
        throw ShapeError("attention expects [heads, seq, dim] inputs, got q=" + shape_str(t.q.shape()) +
                         " k=" + shape_str(t.k.shape()) + " v=" + shape_str(t.v.shape()));
    }
    const int64_t H = t.q.dim(0);
    if (t.k.dim(0) != H || t.v.dim(0) != H) {
        throw ShapeError("attention head counts differ: q=" + shape_str(t.q.shape()) + " k=" +
                         shape_str(t.k.shape()) + " v=" + shape_str(t.v.shape()));
    }
    if (t.q.dim(2) != t.k.dim(2)) {
        throw ShapeError("q and k must share d_q: " + shape_str(t.q.shape()) + " vs " +
                         shape_str(t.k.shape()));
    }
    if (t.k.dim(1) != t.v.dim(1)) {
        throw ShapeError("k and v must share sequence length: " + shape_str(t.k.shape()) + " vs " +
                         shape_str(t.v.shape()));
    }
    if (static_cast<int64_t>(t.key_valid.size()) != t.k.dim(1)) {
        throw ShapeError("key_valid length " + std::to_string(t.key_valid.size()) +
                         " does not match key count " + std::to_string(t.k.dim(1)));
    }
    bool any = false;
    for (uint8_t v : t.key_valid) any = any || v;
    if (!any) throw EmptyContextError("attention: all key positions are padded");
}

} // namespace

Padding Padding::all_valid(int64_t i, int64_t j) {
    Padding p;
    p.q_valid.assign(static_cast<size_t>(i), 1);
    p.kv_valid.assign(static_cast<size_t>(j), 1);
    return p;
}

AttentionOut scaled_dot_attention(const AttentionTriple& t) {
    validate_triple(t);
    const int64_t d_q = t.q.dim(2);
    Tensor logits = matmul(t.q, transpose_last2(t.k));
    logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(d_q)));
    Tensor w = softmax_rows_masked(logits, t.key_valid);
    Tensor attn = matmul(w, t.v);
    return {attn, w};
}

ImportanceScores column_importance(const Tensor& weights,
                                   const std::vector<uint8_t>& query_valid) {
    if (weights.ndim() != 3) {
        throw ShapeError("column_importance expects [heads, i, j], got " + shape_str(weights.shape()));
    }
    const int64_t H = weights.dim(0), rows = weights.dim(1), cols = weights.dim(2);
    if (static_cast<int64_t>(query_valid.size()) != rows) {
        throw ShapeError("query_valid length " + std::to_string(query_valid.size()) +
                         " does not match rows " + std::to_string(rows));
    }
    Tensor s = Tensor::zeros({H, cols});
    double* sv = s.values_mut().data();
    const double* wv = weights.values().data();
    for (int64_t h = 0; h < H; ++h) {
        for (int64_t r = 0; r < rows; ++r) {
            if (!query_valid[static_cast<size_t>(r)]) continue;
            const double* W = wv + (h * rows + r) * cols;
            double* S = sv + h * cols;
            for (int64_t z = 0; z < cols; ++z) S[z] += W[z];
        }
    }
    return {s};
}

SparseMask topk_mask(const ImportanceScores& scores, double ratio,
                     const std::vector<uint8_t>& key_valid) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw ConfigError("sparsity ratio must be in (0, 1], got " + std::to_string(ratio));
    }
    const Tensor& s = scores.s;
    if (s.ndim() != 2) throw ShapeError("importance scores must be [heads, j], got " + shape_str(s.shape()));
    const int64_t H = s.dim(0), cols = s.dim(1);
    if (static_cast<int64_t>(key_valid.size()) != cols) {
        throw ShapeError("key_valid length " + std::to_string(key_valid.size()) +
                         " does not match score columns " + std::to_string(cols));
    }

    int64_t j_valid = 0;
    for (uint8_t v : key_valid) j_valid += v ? 1 : 0;
    if (j_valid < 1) throw EmptyContextError("topk_mask: no valid key positions");

    int64_t k = std::llround(ratio * static_cast<double>(j_valid));
    k = std::max<int64_t>(1, std::min(k, j_valid));

    SparseMask mask;
    mask.heads = static_cast<int>(H);
    mask.cols = cols;
    mask.ratio = ratio;
    mask.keep.assign(static_cast<size_t>(H * cols), 0);
    mask.kept_count.assign(static_cast<size_t>(H), 0);

    std::vector<double> vals;
    vals.reserve(static_cast<size_t>(j_valid));
    const double* sv = s.values().data();
    for (int64_t h = 0; h < H; ++h) {
        vals.clear();
        for (int64_t z = 0; z < cols; ++z) {
            if (key_valid[static_cast<size_t>(z)]) vals.push_back(sv[h * cols + z]);
        }
        // threshold = k-th largest summation among valid positions
        std::nth_element(vals.begin(), vals.begin() + (k - 1), vals.end(), std::greater<double>());
        const double threshold = vals[static_cast<size_t>(k - 1)];
        int kept = 0;
        for (int64_t z = 0; z < cols; ++z) {
            if (!key_valid[static_cast<size_t>(z)]) continue;
            if (sv[h * cols + z] >= threshold) {
                mask.keep[static_cast<size_t>(h * cols + z)] = 1;
                ++kept;
            }
        }
        mask.kept_count[static_cast<size_t>(h)] = kept;
    }
    return mask;
}

SparseAttentionOut key_sparse_attention(const AttentionTriple& t, double ratio,
                                        const std::vector<uint8_t>& query_valid,
                                        bool renormalize, const SparseMask* frozen_mask) {
    AttentionOut dense = scaled_dot_attention(t);

    SparseMask mask;
    if (frozen_mask) {
        mask = *frozen_mask;
        if (mask.heads != dense.weights.dim(0) || mask.cols != dense.weights.dim(2)) {
            throw ShapeError("frozen mask shape does not match weights " +
                             shape_str(dense.weights.shape()));
        }
    } else {
        ImportanceScores s = column_importance(dense.weights, query_valid);
        mask = topk_mask(s, ratio, t.key_valid);
    }

    std::vector<double> factor(mask.keep.size());
    for (size_t i = 0; i < factor.size(); ++i) factor[i] = mask.keep[i] ? 1.0 : 0.0;
    Tensor w_sparse = mul_columns_const(dense.weights, factor);
    if (renormalize) w_sparse = renorm_rows(w_sparse);
    Tensor attn = matmul(w_sparse, t.v);
    return {attn, w_sparse, dense.weights, std::move(mask)};
}

void MaskStore::put(const std::string& site, const SparseMask& mask) {
    for (auto& [name, m] : stored_) {
        if (name == site) {
            m = mask;
            return;
        }
    }
    stored_.emplace_back(site, mask);
}

const SparseMask* MaskStore::get(const std::string& site) const {
    for (auto& [name, m] : stored_) {
        if (name == site) return &m;
    }
    return nullptr;
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p, int heads,
                            std::optional<double> sparse_ratio, const Padding& pad,
                            ForwardCtx& ctx, const std::string& site,
                            bool renormalize_after_mask) {
    if (x_q.ndim() != 2 || x_kv.ndim() != 2) {
        throw ShapeError("multi_head_attention expects [seq, d_model] inputs, got " +
                         shape_str(x_q.shape()) + " and " + shape_str(x_kv.shape()));
    }
    const int64_t d_model = x_q.dim(1);
    if (x_kv.dim(1) != d_model) {
        throw ShapeError("query and key/value streams disagree on d_model: " + shape_str(x_q.shape()) +
                         " vs " + shape_str(x_kv.shape()));
    }
    if (heads < 1 || d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                          std::to_string(heads));
    }

    Tensor q = split_heads(linear(x_q, p.wq, p.bq), heads);
    Tensor k = split_heads(linear(x_kv, p.wk, p.bk), heads);
    Tensor v = split_heads(linear(x_kv, p.wv, p.bv), heads);
    AttentionTriple triple{q, k, v, pad.kv_valid};

    Tensor per_head;
    if (sparse_ratio.has_value()) {
        const SparseMask* frozen = nullptr;
        if (ctx.masks && ctx.masks->mode() == MaskStore::Mode::Replay) {
            frozen = ctx.masks->get(site);
            if (!frozen) throw ContractError("mask replay requested but no mask recorded for site " + site);
        }
        SparseAttentionOut out =
            key_sparse_attention(triple, *sparse_ratio, pad.q_valid, renormalize_after_mask, frozen);
        if (ctx.masks && ctx.masks->mode() == MaskStore::Mode::Record) ctx.masks->put(site, out.mask);
        if (ctx.trace) {
            AttnTraceEntry e;
            e.layer = site;
            e.heads = static_cast<int>(out.weights_dense.dim(0));
            e.rows = out.weights_dense.dim(1);
            e.cols = out.weights_dense.dim(2);
            e.dense = out.weights_dense.values();
            e.mask = out.mask.keep;
            e.sparse = out.weights_sparse.values();
            ctx.trace->entries.push_back(std::move(e));
        }
        per_head = out.attn;
    } else {
        AttentionOut out = scaled_dot_attention(triple);
        if (ctx.trace) {
            AttnTraceEntry e;
            e.layer = site;
            e.heads = static_cast<int>(out.weights.dim(0));
            e.rows = out.weights.dim(1);
            e.cols = out.weights.dim(2);
            e.dense = out.weights.values();
            e.mask.assign(static_cast<size_t>(e.heads * e.cols), 1);
            e.sparse = out.weights.values();
            ctx.trace->entries.push_back(std::move(e));
        }
        per_head = out.attn;
    }

    return linear(merge_heads(per_head), p.wo, p.bo);
}

std::string attn_trace_to_json(const AttnTrace& trace) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : trace.entries) {
        for (int h = 0; h < e.heads; ++h) {
            nlohmann::json obj;
            obj["layer"] = e.layer;
            obj["head"] = h;
            obj["rows"] = e.rows;
            obj["cols"] = e.cols;
            nlohmann::json dense = nlohmann::json::array();
            nlohmann::json sparse = nlohmann::json::array();
            for (int64_t r = 0; r < e.rows; ++r) {
                nlohmann::json drow = nlohmann::json::array();
                nlohmann::json srow = nlohmann::json::array();
                for (int64_t c = 0; c < e.cols; ++c) {
                    const size_t idx = static_cast<size_t>((h * e.rows + r) * e.cols + c);
                    drow.push_back(e.dense[idx]);
                    srow.push_back(e.sparse[idx]);
                }
                dense.push_back(std::move(drow));
                sparse.push_back(std::move(srow));
            }
            nlohmann::json mask = nlohmann::json::array();
            for (int64_t c = 0; c < e.cols; ++c) {
                mask.push_back(static_cast<int>(e.mask[static_cast<size_t>(h * e.cols + c)]));
            }
            obj["dense"] = std::move(dense);
            obj["mask"] = std::move(mask);
            obj["sparse"] = std::move(sparse);
            arr.push_back(std::move(obj));
        }
    }
    return arr.dump(2);
}

} // namespace kst
