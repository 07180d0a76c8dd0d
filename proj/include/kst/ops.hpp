#pragma once

#include <cstdint>
#include <vector>

#include "kst/rng.hpp"
#include "kst/tensor.hpp"

namespace kst {

// Forward operations with recorded gradients. Shapes are validated strictly:
// no implicit broadcasting beyond the identical leading batch/head dimensions
// of matmul. All math is double precision.

// Elementwise sum; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product; shapes must match exactly.
Tensor mul(const Tensor& a, const Tensor& b);

// x * c for a scalar constant c.
Tensor scale(const Tensor& x, double c);

// Batched matrix product. Both operands are 2-D, or N-D with identical
// leading dimensions contracting over the trailing pair.
Tensor matmul(const Tensor& a, const Tensor& b);

// Swap the last two dimensions (materialized copy).
Tensor transpose_last2(const Tensor& x);

// Row softmax over the last dimension, stabilized by row-max subtraction.
Tensor softmax_rows(const Tensor& x);

// Row softmax restricted to columns marked valid; invalid columns are exactly
// zero in the output. `valid` has one entry per trailing-dimension column.
Tensor softmax_rows_masked(const Tensor& x, const std::vector<uint8_t>& valid);

// Layer normalization over the last dimension with affine gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Position-wise affine map: x[..., din] -> [..., dout]. A 1-D input is
// treated as a single position.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);

// Sum of all elements -> scalar.
Tensor sum_all(const Tensor& x);

// Mean over valid rows of x[L, d] -> [d].
Tensor mean_pool_valid(const Tensor& x, const std::vector<uint8_t>& valid);

// Multiply each column of x[H, i, j] by a constant factor[h*j + z]. The
// factor is a constant of the forward pass: gradients flow through scaled
// entries only (zero factor blocks flow entirely).
Tensor mul_columns_const(const Tensor& x, const std::vector<double>& col_factor);

// Divide every row (last dimension) by its sum. Row sums must be positive.
Tensor renorm_rows(const Tensor& x);

// Inverted dropout; keep probability 1-p, kept entries scaled by 1/(1-p).
Tensor dropout(const Tensor& x, double p, Rng& rng);

// [i, d_model] -> [heads, i, d_model/heads]
Tensor split_heads(const Tensor& x, int heads);

// [heads, i, d_head] -> [i, heads*d_head]
Tensor merge_heads(const Tensor& x);

} // namespace kst
