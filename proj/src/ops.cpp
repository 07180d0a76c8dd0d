#include "kst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kst {

namespace {

using Backward = std::function<void(const std::vector<double>&, GradMap&)>;

Tensor make_node(Shape shape, std::vector<double> value,
                 std::vector<std::shared_ptr<TensorImpl>> parents, Backward fn) {
    bool needs_grad = false;
    for (auto& p : parents) needs_grad = needs_grad || p->requires_grad;
    Tensor out = Tensor::from_data(std::move(shape), std::move(value));
    if (needs_grad) {
        out.impl()->requires_grad = true;
        out.impl()->parents = std::move(parents);
        out.impl()->backward_fn = std::move(fn);
    }
    return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

int64_t leading_count(const Shape& s, size_t trailing) {
    int64_t n = 1;
    for (size_t i = 0; i + trailing < s.size(); ++i) n *= s[i];
    return n;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto pa = a.impl(), pb = b.impl();
    return make_node(a.shape(), std::move(out), {pa, pb},
                     [pa, pb](const std::vector<double>& g, GradMap& gm) {
                         if (pa->requires_grad) {
                             auto& ga = gm.at(pa);
                             for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         }
                         if (pb->requires_grad) {
                             auto& gb = gm.at(pb);
                             for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                         }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto pa = a.impl(), pb = b.impl();
    return make_node(a.shape(), std::move(out), {pa, pb},
                     [pa, pb](const std::vector<double>& g, GradMap& gm) {
                         if (pa->requires_grad) {
                             auto& ga = gm.at(pa);
                             for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
                         }
                         if (pb->requires_grad) {
                             auto& gb = gm.at(pb);
                             for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
                         }
                     });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
    auto px = x.impl();
    return make_node(x.shape(), std::move(out), {px},
                     [px, c](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa.size() != sb.size()) {
        throw ShapeError("matmul: incompatible ranks, " + shape_str(sa) + " vs " + shape_str(sb));
    }
    for (size_t i = 0; i + 2 < sa.size(); ++i) {
        if (sa[i] != sb[i]) {
            throw ShapeError("matmul: leading dimensions differ, " + shape_str(sa) + " vs " +
                             shape_str(sb));
        }
    }
    const int64_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    const int64_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(sa) + " vs " +
                         shape_str(sb));
    }
    const int64_t batches = leading_count(sa, 2);

    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);

    std::vector<double> out(static_cast<size_t>(batches * m * n), 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (int64_t t = 0; t < batches; ++t) {
        const double* A = av + t * m * k;
        const double* B = bv + t * k * n;
        double* C = out.data() + t * m * n;
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t l = 0; l < k; ++l) {
                const double ail = A[i * k + l];
                for (int64_t j = 0; j < n; ++j) C[i * n + j] += ail * B[l * n + j];
            }
        }
    }

    auto pa = a.impl(), pb = b.impl();
    return make_node(std::move(out_shape), std::move(out), {pa, pb},
                     [pa, pb, batches, m, k, n](const std::vector<double>& g, GradMap& gm) {
                         if (pa->requires_grad) {
                             auto& ga = gm.at(pa);
                             for (int64_t t = 0; t < batches; ++t) {
                                 const double* G = g.data() + t * m * n;
                                 const double* B = pb->value.data() + t * k * n;
                                 double* GA = ga.data() + t * m * k;
                                 for (int64_t i = 0; i < m; ++i) {
                                     for (int64_t l = 0; l < k; ++l) {
                                         double s = 0.0;
                                         for (int64_t j = 0; j < n; ++j) s += G[i * n + j] * B[l * n + j];
                                         GA[i * k + l] += s;
                                     }
                                 }
                             }
                         }
                         if (pb->requires_grad) {
                             auto& gb = gm.at(pb);
                             for (int64_t t = 0; t < batches; ++t) {
                                 const double* G = g.data() + t * m * n;
                                 const double* A = pa->value.data() + t * m * k;
                                 double* GB = gb.data() + t * k * n;
                                 for (int64_t i = 0; i < m; ++i) {
                                     for (int64_t l = 0; l < k; ++l) {
                                         const double ail = A[i * k + l];
                                         for (int64_t j = 0; j < n; ++j) GB[l * n + j] += ail * G[i * n + j];
                                     }
                                 }
                             }
                         }
                     });
}

Tensor transpose_last2(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("transpose_last2 requires rank >= 2, got " + shape_str(s));
    const int64_t m = s[s.size() - 2], n = s[s.size() - 1];
    const int64_t batches = leading_count(s, 2);
    Shape out_shape(s.begin(), s.end() - 2);
    out_shape.push_back(n);
    out_shape.push_back(m);

    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (int64_t t = 0; t < batches; ++t) {
        const double* X = xv + t * m * n;
        double* O = out.data() + t * m * n;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) O[j * m + i] = X[i * n + j];
    }
    auto px = x.impl();
    return make_node(std::move(out_shape), std::move(out), {px},
                     [px, batches, m, n](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t t = 0; t < batches; ++t) {
                             const double* G = g.data() + t * m * n;
                             double* GX = gx.data() + t * m * n;
                             for (int64_t i = 0; i < m; ++i)
                                 for (int64_t j = 0; j < n; ++j) GX[i * n + j] += G[j * m + i];
                         }
                     });
}

static Tensor softmax_impl(const Tensor& x, const std::vector<uint8_t>* valid) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("softmax_rows requires rank >= 1");
    const int64_t n = s.back();
    const int64_t rows = leading_count(s, 1);
    if (valid && static_cast<int64_t>(valid->size()) != n) {
        throw ShapeError("softmax mask length " + std::to_string(valid->size()) +
                         " does not match columns " + std::to_string(n));
    }
    int64_t n_valid = n;
    if (valid) {
        n_valid = 0;
        for (uint8_t v : *valid) n_valid += v ? 1 : 0;
        if (n_valid == 0) throw EmptyContextError("softmax: every column is masked out");
    }
    for (double v : x.values()) {
        if (!std::isfinite(v)) throw NumericError("softmax input is not finite");
    }

    std::vector<double> out(x.values().size(), 0.0);
    const double* xv = x.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* X = xv + r * n;
        double* O = out.data() + r * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < n; ++j) {
            if (valid && !(*valid)[static_cast<size_t>(j)]) continue;
            mx = std::max(mx, X[j]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            if (valid && !(*valid)[static_cast<size_t>(j)]) continue;
            O[j] = std::exp(X[j] - mx);
            denom += O[j];
        }
        for (int64_t j = 0; j < n; ++j) O[j] /= denom;
        if (valid) {
            for (int64_t j = 0; j < n; ++j) {
                if (!(*valid)[static_cast<size_t>(j)]) O[j] = 0.0;
            }
        }
    }

    auto px = x.impl();
    std::vector<double> y = out; // saved for the Jacobian
    return make_node(s, std::move(out), {px},
                     [px, y = std::move(y), rows, n](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t r = 0; r < rows; ++r) {
                             const double* G = g.data() + r * n;
                             const double* Y = y.data() + r * n;
                             double dot = 0.0;
                             for (int64_t j = 0; j < n; ++j) dot += G[j] * Y[j];
                             double* GX = gx.data() + r * n;
                             for (int64_t j = 0; j < n; ++j) GX[j] += Y[j] * (G[j] - dot);
                         }
                     });
}

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, nullptr); }

Tensor softmax_rows_masked(const Tensor& x, const std::vector<uint8_t>& valid) {
    return softmax_impl(x, &valid);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm eps must be positive");
    const Shape& s = x.shape();
    const int64_t d = s.back();
    if (gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    const int64_t rows = leading_count(s, 1);

    std::vector<double> out(x.values().size());
    std::vector<double> xhat(x.values().size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    const double* xv = x.values().data();
    const double* gv = gain.values().data();
    const double* bv = bias.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* X = xv + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += X[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (X[j] - mu) * (X[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = inv;
        double* H = xhat.data() + r * d;
        double* O = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            H[j] = (X[j] - mu) * inv;
            O[j] = gv[j] * H[j] + bv[j];
        }
    }

    auto px = x.impl(), pg = gain.impl(), pb = bias.impl();
    return make_node(s, std::move(out), {px, pg, pb},
                     [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                      d](const std::vector<double>& g, GradMap& gm) {
                         if (pg->requires_grad) {
                             auto& gg = gm.at(pg);
                             for (int64_t r = 0; r < rows; ++r)
                                 for (int64_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                         }
                         if (pb->requires_grad) {
                             auto& gb = gm.at(pb);
                             for (int64_t r = 0; r < rows; ++r)
                                 for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                         }
                         if (px->requires_grad) {
                             auto& gx = gm.at(px);
                             const double* gv = pg->value.data();
                             for (int64_t r = 0; r < rows; ++r) {
                                 const double* G = g.data() + r * d;
                                 const double* H = xhat.data() + r * d;
                                 double mean_gg = 0.0, mean_ggh = 0.0;
                                 for (int64_t j = 0; j < d; ++j) {
                                     const double ggj = G[j] * gv[j];
                                     mean_gg += ggj;
                                     mean_ggh += ggj * H[j];
                                 }
                                 mean_gg /= static_cast<double>(d);
                                 mean_ggh /= static_cast<double>(d);
                                 const double inv = inv_std[static_cast<size_t>(r)];
                                 double* GX = gx.data() + r * d;
                                 for (int64_t j = 0; j < d; ++j) {
                                     const double ggj = G[j] * gv[j];
                                     GX[j] += inv * (ggj - mean_gg - H[j] * mean_ggh);
                                 }
                             }
                         }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.ndim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(weight.shape()));
    const int64_t din = weight.dim(0), dout = weight.dim(1);
    const Shape& sx = x.shape();
    if (sx.back() != din) {
        throw ShapeError("linear: input " + shape_str(sx) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    if (bias.ndim() != 1 || bias.dim(0) != dout) {
        throw ShapeError("linear: bias must be [" + std::to_string(dout) + "], got " +
                         shape_str(bias.shape()));
    }
    const int64_t positions = leading_count(sx, 1);

    Shape out_shape(sx.begin(), sx.end() - 1);
    out_shape.push_back(dout);

    std::vector<double> out(static_cast<size_t>(positions * dout));
    const double* xv = x.values().data();
    const double* wv = weight.values().data();
    const double* bv = bias.values().data();
    for (int64_t p = 0; p < positions; ++p) {
        const double* X = xv + p * din;
        double* O = out.data() + p * dout;
        for (int64_t o = 0; o < dout; ++o) O[o] = bv[o];
        for (int64_t k = 0; k < din; ++k) {
            const double xk = X[k];
            const double* W = wv + k * dout;
            for (int64_t o = 0; o < dout; ++o) O[o] += xk * W[o];
        }
    }

    auto px = x.impl(), pw = weight.impl(), pb = bias.impl();
    return make_node(std::move(out_shape), std::move(out), {px, pw, pb},
                     [px, pw, pb, positions, din, dout](const std::vector<double>& g, GradMap& gm) {
                         if (pb->requires_grad) {
                             auto& gb = gm.at(pb);
                             for (int64_t p = 0; p < positions; ++p)
                                 for (int64_t o = 0; o < dout; ++o) gb[o] += g[p * dout + o];
                         }
                         if (pw->requires_grad) {
                             auto& gw = gm.at(pw);
                             for (int64_t p = 0; p < positions; ++p) {
                                 const double* X = px->value.data() + p * din;
                                 const double* G = g.data() + p * dout;
                                 for (int64_t k = 0; k < din; ++k) {
                                     const double xk = X[k];
                                     double* GW = gw.data() + k * dout;
                                     for (int64_t o = 0; o < dout; ++o) GW[o] += xk * G[o];
                                 }
                             }
                         }
                         if (px->requires_grad) {
                             auto& gx = gm.at(px);
                             const double* wv = pw->value.data();
                             for (int64_t p = 0; p < positions; ++p) {
                                 const double* G = g.data() + p * dout;
                                 double* GX = gx.data() + p * din;
                                 for (int64_t k = 0; k < din; ++k) {
                                     const double* W = wv + k * dout;
                                     double s = 0.0;
                                     for (int64_t o = 0; o < dout; ++o) s += G[o] * W[o];
                                     GX[k] += s;
                                 }
                             }
                         }
                     });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    auto px = x.impl();
    return make_node(x.shape(), std::move(out), {px},
                     [px](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (size_t i = 0; i < g.size(); ++i) {
                             if (px->value[i] > 0.0) gx[i] += g[i];
                         }
                     });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto px = x.impl();
    return make_node({1}, {s}, {px}, [px](const std::vector<double>& g, GradMap& gm) {
        auto& gx = gm.at(px);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
    });
}

Tensor mean_pool_valid(const Tensor& x, const std::vector<uint8_t>& valid) {
    if (x.ndim() != 2) throw ShapeError("mean_pool_valid expects [L, d], got " + shape_str(x.shape()));
    const int64_t L = x.dim(0), d = x.dim(1);
    if (static_cast<int64_t>(valid.size()) != L) {
        throw ShapeError("mean_pool_valid mask length " + std::to_string(valid.size()) +
                         " does not match rows " + std::to_string(L));
    }
    int64_t nv = 0;
    for (uint8_t v : valid) nv += v ? 1 : 0;
    if (nv == 0) throw EmptyContextError("mean_pool_valid: no valid rows");

    std::vector<double> out(static_cast<size_t>(d), 0.0);
    const double* xv = x.values().data();
    for (int64_t t = 0; t < L; ++t) {
        if (!valid[static_cast<size_t>(t)]) continue;
        for (int64_t c = 0; c < d; ++c) out[static_cast<size_t>(c)] += xv[t * d + c];
    }
    const double inv = 1.0 / static_cast<double>(nv);
    for (double& v : out) v *= inv;

    auto px = x.impl();
    return make_node({d}, std::move(out), {px},
                     [px, valid, L, d, inv](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t t = 0; t < L; ++t) {
                             if (!valid[static_cast<size_t>(t)]) continue;
                             for (int64_t c = 0; c < d; ++c) gx[t * d + c] += g[static_cast<size_t>(c)] * inv;
                         }
                     });
}

Tensor mul_columns_const(const Tensor& x, const std::vector<double>& col_factor) {
    if (x.ndim() != 3) throw ShapeError("mul_columns_const expects [H, i, j], got " + shape_str(x.shape()));
    const int64_t H = x.dim(0), rows = x.dim(1), cols = x.dim(2);
    if (static_cast<int64_t>(col_factor.size()) != H * cols) {
        throw ShapeError("mul_columns_const factor size " + std::to_string(col_factor.size()) +
                         " does not match heads*cols " + std::to_string(H * cols));
    }
    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (int64_t h = 0; h < H; ++h) {
        const double* F = col_factor.data() + h * cols;
        for (int64_t r = 0; r < rows; ++r) {
            const double* X = xv + (h * rows + r) * cols;
            double* O = out.data() + (h * rows + r) * cols;
            for (int64_t z = 0; z < cols; ++z) O[z] = X[z] * F[z];
        }
    }
    auto px = x.impl();
    return make_node(x.shape(), std::move(out), {px},
                     [px, col_factor, H, rows, cols](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t h = 0; h < H; ++h) {
                             const double* F = col_factor.data() + h * cols;
                             for (int64_t r = 0; r < rows; ++r) {
                                 const double* G = g.data() + (h * rows + r) * cols;
                                 double* GX = gx.data() + (h * rows + r) * cols;
                                 for (int64_t z = 0; z < cols; ++z) GX[z] += G[z] * F[z];
                             }
                         }
                     });
}

Tensor renorm_rows(const Tensor& x) {
    const Shape& s = x.shape();
    const int64_t n = s.back();
    const int64_t rows = leading_count(s, 1);
    std::vector<double> out(x.values().size());
    std::vector<double> row_sum(static_cast<size_t>(rows));
    const double* xv = x.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) sum += xv[r * n + j];
        if (!(sum > 0.0)) throw NumericError("renorm_rows: row sum must be positive");
        row_sum[static_cast<size_t>(r)] = sum;
        for (int64_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] / sum;
    }
    auto px = x.impl();
    std::vector<double> y = out;
    return make_node(s, std::move(out), {px},
                     [px, y = std::move(y), row_sum = std::move(row_sum), rows,
                      n](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t r = 0; r < rows; ++r) {
                             const double* G = g.data() + r * n;
                             const double* Y = y.data() + r * n;
                             double dot = 0.0;
                             for (int64_t j = 0; j < n; ++j) dot += G[j] * Y[j];
                             const double inv = 1.0 / row_sum[static_cast<size_t>(r)];
                             double* GX = gx.data() + r * n;
                             for (int64_t j = 0; j < n; ++j) GX[j] += (G[j] - dot) * inv;
                         }
                     });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p must be in [0, 1)");
    if (p == 0.0) return scale(x, 1.0);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.values().size());
    for (double& m : mask) m = rng.next_double() < p ? 0.0 : keep_scale;
    std::vector<double> out(x.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
    auto px = x.impl();
    return make_node(x.shape(), std::move(out), {px},
                     [px, mask = std::move(mask)](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                     });
}

Tensor split_heads(const Tensor& x, int heads) {
    if (x.ndim() != 2) throw ShapeError("split_heads expects [i, d_model], got " + shape_str(x.shape()));
    const int64_t i = x.dim(0), dm = x.dim(1);
    if (heads < 1 || dm % heads != 0) {
        throw ConfigError("split_heads: d_model " + std::to_string(dm) + " not divisible by heads " +
                          std::to_string(heads));
    }
    const int64_t H = heads, dh = dm / heads;
    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (int64_t h = 0; h < H; ++h)
        for (int64_t t = 0; t < i; ++t)
            for (int64_t c = 0; c < dh; ++c) out[(h * i + t) * dh + c] = xv[t * dm + h * dh + c];
    auto px = x.impl();
    return make_node({H, i, dh}, std::move(out), {px},
                     [px, H, i, dh, dm](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t h = 0; h < H; ++h)
                             for (int64_t t = 0; t < i; ++t)
                                 for (int64_t c = 0; c < dh; ++c)
                                     gx[t * dm + h * dh + c] += g[(h * i + t) * dh + c];
                     });
}

Tensor merge_heads(const Tensor& x) {
    if (x.ndim() != 3) throw ShapeError("merge_heads expects [heads, i, d_head], got " + shape_str(x.shape()));
    const int64_t H = x.dim(0), i = x.dim(1), dh = x.dim(2);
    const int64_t dm = H * dh;
    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (int64_t h = 0; h < H; ++h)
        for (int64_t t = 0; t < i; ++t)
            for (int64_t c = 0; c < dh; ++c) out[t * dm + h * dh + c] = xv[(h * i + t) * dh + c];
    auto px = x.impl();
    return make_node({i, dm}, std::move(out), {px},
                     [px, H, i, dh, dm](const std::vector<double>& g, GradMap& gm) {
                         auto& gx = gm.at(px);
                         for (int64_t h = 0; h < H; ++h)
                             for (int64_t t = 0; t < i; ++t)
                                 for (int64_t c = 0; c < dh; ++c)
                                     gx[(h * i + t) * dh + c] += g[t * dm + h * dh + c];
                     });
}

} // namespace kst
