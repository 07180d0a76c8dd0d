#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kst/tensor.hpp"

namespace kst {

struct FiniteDiffEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

struct FiniteDiffReport {
    std::vector<FiniteDiffEntry> per_param;
    double max_rel_err = 0.0;
    std::string worst_param;
    double h = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Compares analytic gradients against central finite differences.
//
// `f` must rebuild the computation from scratch on every call and return the
// scalar loss; it must be deterministic (dropout off, sparse masks frozen).
// Two baseline evaluations are compared bit-for-bit first and a contract
// error is raised if they differ.
//
// Relative error uses max(|analytic|, |numeric|, 1e-4) as denominator, so
// gradients smaller than 1e-4 are effectively compared absolutely.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f,
                                   std::vector<Parameter>& params, double h, double tol);

} // namespace kst
