#include "kst/gradcheck.hpp"

#include <cmath>

namespace kst {

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f,
                                   std::vector<Parameter>& params, double h, double tol) {
    if (h <= 0.0) throw ConfigError("finite_diff_check: h must be positive");

    const double v1 = f().item();
    const double v2 = f().item();
    if (!(v1 == v2)) {
        throw ContractError("finite_diff_check: f is not deterministic (" + std::to_string(v1) +
                            " vs " + std::to_string(v2) + ")");
    }

    for (auto& p : params) p.tensor.zero_grad();
    backward(f());
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.tensor.grad());

    FiniteDiffReport report;
    report.h = h;
    report.tol = tol;

    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& values = params[pi].tensor.values_mut();
        FiniteDiffEntry entry;
        entry.name = params[pi].name;
        for (size_t e = 0; e < values.size(); ++e) {
            const double saved = values[e];
            values[e] = saved + h;
            const double fp = f().item();
            values[e] = saved - h;
            const double fm = f().item();
            values[e] = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][e];
            const double abs_err = std::fabs(a - numeric);
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
            const double rel = abs_err / denom;
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        if (entry.max_rel_err > report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_param = entry.name;
        }
        report.per_param.push_back(std::move(entry));
    }

    report.pass = report.max_rel_err <= tol;
    return report;
}

} // namespace kst
