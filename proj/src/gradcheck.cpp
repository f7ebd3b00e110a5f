#include "ticl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ticl/common.hpp"
#include "ticl/rng.hpp"

namespace ticl {

FdReport finite_difference_check(std::span<Parameter* const> params,
                                 const std::function<double()>& loss,
                                 const FdConfig& cfg,
                                 std::span<const FdProbe> explicit_probes) {
    const double f_base = loss();
    if (loss() != f_base) {
        throw NumericError("finite_difference_check: function is not deterministic");
    }

    std::vector<FdProbe> probes(explicit_probes.begin(), explicit_probes.end());
    Rng rng(cfg.seed);
    int64_t coord_total = 0;
    for (const Parameter* p : params) coord_total += p->tensor.numel();
    const int want = std::max<int>(cfg.probes, static_cast<int>(probes.size()));
    while (static_cast<int>(probes.size()) < want &&
           static_cast<int64_t>(probes.size()) < coord_total) {
        // draw a coordinate uniformly over all parameter entries
        int64_t flat = rng.below(coord_total);
        for (Parameter* p : params) {
            if (flat < p->tensor.numel()) {
                probes.push_back({p, flat});
                break;
            }
            flat -= p->tensor.numel();
        }
    }

    FdReport report;
    for (const FdProbe& probe : probes) {
        Tensor& t = probe.param->tensor;
        if (!t.has_grad()) {
            throw NumericError("finite_difference_check: no gradient on " + probe.param->name);
        }
        const float saved = t.values[static_cast<size_t>(probe.index)];
        t.values[static_cast<size_t>(probe.index)] =
            static_cast<float>(static_cast<double>(saved) + cfg.step);
        const double realized_plus = t.values[static_cast<size_t>(probe.index)];
        const double f_plus = loss();
        t.values[static_cast<size_t>(probe.index)] =
            static_cast<float>(static_cast<double>(saved) - cfg.step);
        const double realized_minus = t.values[static_cast<size_t>(probe.index)];
        const double f_minus = loss();
        t.values[static_cast<size_t>(probe.index)] = saved;

        const double numeric = (f_plus - f_minus) / (realized_plus - realized_minus);
        const double analytic = t.grad[static_cast<size_t>(probe.index)];
        const double abs_err = std::abs(analytic - numeric);
        const double denom = std::max(std::abs(analytic), std::abs(numeric));
        const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;

        ++report.probes;
        report.max_abs = std::max(report.max_abs, abs_err);
        if (abs_err > cfg.tol_abs && rel_err > cfg.tol_rel) {
            ++report.failed;
            report.max_rel_failed = std::max(report.max_rel_failed, rel_err);
            report.failures.push_back(
                {probe.param->name, probe.index, analytic, numeric, abs_err, rel_err});
        }
    }
    return report;
}

} // namespace ticl
