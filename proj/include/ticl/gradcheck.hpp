#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ticl/tensor.hpp"

namespace ticl {

struct FdProbe {
    Parameter* param;
    int64_t index;
};

struct FdConfig {
    int probes = 100;       // total, including explicit ones
    double step = 1e-3;
    double tol_rel = 1e-3;
    double tol_abs = 1e-5;  // a probe passes if either tolerance holds
    uint64_t seed = 0;
};

struct FdFailure {
    std::string name;
    int64_t index;
    double analytic;
    double numeric;
    double abs_err;
    double rel_err;
};

struct FdReport {
    int probes = 0;
    int failed = 0;
    double max_abs = 0.0;
    double max_rel_failed = 0.0; // over failing probes (passing ones may use the abs branch)
    std::vector<FdFailure> failures;
    bool passed() const { return probes > 0 && failed == 0; }
};

/// Central-difference check of analytic gradients. `loss` must re-read the
/// parameter storage on every call and return the loss with 64-bit
/// accumulation; gradients must already be populated (one backward pass at
/// the unperturbed point). The realized step is measured from the perturbed
/// float values, so storage quantization does not bias the quotient. Throws
/// NumericError if `loss` is not deterministic or a probed gradient is absent.
FdReport finite_difference_check(std::span<Parameter* const> params,
                                 const std::function<double()>& loss,
                                 const FdConfig& cfg,
                                 std::span<const FdProbe> explicit_probes = {});

} // namespace ticl
