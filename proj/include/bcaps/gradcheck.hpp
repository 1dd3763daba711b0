#pragma once

#include "bcaps/tensor.hpp"

#include <functional>
#include <vector>

namespace bcaps {

struct GradCheckOptions {
    /// Step sizes tried per entry; the entry's error is the smallest over them.
    /// A step that straddles a kink only spoils large steps and roundoff only
    /// spoils small ones, while a wrong backward disagrees at every step.
    std::vector<double> steps{1e-3};
    /// Denominator floor. Raising it judges entries whose true gradient is
    /// zero on absolute difference instead of comparing rounding noise.
    double floor = 1e-12;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares the reverse-mode gradient of a scalar function with the
/// five-point central difference (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h. Per entry the error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// `f` must be deterministic: any sampling or routing it does has to be frozen.
GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& options = {});

/// Same check against a leaf captured by `loss` (a model parameter). The
/// leaf's values are perturbed in place and restored; its grad is overwritten.
GradCheckResult grad_check_leaf(const std::function<Tensor<double>()>& loss, Tensor<double>& leaf,
                                const GradCheckOptions& options = {});

} // namespace bcaps
