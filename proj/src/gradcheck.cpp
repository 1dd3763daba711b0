#include "bcaps/gradcheck.hpp"

#include "bcaps/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bcaps {

GradCheckResult grad_check_leaf(const std::function<Tensor<double>()>& loss, Tensor<double>& leaf,
                                const GradCheckOptions& options) {
    if (options.steps.empty()) throw ContractError("grad_check needs at least one step");
    for (double h : options.steps) {
        if (!(h > 0.0)) throw ContractError("grad_check steps must be > 0");
    }
    if (!(options.floor > 0.0)) throw ContractError("grad_check needs a positive floor");
    const bool was_tracked = leaf.requires_grad();
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    loss().backward();
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    GradCheckResult result;
    auto values = leaf.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        auto at = [&](double offset) {
            values[i] = saved + offset;
            return loss().item();
        };
        double best = std::numeric_limits<double>::infinity();
        double best_numeric = 0.0;
        for (double h : options.steps) {
            const double near = at(h) - at(-h);
            const double far = at(2 * h) - at(-2 * h);
            const double numeric = (8 * near - far) / (12.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (err < best) {
                best = err;
                best_numeric = numeric;
            }
        }
        values[i] = saved;
        if (i == 0 || best > result.max_rel_error) result = {best, i, analytic[i], best_numeric};
    }
    leaf.set_requires_grad(was_tracked);
    return result;
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& options) {
    Tensor<double> probe = x.detach();
    return grad_check_leaf([&] { return f(probe); }, probe, options);
}

} // namespace bcaps
