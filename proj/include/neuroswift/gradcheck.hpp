#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "neuroswift/errors.hpp"

namespace neuroswift {

// A scalar-valued differentiable function of a flat coordinate vector, with
// its analytic gradient. Layers under test get flattened into this form.
struct DifferentiableScalarFn {
    std::function<double(const std::vector<double>&)> value;
    std::function<std::vector<double>(const std::vector<double>&)> gradient;
};

// Central finite differences against the analytic gradient. Returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const DifferentiableScalarFn& fn, std::vector<double> point,
                                double h) {
    if (h <= 0.0) throw ConfigError("finite_diff_check: h must be > 0");
    const std::vector<double> analytic = fn.gradient(point);
    if (analytic.size() != point.size()) {
        throw DimensionError("finite_diff_check: gradient length mismatch");
    }
    double max_rel = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + h;
        const double fp = fn.value(point);
        point[i] = saved - h;
        const double fm = fn.value(point);
        point[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
            throw NumericalError("finite_diff_check: non-finite value encountered");
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace neuroswift
