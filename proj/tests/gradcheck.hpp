#pragma once

// Test-only finite-difference oracle. Central differences with the
// relative-error convention |a - fd| / max(1, |a|, |fd|): the max(1, .)
// floor keeps FD rounding noise from dominating where the true gradient
// is tiny.

#include <cmath>
#include <functional>

#include "sphereloss/tensor.hpp"

namespace gradcheck {

struct Report {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

// Checks d loss / d x[i] for every i against (f(x+h) - f(x-h)) / 2h,
// where f re-evaluates the scalar loss after mutating x in place.
inline Report check(sphereloss::Tensor& x, const sphereloss::Tensor& analytic,
                    const std::function<double()>& loss, double h = 1e-6) {
    Report rep;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = loss();
        x[i] = orig - h;
        const double fm = loss();
        x[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double e = rel_err(analytic[i], fd);
        if (e > rep.max_rel_err) {
            rep.max_rel_err = e;
            rep.worst_index = i;
            rep.analytic_at_worst = analytic[i];
            rep.numeric_at_worst = fd;
        }
    }
    return rep;
}

// Same, but only for a subset of coordinates (large tensors).
inline Report check_sampled(sphereloss::Tensor& x, const sphereloss::Tensor& analytic,
                            const std::function<double()>& loss,
                            const std::vector<std::size_t>& indices, double h = 1e-6) {
    Report rep;
    for (std::size_t i : indices) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = loss();
        x[i] = orig - h;
        const double fm = loss();
        x[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double e = rel_err(analytic[i], fd);
        if (e > rep.max_rel_err) {
            rep.max_rel_err = e;
            rep.worst_index = i;
            rep.analytic_at_worst = analytic[i];
            rep.numeric_at_worst = fd;
        }
    }
    return rep;
}

}  // namespace gradcheck
