#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "mlc/ops.hpp"

// Finite-difference gradient verification for double-precision graphs.
// Central differences: (f(x+h) - f(x-h)) / 2h, elementwise over every
// entry of every input that requires grad.

namespace mlc {

struct GradCheckResult {
    bool ok = true;
    double max_rel_err = 0.0;
    std::size_t input_index = 0;   // input with the worst entry
    std::size_t entry_index = 0;   // flat offset of the worst entry
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Checks d(scalar f)/d(inputs) against central differences.
/// `f` must rebuild the graph from the current values of `inputs` and
/// return a scalar tensor. Relative error uses a 1e-12 floor so that
/// near-zero gradient pairs compare absolutely.
inline GradCheckResult finite_difference_check(
    std::vector<TensorD>& inputs, const std::function<TensorD()>& f, double h = 1e-6,
    double tolerance = 1e-6) {
    GradCheckResult result;

    for (auto& t : inputs) t.zero_grad();
    TensorD out = f();
    backward(out);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) analytic.push_back(t.grad());

    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        if (!inputs[ti].requires_grad()) continue;
        auto& vals = inputs[ti].data();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            double fp;
            {
                NoGradGuard ng;
                fp = f().item();
            }
            vals[i] = saved - h;
            double fm;
            {
                NoGradGuard ng;
                fm = f().item();
            }
            vals[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[ti].empty() ? 0.0 : analytic[ti][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.input_index = ti;
                result.entry_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    result.ok = result.max_rel_err <= tolerance;
    return result;
}

}  // namespace mlc
