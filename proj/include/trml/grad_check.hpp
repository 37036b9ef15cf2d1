#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "trml/autodiff.hpp"

namespace trml {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::map<std::string, double> max_rel_error;  // per parameter
    std::vector<GradCheckEntry> failures;         // entries exceeding tol
    double overall_max = 0.0;
    double tol = 0.0;

    bool passed() const { return failures.empty(); }
};

// The denominator floor is the measurement limit of central differences at
// h ~ 1e-5: cancellation noise in (f+ - f-) is ~eps*|f|/(2h) ~ 1e-11, so
// differences below ~1e-6 carry no signal about gradients that are exactly
// zero (dead ReLU units). Real errors in measurable gradients are unaffected.
inline double grad_rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max(1e-6, std::abs(analytic) + std::abs(numeric));
}

/// Central-difference check of every scalar parameter entry against the
/// analytic gradient. Report-only; does not throw on mismatches.
inline GradCheckReport grad_check(ParamStore& params, const Objective& objective, double h,
                                  double tol) {
    if (!(h > 1e-8 && h <= 1e-3)) throw config_error("grad_check: h must be in (1e-8, 1e-3]");
    GradCheckReport report;
    report.tol = tol;

    evaluate_with_gradients(params, objective);
    std::map<std::string, Matrix> analytic;
    for (const auto& [name, e] : params.entries()) analytic.emplace(name, e.grad);

    for (auto& [name, e] : params.entries()) {
        double worst = 0.0;
        for (std::size_t k = 0; k < e.value.size(); ++k) {
            const double saved = e.value[k];
            e.value[k] = saved + h;
            const double fp = evaluate_value(params, objective);
            e.value[k] = saved - h;
            const double fm = evaluate_value(params, objective);
            e.value[k] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic.at(name)[k];
            const double rel = grad_rel_error(a, numeric);
            worst = std::max(worst, rel);
            if (rel > tol) report.failures.push_back({name, k, a, numeric, rel});
        }
        report.max_rel_error[name] = worst;
        report.overall_max = std::max(report.overall_max, worst);
    }
    return report;
}

}  // namespace trml
