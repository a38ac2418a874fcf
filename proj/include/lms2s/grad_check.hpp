#pragma once

// Central finite-difference gradient verification. Meant to run at 64-bit
// precision; callers pass a re-runnable scalar forward function and the
// parameter groups it closes over.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lms2s/common.hpp"
#include "lms2s/tensor.hpp"

namespace lms2s {

struct GradCheckGroup {
    std::string name;
    std::vector<Tensor<double>> params;
};

struct GradCheckEntry {
    std::string group;
    double max_rel_err = 0.0;
    bool exceeded = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool ok = true;
    double worst = 0.0;
};

// relative error = |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

namespace detail {
struct FiniteCheckScope {
    FiniteCheckScope() { g_check_finite = true; }
    ~FiniteCheckScope() { g_check_finite = false; }
};
}  // namespace detail

// Frozen groups (requires_grad == false) are excluded from the report.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  const std::vector<GradCheckGroup>& groups, double h,
                                  double tol) {
    detail::FiniteCheckScope finite_scope;
    GradCheckReport report;
    // Analytic pass.
    for (const auto& g : groups)
        for (auto p : g.params)
            if (p.requires_grad()) p.zero_grad();
    {
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        Tensor<double> loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<std::vector<double>>> analytic(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
        for (const auto& p : groups[gi].params)
            analytic[gi].emplace_back(p.grad().begin(), p.grad().end());

    // Numeric pass, two evaluations per element.
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        bool frozen = true;
        for (const auto& p : g.params) frozen = frozen && !p.requires_grad();
        if (frozen) continue;
        GradCheckEntry entry{g.name, 0.0, false};
        for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
            Tensor<double> p = g.params[pi];
            if (!p.requires_grad()) continue;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double saved = p.data()[i];
                p.data()[i] = saved + h;
                const double up = f().value();
                p.data()[i] = saved - h;
                const double down = f().value();
                p.data()[i] = saved;
                const double numeric = (up - down) / (2.0 * h);
                const double err = relative_error(analytic[gi][pi][i], numeric);
                entry.max_rel_err = std::max(entry.max_rel_err, err);
            }
        }
        entry.exceeded = entry.max_rel_err > tol;
        report.worst = std::max(report.worst, entry.max_rel_err);
        report.ok = report.ok && !entry.exceeded;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace lms2s
