#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "camds/tensor.hpp"

namespace camds {

struct GradCheckReport {
    double h = 0;
    double tol = 0;
    int64_t checked = 0;
    int64_t excluded = 0;  // coordinates within reach of a nonsmooth point
    double max_rel_error = 0;
    std::string worst_param;
    int64_t worst_index = -1;
    bool pass() const { return max_rel_error < tol; }
};

namespace detail {

inline double rel_error(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= 1e-7) return 0.0;  // below central-difference noise floor
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// One coordinate of a central difference, with kink detection. `eval` must
// recompute the scalar function from current state. Exclusion fires when a
// relu input came within 10h of zero during either perturbed evaluation, or
// when the one-sided differences disagree (a kink inside the sampled
// interval).
template <typename EvalFn>
void check_coordinate(EvalFn&& eval, double* coord, double base_value, double f0, double analytic,
                      GradCheckReport& rep, const std::string& name, int64_t index) {
    KinkProbe& probe = kink_probe();
    const double h = rep.h;

    probe.enabled = true;
    probe.reset();
    *coord = base_value + h;
    const double fp = eval();
    const double kink_plus = probe.min_distance;
    probe.reset();
    *coord = base_value - h;
    const double fm = eval();
    const double kink_minus = probe.min_distance;
    probe.enabled = false;
    *coord = base_value;

    const double numeric = (fp - fm) / (2 * h);
    const double dplus = (fp - f0) / h;
    const double dminus = (f0 - fm) / h;
    // A relu input within 10h of zero only disqualifies this coordinate when
    // the margin responds to the perturbation; an equal margin in both evals
    // belongs to a coordinate not being swept.
    const bool near_kink =
        std::min(kink_plus, kink_minus) < 10 * h && kink_plus != kink_minus;
    const bool one_sided_mismatch =
        std::abs(dplus - dminus) > 1e-4 * std::max(std::abs(dplus), std::abs(dminus)) + 1e-10;
    if (near_kink || one_sided_mismatch) {
        rep.excluded += 1;
        return;
    }

    const double rel = rel_error(analytic, numeric);
    rep.checked += 1;
    if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = name;
        rep.worst_index = index;
    }
}

}  // namespace detail

// Central-difference check of a scalar-valued tensor function against its
// autodiff gradient. Runs in 64-bit.
inline GradCheckReport finite_diff_check(
    const std::function<TensorT<double>(const TensorT<double>&)>& f, const TensorT<double>& point,
    double h, double tol) {
    GradCheckReport rep;
    rep.h = h;
    rep.tol = tol;

    std::vector<double> base(point.data().begin(), point.data().end());
    TensorT<double> x = TensorT<double>::from_data(point.shape(), base, /*requires_grad=*/true);
    TensorT<double> loss = f(x);
    if (loss.numel() != 1)
        throw std::invalid_argument("finite_diff_check: function must be scalar-valued");
    loss.backward();
    std::vector<double> analytic(x.grad().begin(), x.grad().end());

    std::vector<double> work = base;
    auto eval = [&]() {
        TensorT<double> p = TensorT<double>::from_data(point.shape(), work);
        return f(p).item();
    };
    const double f0 = eval();
    for (size_t i = 0; i < work.size(); ++i)
        detail::check_coordinate(eval, &work[i], base[i], f0, analytic[i], rep, "point",
                                 static_cast<int64_t>(i));
    return rep;
}

// Checks already-populated parameter gradients against central differences of
// `eval`, which must recompute the loss from the parameters' current values.
// Parameter values are perturbed in place and restored.
template <typename EvalFn>
GradCheckReport check_param_grads(std::vector<ParameterT<double>>& params, EvalFn&& eval, double h,
                                  double tol) {
    GradCheckReport rep;
    rep.h = h;
    rep.tol = tol;
    const double f0 = eval();
    for (auto& p : params) {
        std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        auto values = p.tensor.mutable_data();
        for (size_t i = 0; i < values.size(); ++i)
            detail::check_coordinate(eval, &values[i], values[i], f0, analytic[i], rep, p.name,
                                     static_cast<int64_t>(i));
    }
    return rep;
}

}  // namespace camds
