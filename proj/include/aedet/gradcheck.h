#pragma once

#include "aedet/autodiff.h"

#include <functional>

namespace aedet {

/// Central-difference check of a tensor-to-scalar function against the
/// tape gradient. f is evaluated on a fresh tape per perturbation; the
/// returned error is max over elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Meaningful only in double precision.
inline double finite_diff_check(
    const std::function<VarPtr<double>(Tape<double>&, const VarPtr<double>&)>& f,
    const Tensor<double>& x, double eps = 1e-5) {
    if (eps < 1e-7 || eps > 1e-4) throw UsageError("finite_diff_check: eps outside [1e-7, 1e-4]");

    Tape<double> tape;
    auto xv = make_var<double>(x, true);
    auto loss = f(tape, xv);
    if (loss->val.size() != 1) throw UsageError("finite_diff_check: f must return a scalar");
    if (!loss->val.all_finite()) throw NumericError("finite_diff_check: non-finite f(x)");
    tape.backward(loss);
    Tensor<double> analytic = xv->grad;

    double max_err = 0.0;
    Tensor<double> xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = xp.v[i];
        auto eval = [&](double value) {
            xp.v[i] = value;
            Tape<double> t;
            auto v = make_var<double>(xp, false);
            double y = f(t, v)->val.v[0];
            if (!std::isfinite(y)) throw NumericError("finite_diff_check: non-finite f");
            return y;
        };
        double numeric = (eval(orig + eps) - eval(orig - eps)) / (2 * eps);
        xp.v[i] = orig;
        double denom = std::max({std::abs(analytic.v[i]), std::abs(numeric), 1e-8});
        max_err = std::max(max_err, std::abs(analytic.v[i] - numeric) / denom);
    }
    return max_err;
}

}  // namespace aedet
