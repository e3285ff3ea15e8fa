#pragma once

#include <cmath>
#include <functional>

#include "csds/ops.hpp"
#include "csds/tensor.hpp"

namespace csds {

/// Central-difference check of reverse-mode gradients. `f` must rebuild its
/// graph from the given tensor on every call and return a scalar Tensor.
/// Returns max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// The step defaults to the top of the permitted range: forward values are
/// float32, so the slope noise floor scales as ulp(|f|)/eps and a smaller step
/// only amplifies rounding error without reducing truncation meaningfully.
inline float gradient_check(const std::function<Tensor(Tensor&)>& f, Tensor& x,
                            float eps = 1e-2f) {
    if (eps < 1e-5f || eps > 1e-2f) throw ConfigError("gradient_check: eps must be in [1e-5, 1e-2]");
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor y = f(x);
    if (!std::isfinite(y[0])) throw NumericError("gradient_check: f(x) is not finite");
    y.backward();
    std::vector<float> analytic = x.has_grad() ? x.grad() : std::vector<float>(x.numel(), 0.0f);

    double max_rel = 0.0;
    NoGradGuard ng;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        float orig = x[i];
        x[i] = orig + eps;
        double fp = f(x)[0];
        x[i] = orig - eps;
        double fm = f(x)[0];
        x[i] = orig;
        double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
        double a = static_cast<double>(analytic[i]);
        double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
    return static_cast<float>(max_rel);
}

} // namespace csds
