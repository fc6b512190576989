#include "detlab/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace detlab::ad {

namespace {

double evaluate(const std::function<Tensor()>& loss) {
    NoGradGuard guard;
    const double v = loss().item();
    if (!std::isfinite(v)) throw NumericError("gradient check: non-finite function value");
    return v;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x, double eps,
                               double floor) {
    if (!(eps > 0.0)) throw UsageError("finite_difference_check: eps must be > 0");
    if (!x.node()->is_leaf()) throw UsageError("finite_difference_check: x must be a leaf");
    x.set_requires_grad(true);
    std::vector<Probe> probes;
    probes.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) probes.push_back({x, i});
    const auto results = check_probes([&] { return fn(x); }, probes, eps, floor);
    double worst = 0.0;
    for (const auto& r : results) worst = std::max(worst, r.relative_error);
    return worst;
}

std::vector<ProbeResult> check_probes(const std::function<Tensor()>& loss, std::span<Probe> probes,
                                      double eps, double floor) {
    for (auto& p : probes) {
        p.tensor.node()->ensure_grad();
        p.tensor.zero_grad();
    }
    Tensor out = loss();
    if (!std::isfinite(out.item())) throw NumericError("gradient check: non-finite function value");
    out.backward();

    std::vector<ProbeResult> results;
    results.reserve(probes.size());
    for (auto& p : probes) {
        const double analytic = p.tensor.grad()[p.index];
        double& slot = p.tensor.mutable_data()[p.index];
        const double saved = slot;
        slot = saved + eps;
        const double plus = evaluate(loss);
        slot = saved - eps;
        const double minus = evaluate(loss);
        slot = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        if (!std::isfinite(analytic)) throw NumericError("gradient check: non-finite analytic gradient");
        results.push_back({analytic, numeric, relative_error(analytic, numeric, floor)});
    }
    return results;
}

}  // namespace detlab::ad
