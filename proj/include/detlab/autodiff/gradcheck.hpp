#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "detlab/autodiff/tensor.hpp"

namespace detlab::ad {

// Max over elements of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// with the numeric gradient from central differences of step eps. fn must
// map x to a scalar and be deterministic.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn, Tensor x,
                               double eps = 1e-5, double floor = 1e-12);

// One scalar coordinate of some leaf tensor.
struct Probe {
    Tensor tensor;
    std::size_t index;
};

struct ProbeResult {
    double analytic;
    double numeric;
    double relative_error;
};

// Checks selected coordinates of arbitrary leaves against a closure that
// rebuilds the scalar loss from scratch.
std::vector<ProbeResult> check_probes(const std::function<Tensor()>& loss, std::span<Probe> probes,
                                      double eps = 1e-5, double floor = 1e-12);

double relative_error(double analytic, double numeric, double floor = 1e-12);

}  // namespace detlab::ad
