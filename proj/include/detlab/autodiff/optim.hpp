#pragma once

#include <span>
#include <vector>

#include "detlab/autodiff/parameter.hpp"

namespace detlab::ad {

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    int lr_drop_epoch = 40;
    double lr_drop_factor = 0.1;

    void validate() const;
};

// Step-schedule learning rate; epochs are 0-based.
double effective_learning_rate(const OptimizerConfig& config, int epoch);

// w <- w - lr * (grad + weight_decay * w), then zeroes the gradients.
void sgd_step(std::span<Parameter> params, const OptimizerConfig& config, int epoch);

// Decoupled-weight-decay Adam sharing the same schedule.
class AdamW {
public:
    AdamW(const OptimizerConfig& config, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(std::span<Parameter> params, int epoch);

private:
    OptimizerConfig config_;
    double beta1_, beta2_, eps_;
    long steps_ = 0;
    std::vector<std::vector<double>> first_, second_;
};

// Scales gradients in place so their joint L2 norm is at most max_norm.
// Returns the norm before scaling.
double clip_grad_norm(std::span<Parameter> params, double max_norm);

}  // namespace detlab::ad
