#include "detlab/autodiff/optim.hpp"

#include <cmath>

namespace detlab::ad {

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
    if (weight_decay < 0.0 || weight_decay >= 1.0) throw UsageError("weight_decay must lie in [0, 1)");
    if (lr_drop_factor <= 0.0) throw UsageError("lr_drop_factor must be > 0");
}

double effective_learning_rate(const OptimizerConfig& config, int epoch) {
    return epoch >= config.lr_drop_epoch ? config.learning_rate * config.lr_drop_factor
                                         : config.learning_rate;
}

void sgd_step(std::span<Parameter> params, const OptimizerConfig& config, int epoch) {
    config.validate();
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) throw UsageError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
    const double lr = effective_learning_rate(config, epoch);
    for (auto& p : params) {
        Node* n = p.tensor.node();
        for (std::size_t i = 0; i < n->data.size(); ++i) {
            n->data[i] -= lr * (n->grad[i] + config.weight_decay * n->data[i]);
        }
        p.tensor.zero_grad();
    }
}

AdamW::AdamW(const OptimizerConfig& config, double beta1, double beta2, double eps)
    : config_(config), beta1_(beta1), beta2_(beta2), eps_(eps) {
    config_.validate();
}

void AdamW::step(std::span<Parameter> params, int epoch) {
    if (first_.empty()) {
        for (const auto& p : params) {
            first_.emplace_back(p.tensor.size(), 0.0);
            second_.emplace_back(p.tensor.size(), 0.0);
        }
    }
    if (first_.size() != params.size()) throw UsageError("AdamW: parameter set changed between steps");
    ++steps_;
    const double lr = effective_learning_rate(config_, epoch);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Node* n = params[k].tensor.node();
        if (n->grad.empty()) continue;
        auto& m = first_[k];
        auto& v = second_[k];
        for (std::size_t i = 0; i < n->data.size(); ++i) {
            const double g = n->grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            n->data[i] -= lr * (update + config_.weight_decay * n->data[i]);
        }
        params[k].tensor.zero_grad();
    }
}

double clip_grad_norm(std::span<Parameter> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (auto& p : params) {
            for (double& g : p.tensor.node()->grad) g *= factor;
        }
    }
    return norm;
}

}  // namespace detlab::ad
