#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "detlab/autodiff/tensor.hpp"
#include "detlab/geometry.hpp"

namespace detlab::loss {

struct LossWeights {
    double cls = 2.0;
    double giou = 2.0;
    double l1 = 5.0;
    double ranking = 0.05;

    void validate() const;
};

// Label y for the ranking head; never part of the graph.
struct RankingTarget {
    double y = 1.0;

    void validate() const;
};

// Gradient of |y* - y| w.r.t. y*: +1, 0 or -1.
double l1_gradient(double y_star, double y);

// Soft gradient field replacing the L1 sign:
//   sigmoid(1) - sigmoid(y / y*)   when y* >  y
//   0                              when y* =  y
//   sigmoid(y* / y) - sigmoid(1)   when y* <  y
// with ratio denominators guarded at 1e-8.
double sgl1_gradient(double y_star, double y);

// Upper bound of |sgl1_gradient| over y* >= 0, y > 0: sigmoid(1) - sigmoid(0).
double sgl1_gradient_bound();

// Scalar node whose value is |y* - y| and whose backward injects
// sgl1_gradient(y*, y) instead of the L1 sign. y_star must be >= 0.
ad::Tensor sgl1(const ad::Tensor& y_star, const RankingTarget& target);

enum class RankingLoss { sgl1, l1, smooth_l1, l2 };

RankingLoss parse_ranking_loss(const std::string& name);
std::string to_string(RankingLoss kind);

// Ranking-head loss of the chosen kind; Smooth-L1 uses beta = 1.
ad::Tensor ranking_loss(RankingLoss kind, const ad::Tensor& y_star, const RankingTarget& target);

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
};

// Sigmoid focal loss over per-prediction logits, summed and divided by
// max(1, #positives). Empty input yields 0.
ad::Tensor classification_loss(const ad::Tensor& logits, const std::vector<bool>& positive,
                               const FocalParams& params = {});

// Closed-form per-sample focal term for probability p.
double focal_term(double p, bool positive, const FocalParams& params = {});

struct BoxLosses {
    ad::Tensor giou;  // mean over pairs of (1 - giou)
    ad::Tensor l1;    // mean over pairs of mean |delta| of cxcywh
};

// pred is [P x 4] cxcywh (graph), gt holds the P matched targets.
BoxLosses box_losses(const ad::Tensor& pred, std::span<const geom::Box> gt);

struct LossComponents {
    ad::Tensor cls;
    ad::Tensor giou;
    ad::Tensor l1;
    std::optional<ad::Tensor> ranking;
};

// lambda_cls * cls + lambda_giou * giou + lambda_l1 * l1 (+ lambda_rank * ranking)
ad::Tensor total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace detlab::loss
