#include "detlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "detlab/autodiff/ops.hpp"

namespace detlab::loss {

using ad::Node;
using ad::Tensor;

namespace {

constexpr double kRatioGuard = 1e-8;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void require_scalar(const Tensor& t, const char* what) {
    if (t.size() != 1) throw ad::DimensionError(std::string(what) + ": expected a scalar prediction");
}

// Scalar loss node with value `value` and d(loss)/d(y*) = `slope`.
Tensor scalar_loss_node(const char* op, const Tensor& y_star, double value, double slope) {
    return Tensor::from_op(op, {1}, {value}, {y_star}, [slope](Node& self) {
        Node& p = *self.parents[0];
        if (p.requires_grad) p.ensure_grad()[0] += self.grad[0] * slope;
    });
}

}  // namespace

void LossWeights::validate() const {
    if (cls < 0 || giou < 0 || l1 < 0 || ranking < 0) throw std::invalid_argument("loss weights must be >= 0");
}

void RankingTarget::validate() const {
    if (!std::isfinite(y) || y < 1.0) throw std::invalid_argument("ranking target must be finite and >= 1");
}

double l1_gradient(double y_star, double y) {
    const double d = y_star - y;
    return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
}

double sgl1_gradient(double y_star, double y) {
    // y* = y = 0 would otherwise give sigmoid(1) - 1/2 through the guard
    if (y_star == y) return 0.0;
    if (y_star - y > 0) return sigmoid(1.0) - sigmoid(y / std::max(y_star, kRatioGuard));
    return sigmoid(y_star / std::max(y, kRatioGuard)) - sigmoid(1.0);
}

double sgl1_gradient_bound() { return sigmoid(1.0) - sigmoid(0.0); }

Tensor sgl1(const Tensor& y_star, const RankingTarget& target) {
    require_scalar(y_star, "sgl1");
    const double ys = y_star.item();
    if (ys < 0.0) throw std::domain_error("sgl1: prediction must be nonnegative, got " + std::to_string(ys));
    return scalar_loss_node("sgl1", y_star, std::abs(ys - target.y), sgl1_gradient(ys, target.y));
}

RankingLoss parse_ranking_loss(const std::string& name) {
    if (name == "sgl1") return RankingLoss::sgl1;
    if (name == "l1") return RankingLoss::l1;
    if (name == "smooth_l1") return RankingLoss::smooth_l1;
    if (name == "l2") return RankingLoss::l2;
    throw std::invalid_argument("unknown ranking loss '" + name + "'");
}

std::string to_string(RankingLoss kind) {
    switch (kind) {
        case RankingLoss::sgl1: return "sgl1";
        case RankingLoss::l1: return "l1";
        case RankingLoss::smooth_l1: return "smooth_l1";
        case RankingLoss::l2: return "l2";
    }
    return "?";
}

Tensor ranking_loss(RankingLoss kind, const Tensor& y_star, const RankingTarget& target) {
    require_scalar(y_star, "ranking_loss");
    const double d = y_star.item() - target.y;
    switch (kind) {
        case RankingLoss::sgl1: return sgl1(y_star, target);
        case RankingLoss::l1: return scalar_loss_node("l1", y_star, std::abs(d), l1_gradient(y_star.item(), target.y));
        case RankingLoss::smooth_l1:
            if (std::abs(d) < 1.0) return scalar_loss_node("smooth_l1", y_star, 0.5 * d * d, d);
            return scalar_loss_node("smooth_l1", y_star, std::abs(d) - 0.5, l1_gradient(y_star.item(), target.y));
        case RankingLoss::l2: return scalar_loss_node("l2", y_star, d * d, 2.0 * d);
    }
    throw std::invalid_argument("ranking_loss: unknown kind");
}

double focal_term(double p, bool positive, const FocalParams& fp) {
    if (positive) return -fp.alpha * std::pow(1.0 - p, fp.gamma) * std::log(p);
    return -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * std::log(1.0 - p);
}

Tensor classification_loss(const Tensor& logits, const std::vector<bool>& positive, const FocalParams& fp) {
    if (logits.size() != positive.size()) {
        throw ad::DimensionError("classification_loss: " + std::to_string(logits.size()) + " logits vs " +
                                 std::to_string(positive.size()) + " labels");
    }
    const std::size_t n = logits.size();
    const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
    const double norm = 1.0 / std::max(1.0, n_pos);
    std::vector<double> slope(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = logits[i];
        const double p = sigmoid(x);
        if (positive[i]) {
            const double log_p = -softplus(-x);
            total += -fp.alpha * std::pow(1.0 - p, fp.gamma) * log_p;
            slope[i] = fp.alpha * std::pow(1.0 - p, fp.gamma) * (fp.gamma * p * log_p - (1.0 - p));
        } else {
            const double log_q = -softplus(x);
            total += -(1.0 - fp.alpha) * std::pow(p, fp.gamma) * log_q;
            slope[i] = (1.0 - fp.alpha) * std::pow(p, fp.gamma) * (p - fp.gamma * (1.0 - p) * log_q);
        }
    }
    return Tensor::from_op("focal", {1}, {total * norm}, {logits},
                           [slope = std::move(slope), norm](Node& self) {
                               Node& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * norm * slope[i];
                           });
}

BoxLosses box_losses(const Tensor& pred, std::span<const geom::Box> gt) {
    if (gt.empty()) return {Tensor::scalar(0.0), Tensor::scalar(0.0)};
    if (pred.dim() != 2 || pred.cols() != 4 || pred.rows() != gt.size()) {
        throw ad::DimensionError("box_losses: prediction shape " + ad::shape_str(pred.shape()) + " vs " +
                                 std::to_string(gt.size()) + " targets");
    }
    const std::size_t n = gt.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    double giou_total = 0.0;
    std::vector<double> d_pred(n * 4);
    std::vector<double> target(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
        const geom::Box b{pred[i * 4], pred[i * 4 + 1], pred[i * 4 + 2], pred[i * 4 + 3]};
        const auto g = geom::giou_with_grad(b, gt[i]);
        giou_total += 1.0 - g.value;
        for (int k = 0; k < 4; ++k) d_pred[i * 4 + k] = -g.d_a[k] * inv_n;
        target[i * 4] = gt[i].cx;
        target[i * 4 + 1] = gt[i].cy;
        target[i * 4 + 2] = gt[i].w;
        target[i * 4 + 3] = gt[i].h;
    }
    Tensor giou = Tensor::from_op("giou_loss", {1}, {giou_total * inv_n}, {pred},
                                  [d_pred = std::move(d_pred)](Node& self) {
                                      Node& p = *self.parents[0];
                                      if (!p.requires_grad) return;
                                      auto& g = p.ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * d_pred[i];
                                  });
    Tensor diff = ad::sub(pred, Tensor(pred.shape(), std::move(target)));
    Tensor l1 = ad::scale(ad::sum(ad::abs(diff)), inv_n / 4.0);
    return {giou, l1};
}

Tensor total_loss(const LossComponents& c, const LossWeights& w) {
    Tensor out = ad::add(ad::add(ad::scale(c.cls, w.cls), ad::scale(c.giou, w.giou)), ad::scale(c.l1, w.l1));
    if (c.ranking) out = ad::add(out, ad::scale(*c.ranking, w.ranking));
    return out;
}

}  // namespace detlab::loss
