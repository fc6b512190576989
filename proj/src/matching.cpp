#include "detlab/matching.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace detlab::match {

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw std::invalid_argument("CostMatrix: data size mismatch");
}

std::vector<long> Assignment::gt_of_prediction(std::size_t n_predictions) const {
    std::vector<long> out(n_predictions, -1);
    for (auto [p, g] : pairs) out[p] = static_cast<long>(g);
    return out;
}

namespace {

// Rows n <= cols m. Returns the column assigned to each row.
std::vector<std::size_t> solve_wide(std::size_t n, std::size_t m,
                                    const std::function<double(std::size_t, std::size_t)>& at) {
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based with a virtual column 0, following the classic formulation.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col_of_row(n, 0);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
    }
    return col_of_row;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
    for (std::size_t r = 0; r < cost.rows(); ++r) {
        for (std::size_t c = 0; c < cost.cols(); ++c) {
            if (!std::isfinite(cost(r, c))) {
                throw DomainError("hungarian: non-finite cost at (" + std::to_string(r) + ", " +
                                  std::to_string(c) + ")");
            }
        }
    }
    Assignment out;
    if (cost.empty()) {
        for (std::size_t r = 0; r < cost.rows(); ++r) out.unmatched.push_back(r);
        return out;
    }
    if (cost.rows() <= cost.cols()) {
        const auto col_of_row = solve_wide(cost.rows(), cost.cols(),
                                           [&](std::size_t r, std::size_t c) { return cost(r, c); });
        for (std::size_t r = 0; r < cost.rows(); ++r) out.pairs.emplace_back(r, col_of_row[r]);
    } else {
        // Ground truths drive the search; predictions are the wide side.
        const auto pred_of_gt = solve_wide(cost.cols(), cost.rows(),
                                           [&](std::size_t g, std::size_t p) { return cost(p, g); });
        std::vector<char> taken(cost.rows(), 0);
        for (std::size_t g = 0; g < cost.cols(); ++g) {
            out.pairs.emplace_back(pred_of_gt[g], g);
            taken[pred_of_gt[g]] = 1;
        }
        std::sort(out.pairs.begin(), out.pairs.end());
        for (std::size_t r = 0; r < cost.rows(); ++r) {
            if (!taken[r]) out.unmatched.push_back(r);
        }
    }
    return out;
}

double assignment_cost(const CostMatrix& cost, const Assignment& a) {
    double total = 0.0;
    for (auto [p, g] : a.pairs) total += cost(p, g);
    return total;
}

CostMatrix detr_cost(std::span<const double> scores, std::span<const geom::Box> pred_boxes,
                     std::span<const geom::Box> gt_boxes, const CostWeights& weights) {
    if (scores.size() != pred_boxes.size()) throw std::invalid_argument("detr_cost: score/box count mismatch");
    CostMatrix cost(pred_boxes.size(), gt_boxes.size());
    for (std::size_t i = 0; i < pred_boxes.size(); ++i) {
        for (std::size_t j = 0; j < gt_boxes.size(); ++j) {
            cost(i, j) = weights.score * (-scores[i]) +
                         weights.giou * (1.0 - geom::giou(pred_boxes[i], gt_boxes[j])) +
                         weights.l1 * geom::l1_distance(pred_boxes[i], gt_boxes[j]);
        }
    }
    return cost;
}

}  // namespace detlab::match
