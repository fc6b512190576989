#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "detlab/geometry.hpp"

namespace detlab::match {

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Dense row-major cost matrix; rows are predictions, columns ground truths.
class CostMatrix {
public:
    CostMatrix() = default;
    CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

struct Assignment {
    // (prediction index, gt index), sorted by prediction index.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<std::size_t> unmatched;

    // gt index per prediction, or -1 for background.
    std::vector<long> gt_of_prediction(std::size_t n_predictions) const;
};

// Minimum-cost one-to-one assignment covering min(rows, cols) pairs
// (shortest augmenting path with potentials, O(n^2 m)).
Assignment hungarian(const CostMatrix& cost);

double assignment_cost(const CostMatrix& cost, const Assignment& a);

struct CostWeights {
    double score = 2.0;
    double giou = 2.0;
    double l1 = 5.0;
};

// cost[i][j] = w_s * (-score_i) + w_g * (1 - giou(pred_i, gt_j)) + w_l1 * L1(pred_i, gt_j)
CostMatrix detr_cost(std::span<const double> scores, std::span<const geom::Box> pred_boxes,
                     std::span<const geom::Box> gt_boxes, const CostWeights& weights = {});

}  // namespace detlab::match
