#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. Deliberately naive: exhaustive search, re-sorting and
// extended precision instead of the production code paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "detlab/eval.hpp"
#include "detlab/geometry.hpp"
#include "detlab/matching.hpp"

namespace detlab::oracle {

// Minimum total over every injective map of the smaller side into the larger.
inline double brute_force_assignment_cost(const match::CostMatrix& c) {
    const bool transpose = c.rows() > c.cols();
    const std::size_t small = transpose ? c.cols() : c.rows();
    const std::size_t large = transpose ? c.rows() : c.cols();
    std::vector<std::size_t> perm(large);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < small; ++i) total += transpose ? c(perm[i], i) : c(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

inline long double sigmoid_ld(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

// Soft L1 gradient field evaluated in extended precision.
inline double sgl1_gradient(double y_star, double y) {
    const long double a = y_star, b = y;
    if (a == b) return 0.0;
    if (a > b) return static_cast<double>(sigmoid_ld(1.0L) - sigmoid_ld(b / std::max(a, 1e-8L)));
    return static_cast<double>(sigmoid_ld(a / std::max(b, 1e-8L)) - sigmoid_ld(1.0L));
}

struct RankOracle {
    std::size_t base_rank = 0;
    double scaled = 0.0;
};

// Re-sort the scores (descending, lower index first on ties) and scan for the
// last positive.
inline std::optional<RankOracle> ranking_label(const std::vector<double>& scores, const std::set<std::size_t>& positives,
                                               int m) {
    if (positives.empty()) return std::nullopt;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    std::size_t rank = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        if (positives.count(order[pos])) rank = pos + 1;
    }
    return RankOracle{rank, static_cast<double>((1 + m) * rank)};
}

// Precision at each rank replaced by the best precision at any later rank,
// integrated over recall steps.
inline double average_precision(const std::vector<bool>& flags, std::size_t n_gt) {
    if (n_gt == 0) return flags.empty() ? 1.0 : 0.0;
    double ap = 0.0;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        if (!flags[k]) continue;
        double best = 0.0;
        std::size_t tp = 0;
        for (std::size_t j = 0; j < flags.size(); ++j) {
            if (flags[j]) ++tp;
            if (j >= k) best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
        }
        ap += best / static_cast<double>(n_gt);
    }
    return ap;
}

// Log-average miss rate by sweeping every distinct score threshold. Each
// image is matched greedily at IoU 0.5 in score order.
inline double log_average_miss_rate(const std::vector<eval::ImageDetections>& images) {
    struct Entry {
        double score;
        bool tp;
    };
    std::vector<Entry> entries;
    std::size_t n_gt = 0;
    for (const auto& img : images) {
        std::vector<eval::Detection> dets = img.detections;
        std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
        std::vector<bool> claimed(img.gt_boxes.size(), false);
        for (const auto& d : dets) {
            long best = -1;
            double best_iou = -1.0;
            for (std::size_t g = 0; g < img.gt_boxes.size(); ++g) {
                const double v = geom::iou(d.box, img.gt_boxes[g]);
                if (!claimed[g] && v >= 0.5 && v > best_iou) {
                    best = static_cast<long>(g);
                    best_iou = v;
                }
            }
            if (best >= 0) claimed[static_cast<std::size_t>(best)] = true;
            entries.push_back({d.score, best >= 0});
        }
        n_gt += img.gt_boxes.size();
    }
    std::set<double> thresholds{std::numeric_limits<double>::infinity()};
    for (const auto& e : entries) thresholds.insert(e.score);
    const double n_img = static_cast<double>(std::max<std::size_t>(images.size(), 1));
    double log_sum = 0.0;
    for (int i = 0; i < 9; ++i) {
        const double ref = std::pow(10.0, -2.0 + 0.25 * i);
        double best_miss = 1.0;
        for (double t : thresholds) {
            std::size_t tp = 0, fp = 0;
            for (const auto& e : entries) {
                if (e.score >= t) (e.tp ? tp : fp)++;
            }
            const double miss = n_gt == 0 ? 0.0 : 1.0 - static_cast<double>(tp) / static_cast<double>(n_gt);
            if (static_cast<double>(fp) / n_img <= ref) best_miss = std::min(best_miss, miss);
        }
        log_sum += std::log(std::max(best_miss, 1e-10));
    }
    return std::exp(log_sum / 9.0);
}

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }
    return ranks;
}

// Pearson correlation of average ranks; 0 when either side is constant.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return saa == 0 || sbb == 0 ? 0.0 : sab / std::sqrt(saa * sbb);
}

}  // namespace detlab::oracle
