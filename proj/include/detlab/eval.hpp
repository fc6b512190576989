#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "detlab/geometry.hpp"

namespace detlab::eval {

struct Detection {
    geom::Box box;
    double score = 0.0;
};

struct ImageDetections {
    std::vector<Detection> detections;
    std::vector<geom::Box> gt_boxes;
};

struct EvalResult {
    double mr = 1.0;
    double ap = 0.0;
    double recall = 0.0;
    std::vector<std::pair<double, double>> fppi_curve;  // (fppi, miss rate)
    std::vector<std::pair<double, double>> pr_curve;    // (recall, precision)
};

// Greedy matching of score-sorted detections: each detection claims the
// unclaimed ground truth of highest IoU >= threshold. true = TP.
std::vector<bool> match_detections(std::span<const Detection> sorted_detections,
                                   std::span<const geom::Box> gt_boxes, double iou_threshold = 0.5);

// TP / n_gt; 1 when n_gt is 0.
double recall(const std::vector<bool>& flags, std::size_t n_gt);

// All-point interpolated area under the PR curve of score-sorted flags.
double average_precision(const std::vector<bool>& sorted_flags, std::size_t n_gt);

// The nine FPPI reference points 10^-2 ... 10^0.
std::vector<double> fppi_references();

// Caltech-style log-average miss rate over FPPI in [1e-2, 1].
double log_average_miss_rate(std::span<const ImageDetections> images, double iou_threshold = 0.5);

EvalResult evaluate(std::span<const ImageDetections> images, double iou_threshold = 0.5);

void to_json(nlohmann::json& j, const EvalResult& r);
std::string fppi_csv(const EvalResult& r);
std::string pr_csv(const EvalResult& r);

}  // namespace detlab::eval
