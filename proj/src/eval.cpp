#include "detlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace detlab::eval {

namespace {

constexpr double kMissFloor = 1e-10;

struct Sweep {
    std::vector<bool> flags;  // global score order
    std::size_t n_gt = 0;
    std::size_t n_images = 0;
};

// Matches every image, then merges all detections into one descending-score
// order (ties: image order, then per-image order).
Sweep sweep(std::span<const ImageDetections> images, double iou_threshold) {
    struct Entry {
        double score;
        bool tp;
    };
    std::vector<Entry> all;
    Sweep s;
    s.n_images = images.size();
    for (const auto& img : images) {
        std::vector<Detection> dets = img.detections;
        std::stable_sort(dets.begin(), dets.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        const auto flags = match_detections(dets, img.gt_boxes, iou_threshold);
        for (std::size_t i = 0; i < dets.size(); ++i) all.push_back({dets[i].score, flags[i]});
        s.n_gt += img.gt_boxes.size();
    }
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
    s.flags.reserve(all.size());
    for (const auto& e : all) s.flags.push_back(e.tp);
    return s;
}

std::vector<std::pair<double, double>> fppi_curve(const Sweep& s) {
    std::vector<std::pair<double, double>> curve;
    std::size_t tp = 0, fp = 0;
    for (bool f : s.flags) {
        f ? ++tp : ++fp;
        const double miss = s.n_gt == 0 ? 0.0 : 1.0 - static_cast<double>(tp) / static_cast<double>(s.n_gt);
        curve.emplace_back(static_cast<double>(fp) / static_cast<double>(std::max<std::size_t>(s.n_images, 1)), miss);
    }
    return curve;
}

double mr_from_curve(const std::vector<std::pair<double, double>>& curve, std::size_t n_gt) {
    if (curve.empty()) return n_gt == 0 ? kMissFloor : 1.0;
    double highest = 0.0;
    for (const auto& [f, m] : curve) highest = std::max(highest, m);
    double log_sum = 0.0;
    const auto refs = fppi_references();
    for (double ref : refs) {
        double miss = highest;
        // fppi is nondecreasing along the sweep; keep the last point at or below ref
        for (const auto& [f, m] : curve) {
            if (f <= ref) miss = m;
            else break;
        }
        log_sum += std::log(std::max(miss, kMissFloor));
    }
    return std::exp(log_sum / static_cast<double>(refs.size()));
}

}  // namespace

std::vector<bool> match_detections(std::span<const Detection> dets, std::span<const geom::Box> gts,
                                   double iou_threshold) {
    std::vector<bool> flags(dets.size(), false);
    std::vector<char> claimed(gts.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
        double best = iou_threshold;
        long best_gt = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (claimed[g]) continue;
            const double v = geom::iou(dets[d].box, gts[g]);
            if (v >= best && (best_gt < 0 || v > best)) {
                best = v;
                best_gt = static_cast<long>(g);
            }
        }
        if (best_gt >= 0) {
            claimed[static_cast<std::size_t>(best_gt)] = 1;
            flags[d] = true;
        }
    }
    return flags;
}

double recall(const std::vector<bool>& flags, std::size_t n_gt) {
    if (n_gt == 0) return 1.0;
    const auto tp = static_cast<double>(std::count(flags.begin(), flags.end(), true));
    return tp / static_cast<double>(n_gt);
}

double average_precision(const std::vector<bool>& flags, std::size_t n_gt) {
    if (n_gt == 0) return flags.empty() ? 1.0 : 0.0;
    std::vector<double> precision(flags.size()), rec(flags.size());
    std::size_t tp = 0;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        if (flags[k]) ++tp;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        rec[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    for (std::size_t k = flags.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        ap += (rec[k] - prev_recall) * precision[k];
        prev_recall = rec[k];
    }
    return ap;
}

std::vector<double> fppi_references() {
    std::vector<double> refs(9);
    for (int i = 0; i < 9; ++i) refs[static_cast<std::size_t>(i)] = std::pow(10.0, -2.0 + 0.25 * i);
    return refs;
}

double log_average_miss_rate(std::span<const ImageDetections> images, double iou_threshold) {
    const Sweep s = sweep(images, iou_threshold);
    return mr_from_curve(fppi_curve(s), s.n_gt);
}

EvalResult evaluate(std::span<const ImageDetections> images, double iou_threshold) {
    const Sweep s = sweep(images, iou_threshold);
    EvalResult r;
    r.fppi_curve = fppi_curve(s);
    r.mr = mr_from_curve(r.fppi_curve, s.n_gt);
    r.ap = average_precision(s.flags, s.n_gt);
    r.recall = recall(s.flags, s.n_gt);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < s.flags.size(); ++k) {
        if (s.flags[k]) ++tp;
        const double rc = s.n_gt == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(s.n_gt);
        r.pr_curve.emplace_back(rc, static_cast<double>(tp) / static_cast<double>(k + 1));
    }
    return r;
}

void to_json(nlohmann::json& j, const EvalResult& r) {
    j = {{"mr", r.mr}, {"ap", r.ap}, {"recall", r.recall}};
}

std::string fppi_csv(const EvalResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "fppi,miss_rate\n";
    for (const auto& [f, m] : r.fppi_curve) os << f << ',' << m << '\n';
    return os.str();
}

std::string pr_csv(const EvalResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "recall,precision\n";
    for (const auto& [rc, p] : r.pr_curve) os << rc << ',' << p << '\n';
    return os.str();
}

}  // namespace detlab::eval
