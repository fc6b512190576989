#include <doctest.h>

#include <cmath>

#include "detlab/eval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace detlab;

namespace {

std::vector<eval::ImageDetections> perfect_images() {
    return {{{{{0.2, 0.2, 0.1, 0.1}, 0.9}, {{0.6, 0.6, 0.2, 0.2}, 0.8}}, {{0.2, 0.2, 0.1, 0.1}, {0.6, 0.6, 0.2, 0.2}}},
            {{{{0.5, 0.5, 0.3, 0.3}, 0.7}}, {{0.5, 0.5, 0.3, 0.3}}}};
}

}  // namespace

TEST_CASE("match_detections") {
    const std::vector<geom::Box> gt{{0.5, 0.5, 0.2, 0.2}};
    const std::vector<eval::Detection> dup{{gt[0], 0.9}, {gt[0], 0.8}};
    CHECK(eval::match_detections(dup, gt) == std::vector<bool>{true, false});
    CHECK(eval::match_detections({}, gt).empty());

    // 3 detections, 2 GTs: the first claims its best GT, the second overlaps
    // only the claimed one, the third finds the other.
    const std::vector<geom::Box> gts{test::corners(0, 0, 0.4, 0.4), test::corners(0.5, 0.5, 0.9, 0.9)};
    const std::vector<eval::Detection> dets{{test::corners(0, 0, 0.4, 0.38), 0.9},
                                            {test::corners(0.02, 0, 0.42, 0.4), 0.8},
                                            {test::corners(0.5, 0.52, 0.9, 0.9), 0.7}};
    CHECK(eval::match_detections(dets, gts) == std::vector<bool>{true, false, true});
}

TEST_CASE("recall and AP hand values") {
    CHECK(eval::recall({true, true}, 2) == 1.0);
    CHECK(eval::recall({}, 3) == 0.0);
    CHECK(eval::recall({true, false, true, true}, 4) == 0.75);
    CHECK(eval::average_precision({true, true}, 2) == 1.0);
    CHECK(eval::average_precision({false, false}, 2) == 0.0);
    // [TP, FP, TP], 2 GT: 0.5 * 1 + 0.5 * 2/3
    CHECK(eval::average_precision({true, false, true}, 2) == doctest::Approx(0.5 + 1.0 / 3.0).epsilon(1e-12));
    CHECK(eval::average_precision({}, 0) == 1.0);
    CHECK(eval::average_precision({false}, 0) == 0.0);
}

TEST_CASE("AP equals the envelope oracle on random flag sequences") {
    Rng rng(50);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = static_cast<std::size_t>(rng.integer(0, 25));
        std::vector<bool> flags(n);
        std::size_t tp = 0;
        for (std::size_t i = 0; i < n; ++i) {
            flags[i] = rng.uniform() < 0.5;
            tp += flags[i];
        }
        const std::size_t n_gt = tp + static_cast<std::size_t>(rng.integer(0, 4));
        if (n_gt == 0) continue;
        CHECK(std::abs(eval::average_precision(flags, n_gt) - oracle::average_precision(flags, n_gt)) <= 1e-12);
    }
}

TEST_CASE("miss rate fixtures") {
    const auto perfect = eval::evaluate(perfect_images());
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.ap == 1.0);
    CHECK(perfect.mr <= 1e-9);

    auto nothing = perfect_images();
    for (auto& img : nothing) img.detections.clear();
    const auto none = eval::evaluate(nothing);
    CHECK(none.recall == 0.0);
    CHECK(none.mr == 1.0);

    // one false positive and one miss over two images
    std::vector<eval::ImageDetections> mixed = {
        {{{{0.2, 0.2, 0.1, 0.1}, 0.9}, {{0.8, 0.8, 0.1, 0.1}, 0.6}}, {{0.2, 0.2, 0.1, 0.1}}},
        {{{{0.5, 0.5, 0.3, 0.3}, 0.7}}, {{0.5, 0.5, 0.3, 0.3}, {0.1, 0.9, 0.1, 0.1}}}};
    const auto r = eval::evaluate(mixed);
    CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(std::abs(r.mr - oracle::log_average_miss_rate(mixed)) <= 1e-9);
    // the FP scores lowest, so every reference point sees miss 1/3
    CHECK(r.mr == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("miss rate equals the threshold-sweep oracle on random images") {
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<eval::ImageDetections> images(static_cast<std::size_t>(rng.integer(1, 4)));
        for (auto& img : images) {
            const auto n_gt = rng.integer(0, 4);
            for (int g = 0; g < n_gt; ++g) img.gt_boxes.push_back(test::random_box(rng));
            for (const auto& g : img.gt_boxes) {
                if (rng.uniform() < 0.7) img.detections.push_back({{g.cx + rng.uniform(-0.02, 0.02), g.cy, g.w, g.h}, rng.uniform()});
            }
            const auto n_fp = rng.integer(0, 3);
            for (int f = 0; f < n_fp; ++f) img.detections.push_back({test::random_box(rng), rng.uniform()});
        }
        const auto r = eval::evaluate(images);
        CHECK(std::abs(r.mr - oracle::log_average_miss_rate(images)) <= 1e-9);
        CHECK(r.mr >= 0.0);
        CHECK(r.mr <= 1.0);
    }
}

TEST_CASE("curves serialize to CSV") {
    const auto r = eval::evaluate(perfect_images());
    CHECK(eval::fppi_csv(r).rfind("fppi,miss_rate\n", 0) == 0);
    CHECK(eval::pr_csv(r).rfind("recall,precision\n", 0) == 0);
    CHECK(nlohmann::json(r).at("ap") == 1.0);
}
