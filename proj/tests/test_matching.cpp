#include <doctest.h>

#include <cmath>
#include <set>

#include "detlab/matching.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace detlab;

TEST_CASE("hungarian hand cases") {
    const auto one = match::hungarian(match::CostMatrix(1, 1, {4.2}));
    REQUIRE(one.pairs.size() == 1);
    CHECK(one.pairs[0] == std::pair<std::size_t, std::size_t>{0, 0});

    const match::CostMatrix c(2, 2, {1, 2, 2, 1});
    const auto a = match::hungarian(c);
    CHECK(a.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
    CHECK(match::assignment_cost(c, a) == 2.0);

    CHECK(match::hungarian(match::CostMatrix(3, 0)).pairs.empty());
    CHECK_THROWS_AS(match::hungarian(match::CostMatrix(2, 2, {1, NAN, 0, 1})), match::DomainError);
}

TEST_CASE("hungarian equals exhaustive minimum on random matrices") {
    Rng rng(20);
    for (std::size_t rows = 1; rows <= 6; ++rows) {
        for (std::size_t cols = 1; cols <= 6; ++cols) {
            for (int trial = 0; trial < 30; ++trial) {
                match::CostMatrix c(rows, cols);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t k = 0; k < cols; ++k) c(r, k) = rng.uniform(-5, 5);
                const auto a = match::hungarian(c);
                CHECK(a.pairs.size() == std::min(rows, cols));
                CHECK(a.unmatched.size() == rows - a.pairs.size());
                std::set<std::size_t> used_rows, used_cols;
                for (const auto& [r, k] : a.pairs) {
                    used_rows.insert(r);
                    used_cols.insert(k);
                }
                CHECK(used_rows.size() == a.pairs.size());
                CHECK(used_cols.size() == a.pairs.size());
                CHECK(std::abs(match::assignment_cost(c, a) - oracle::brute_force_assignment_cost(c)) <= 1e-9);
            }
        }
    }
}

TEST_CASE("gt_of_prediction") {
    const auto a = match::hungarian(match::CostMatrix(3, 1, {5, 0, 7}));
    CHECK(a.gt_of_prediction(3) == std::vector<long>{-1, 0, -1});
}

TEST_CASE("detr cost") {
    const std::vector<geom::Box> gt{{0.5, 0.5, 0.2, 0.2}};
    const std::vector<geom::Box> pred{{0.5, 0.5, 0.2, 0.2}, {0.1, 0.1, 0.05, 0.05}, {0.5, 0.5, 0.2, 0.2}};
    const std::vector<double> scores{1.0, 0.0, 1.0};
    const auto c = match::detr_cost(scores, pred, gt);
    CHECK(c(0, 0) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(c(0, 0) < c(1, 0));
    CHECK(c(0, 0) == c(2, 0));
    CHECK(match::detr_cost(scores, pred, {}).empty());
}
