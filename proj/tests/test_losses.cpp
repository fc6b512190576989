#include <doctest.h>

#include <cmath>

#include "detlab/autodiff/ops.hpp"
#include "detlab/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace detlab;
using ad::Tensor;

namespace {

double sgl1_backward(double y_star, double y) {
    Tensor p = Tensor::scalar(y_star, true);
    loss::sgl1(p, {y}).backward();
    return p.grad()[0];
}

}  // namespace

TEST_CASE("l1 gradient sign") {
    CHECK(loss::l1_gradient(1001, 1) == 1.0);
    CHECK(loss::l1_gradient(4, 4) == 0.0);
    CHECK(loss::l1_gradient(0, 5) == -1.0);
}

TEST_CASE("sgl1 hand values") {
    CHECK(sgl1_backward(2, 1) == doctest::Approx(0.1085992).epsilon(1e-6));
    CHECK(sgl1_backward(1, 2) == doctest::Approx(-0.1085992).epsilon(1e-6));
    CHECK(sgl1_backward(0, 3) == doctest::Approx(-0.2310586).epsilon(1e-6));
    CHECK(sgl1_backward(7.5, 7.5) == 0.0);
    CHECK(loss::sgl1(Tensor::scalar(2.0), {5.0}).item() == 3.0);
    CHECK(loss::sgl1_gradient_bound() == doctest::Approx(0.2310586).epsilon(1e-6));
    CHECK_THROWS(loss::sgl1(Tensor::scalar(-0.5), {1.0}));
}

TEST_CASE("sgl1 matches the extended-precision closed form with bounded, sign-consistent values") {
    Rng rng(30);
    for (int i = 0; i < 2000; ++i) {
        const double a = rng.uniform(0, 50), b = rng.uniform(0.01, 50);
        const double g = loss::sgl1_gradient(a, b);
        CHECK(std::abs(g - oracle::sgl1_gradient(a, b)) <= 1e-9);
        CHECK(std::abs(g) <= 0.2310586 + 1e-7);
        if (a != b) CHECK(std::signbit(g) == std::signbit(loss::l1_gradient(a, b)));
        CHECK(std::abs(g + loss::sgl1_gradient(b, a)) <= 1e-12);
        CHECK(sgl1_backward(a, b) == g);
    }
}

TEST_CASE("ranking losses of every kind") {
    const Tensor y = Tensor::scalar(4.0);
    CHECK(loss::ranking_loss(loss::RankingLoss::l1, y, {1.0}).item() == 3.0);
    CHECK(loss::ranking_loss(loss::RankingLoss::l2, y, {1.0}).item() == 9.0);
    CHECK(loss::ranking_loss(loss::RankingLoss::smooth_l1, y, {1.0}).item() == 2.5);
    CHECK(loss::ranking_loss(loss::RankingLoss::smooth_l1, Tensor::scalar(1.5), {1.0}).item() == 0.125);
    CHECK(loss::ranking_loss(loss::RankingLoss::sgl1, y, {1.0}).item() == 3.0);
    for (auto k : {loss::RankingLoss::sgl1, loss::RankingLoss::l1, loss::RankingLoss::smooth_l1, loss::RankingLoss::l2}) {
        CHECK(loss::parse_ranking_loss(loss::to_string(k)) == k);
    }
    CHECK_THROWS(loss::parse_ranking_loss("huber"));
}

TEST_CASE("focal loss") {
    CHECK_THROWS_AS(loss::classification_loss(Tensor::zeros({2, 1}), {true}), ad::DimensionError);
    // p = 0.5 on three predictions, one positive: sum of closed-form terms over 1 positive
    const Tensor logits = Tensor::zeros({3, 1});
    const double expected = 0.25 * 0.25 * std::log(2.0) + 2 * 0.75 * 0.25 * std::log(2.0);
    CHECK(loss::classification_loss(logits, {true, false, false}).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss::focal_term(0.5, true) == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
    const Tensor confident = Tensor::matrix(2, 1, {30.0, -30.0});
    CHECK(loss::classification_loss(confident, {true, false}).item() < 1e-12);
    double previous = 1e9;
    for (double z = -4; z <= 4; z += 0.5) {
        const double v = loss::classification_loss(Tensor::matrix(1, 1, {z}), {true}).item();
        CHECK(v < previous);
        previous = v;
    }
}

TEST_CASE("box losses") {
    const std::vector<geom::Box> gt{test::corners(2, 0, 3, 1)};
    const Tensor far = Tensor::matrix(1, 4, {0.5, 0.5, 1, 1});
    const auto b = loss::box_losses(far, gt);
    CHECK(b.giou.item() == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    const Tensor exact = Tensor::matrix(1, 4, {2.5, 0.5, 1, 1});
    CHECK(loss::box_losses(exact, gt).giou.item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss::box_losses(exact, gt).l1.item() == 0.0);
    const double delta = 0.08;
    const Tensor shifted = Tensor::matrix(1, 4, {2.5 + delta, 0.5, 1, 1});
    CHECK(loss::box_losses(shifted, gt).l1.item() == doctest::Approx(delta / 4).epsilon(1e-12));
    const auto none = loss::box_losses(Tensor::zeros({1, 4}), {});
    CHECK(none.giou.item() == 0.0);
    CHECK(none.l1.item() == 0.0);
}

TEST_CASE("total loss weights") {
    const loss::LossComponents ones{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1)};
    CHECK(loss::total_loss(ones, {}).item() == doctest::Approx(9.05).epsilon(1e-12));
    const loss::LossComponents zeros{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), std::nullopt};
    CHECK(loss::total_loss(zeros, {}).item() == 0.0);

    // linearity: the gradient of the total is the weighted sum of component gradients
    Tensor w = Tensor::matrix(1, 2, {0.3, -0.7}, true);
    auto components = [&] {
        return loss::LossComponents{ad::sum(ad::mul(w, w)), ad::sum(w), ad::sum(ad::sigmoid(w)), ad::mean_all(w)};
    };
    loss::total_loss(components(), {}).backward();
    const std::vector<double> total_grad(w.grad().begin(), w.grad().end());
    std::vector<double> expected(2, 0.0);
    const double weights[4] = {2, 2, 5, 0.05};
    for (int c = 0; c < 4; ++c) {
        w.zero_grad();
        const auto parts = components();
        const Tensor pick[4] = {parts.cls, parts.giou, parts.l1, *parts.ranking};
        pick[c].backward();
        for (int k = 0; k < 2; ++k) expected[k] += weights[c] * w.grad()[k];
    }
    for (int k = 0; k < 2; ++k) CHECK(total_grad[k] == doctest::Approx(expected[k]).epsilon(1e-12));
}
