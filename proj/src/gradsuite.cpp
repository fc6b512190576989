#include "detlab/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "detlab/autodiff/gradcheck.hpp"
#include "detlab/autodiff/ops.hpp"
#include "detlab/data.hpp"
#include "detlab/layers.hpp"
#include "detlab/losses.hpp"
#include "detlab/model.hpp"
#include "detlab/rng.hpp"
#include "detlab/trainer.hpp"

namespace detlab::gradsuite {

namespace {

using ad::Tensor;

constexpr double kEps = 1e-5;
// The full loss sums thousands of terms; a wider step keeps its rounding
// noise well below the tolerance.
constexpr double kModelEps = 1e-4;

// Relative-error floors: below these magnitudes the comparison becomes absolute,
// which keeps double rounding in the difference quotient from dominating.
constexpr double kElementwiseFloor = 1e-4;
constexpr double kOpFloor = 1e-5;
constexpr double kModelFloor = 1e-4;

struct Check {
    std::string name;
    std::string kind;
    double tolerance;
    // Returns the max relative error of one seeded case; bumps the counter
    // for every probe redrawn at a non-differentiable point.
    std::function<double(Rng&, const std::function<Tensor(Tensor)>&, int&)> run;
};

// Identity forward whose backward scales the incoming gradient.
Tensor scale_backward(const Tensor& x, double factor) {
    return Tensor::from_op("scale_backward", x.shape(), std::vector<double>(x.data().begin(), x.data().end()), {x},
                           [factor](ad::Node& self) {
                               ad::Node& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& g = p.ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                           });
}

Tensor random_leaf(Rng& rng, ad::Shape shape, double lo, double hi) {
    std::vector<double> v(ad::shape_size(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

// Entries of magnitude in [0.05, 1] with random sign, clear of kinks at 0.
Tensor signed_leaf(Rng& rng, ad::Shape shape) {
    std::vector<double> v(ad::shape_size(shape));
    for (auto& x : v) x = rng.uniform(0.05, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

Tensor constant_like(Rng& rng, const ad::Shape& shape) {
    std::vector<double> v(ad::shape_size(shape));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(shape, std::move(v));
}

// Random linear functional of y, so every output entry carries gradient.
Tensor project(const Tensor& y, const Tensor& weights) { return ad::sum(ad::mul(y, weights)); }

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

double max_error(const std::function<Tensor()>& loss, std::vector<ad::Probe> probes, double floor,
                 double eps = kEps) {
    double worst = 0.0;
    for (const auto& r : ad::check_probes(loss, probes, eps, floor)) worst = std::max(worst, r.relative_error);
    return worst;
}

std::vector<ad::Probe> all_entries(std::initializer_list<Tensor> leaves) {
    std::vector<ad::Probe> probes;
    for (const auto& t : leaves) {
        for (std::size_t i = 0; i < t.size(); ++i) probes.push_back({t, i});
    }
    return probes;
}

using Finish = std::function<Tensor(Tensor)>;

constexpr int kModelProbes = 4;
constexpr int kMaxRedraws = 20;

// A ReLU input or a GIoU min/max sitting within the step of a probe makes the
// central difference average two slopes. There the one-sided differences
// disagree by about twice the central-vs-analytic gap; on a smooth stretch
// they agree to O(eps * curvature), so a wrong gradient is never excused.
bool near_kink(const std::function<Tensor()>& loss, ad::Probe probe) {
    auto eval = [&] {
        ad::NoGradGuard no_grad;
        return loss().item();
    };
    double& slot = probe.tensor.mutable_data()[probe.index];
    const double saved = slot;
    const double f0 = eval();
    slot = saved + kModelEps;
    const double fp = eval();
    slot = saved - kModelEps;
    const double fm = eval();
    slot = saved;
    const double forward = (fp - f0) / kModelEps, backward = (f0 - fm) / kModelEps;
    const double central = (fp - fm) / (2 * kModelEps);
    Tensor out = loss();
    probe.tensor.node()->ensure_grad();
    probe.tensor.zero_grad();
    out.backward();
    const double analytic = probe.tensor.grad()[probe.index];
    return std::abs(forward - backward) >= std::abs(central - analytic);
}

// f maps leaves to an output; the check projects the output with random weights.
template <typename F>
double check_unary(Rng& rng, const Finish& finish, Tensor x, F f, double floor) {
    const Tensor w = constant_like(rng, f(x).shape());
    return max_error([&] { return finish(project(f(x), w)); }, all_entries({x}), floor);
}

template <typename F>
double check_binary(Rng& rng, const Finish& finish, Tensor a, Tensor b, F f, double floor) {
    const Tensor w = constant_like(rng, f(a, b).shape());
    return max_error([&] { return finish(project(f(a, b), w)); }, all_entries({a, b}), floor);
}

void randomize(ad::ParameterSet& params, Rng& rng, double scale) {
    for (auto& p : params.items()) {
        for (auto& v : p.tensor.mutable_data()) v = rng.uniform(-scale, scale);
    }
}

model::ModelConfig small_model() {
    model::ModelConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.hidden_dim = 8;
    c.embed_dim = 8;
    c.heads = 2;
    c.ffn_dim = 12;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.anchor_frequencies = 2;
    return c;
}

std::vector<Check> build_checks() {
    std::vector<Check> checks;
    auto elementwise = [&](const std::string& name, auto f, bool kink_free) {
        checks.push_back({name, "elementwise", 1e-6, [f, kink_free](Rng& rng, const Finish& finish, int&) {
                              const ad::Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
                              Tensor x = kink_free ? signed_leaf(rng, s) : random_leaf(rng, s, -2.0, 2.0);
                              return check_unary(rng, finish, x, f, kElementwiseFloor);
                          }});
    };
    auto elementwise2 = [&](const std::string& name, auto f) {
        checks.push_back({name, "elementwise", 1e-6, [f](Rng& rng, const Finish& finish, int&) {
                              const ad::Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
                              return check_binary(rng, finish, random_leaf(rng, s, -2.0, 2.0),
                                                  random_leaf(rng, s, -2.0, 2.0), f, kElementwiseFloor);
                          }});
    };
    elementwise2("add", [](const Tensor& a, const Tensor& b) { return ad::add(a, b); });
    elementwise2("sub", [](const Tensor& a, const Tensor& b) { return ad::sub(a, b); });
    elementwise2("mul", [](const Tensor& a, const Tensor& b) { return ad::mul(a, b); });
    elementwise("relu", [](const Tensor& x) { return ad::relu(x); }, true);
    elementwise("sigmoid", [](const Tensor& x) { return ad::sigmoid(x); }, false);
    elementwise("abs", [](const Tensor& x) { return ad::abs(x); }, true);
    elementwise("scale", [](const Tensor& x) { return ad::scale(x, -1.7); }, false);

    auto op = [&](const std::string& name, std::function<double(Rng&, const Finish&, int&)> run) {
        checks.push_back({name, "op", 1e-4, std::move(run)});
    };
    op("matmul", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
        return check_binary(rng, finish, random_leaf(rng, {m, k}, -1, 1), random_leaf(rng, {k, n}, -1, 1),
                            [](const Tensor& a, const Tensor& b) { return ad::matmul(a, b); }, kOpFloor);
    });
    op("add_bias", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 5);
        return check_binary(rng, finish, random_leaf(rng, {m, n}, -1, 1), random_leaf(rng, {1, n}, -1, 1),
                            [](const Tensor& a, const Tensor& b) { return ad::add_bias(a, b); }, kOpFloor);
    });
    op("transpose", [](Rng& rng, const Finish& finish, int&) {
        return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 5)}, -1, 1),
                           [](const Tensor& x) { return ad::transpose(x); }, kOpFloor);
    });
    for (std::size_t axis : {0u, 1u}) {
        op("softmax_axis" + std::to_string(axis), [axis](Rng& rng, const Finish& finish, int&) {
            return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 5)}, -2, 2),
                               [axis](const Tensor& x) { return ad::softmax(x, axis); }, kOpFloor);
        });
        op("mean_axis" + std::to_string(axis), [axis](Rng& rng, const Finish& finish, int&) {
            return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 5)}, -2, 2),
                               [axis](const Tensor& x) { return ad::mean(x, axis); }, kOpFloor);
        });
    }
    op("softmax_3d", [](Rng& rng, const Finish& finish, int&) {
        return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)}, -2, 2),
                           [](const Tensor& x) { return ad::softmax(x, 1); }, kOpFloor);
    });
    op("sum", [](Rng& rng, const Finish& finish, int&) {
        return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 5)}, -2, 2),
                           [](const Tensor& x) { return ad::sum(x); }, kOpFloor);
    });
    op("mean_all", [](Rng& rng, const Finish& finish, int&) {
        return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 5)}, -2, 2),
                           [](const Tensor& x) { return ad::mean_all(x); }, kOpFloor);
    });
    op("layer_norm", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t m = dim(rng, 1, 4), n = dim(rng, 2, 6);
        Tensor x = random_leaf(rng, {m, n}, -2, 2), g = random_leaf(rng, {1, n}, 0.5, 1.5),
               b = random_leaf(rng, {1, n}, -0.5, 0.5);
        const Tensor w = constant_like(rng, {m, n});
        return max_error([&] { return finish(project(ad::layer_norm(x, g, b), w)); }, all_entries({x, g, b}),
                         kOpFloor);
    });
    op("slice_cols", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t n = dim(rng, 2, 6);
        const std::size_t begin = dim(rng, 0, n - 1), count = dim(rng, 1, n - begin);
        return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), n}, -1, 1),
                           [=](const Tensor& x) { return ad::slice_cols(x, begin, count); }, kOpFloor);
    });
    op("concat_cols", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t m = dim(rng, 1, 4);
        return check_binary(rng, finish, random_leaf(rng, {m, dim(rng, 1, 3)}, -1, 1),
                            random_leaf(rng, {m, dim(rng, 1, 3)}, -1, 1), [](const Tensor& a, const Tensor& b) {
                                const Tensor parts[] = {a, b};
                                return ad::concat_cols(parts);
                            }, kOpFloor);
    });
    op("gather_rows", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t m = dim(rng, 1, 5);
        std::vector<std::size_t> rows(dim(rng, 1, 6));
        for (auto& r : rows) r = dim(rng, 0, m - 1);
        return check_unary(rng, finish, random_leaf(rng, {m, dim(rng, 1, 4)}, -1, 1),
                           [rows](const Tensor& x) { return ad::gather_rows(x, rows); }, kOpFloor);
    });
    op("sine_embedding", [](Rng& rng, const Finish& finish, int&) {
        const std::vector<double> freqs = {0.5, 2.0, 7.0};
        return check_unary(rng, finish, random_leaf(rng, {dim(rng, 1, 4), 4}, 0, 1),
                           [freqs](const Tensor& x) { return ad::sine_embedding(x, freqs); }, kOpFloor);
    });

    auto random_boxes = [](Rng& rng, std::size_t n) {
        std::vector<double> v;
        for (std::size_t i = 0; i < n; ++i) {
            v.insert(v.end(), {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)});
        }
        Tensor t({n, 4}, std::move(v));
        t.set_requires_grad(true);
        return t;
    };
    auto random_gt = [](Rng& rng, std::size_t n) {
        std::vector<geom::Box> gt;
        for (std::size_t i = 0; i < n; ++i) {
            gt.push_back({rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)});
        }
        return gt;
    };
    op("giou_loss", [=](Rng& rng, const Finish& finish, int&) {
        const std::size_t n = dim(rng, 1, 4);
        Tensor pred = random_boxes(rng, n);
        const auto gt = random_gt(rng, n);
        return max_error([&] { return finish(loss::box_losses(pred, gt).giou); }, all_entries({pred}), kOpFloor);
    });
    op("l1_box_loss", [=](Rng& rng, const Finish& finish, int&) {
        const std::size_t n = dim(rng, 1, 4);
        Tensor pred = random_boxes(rng, n);
        const auto gt = random_gt(rng, n);
        return max_error([&] { return finish(loss::box_losses(pred, gt).l1); }, all_entries({pred}), kOpFloor);
    });
    op("focal_loss", [](Rng& rng, const Finish& finish, int&) {
        const std::size_t n = dim(rng, 1, 8);
        Tensor logits = random_leaf(rng, {n, 1}, -3, 3);
        std::vector<bool> positive(n);
        for (std::size_t i = 0; i < n; ++i) positive[i] = rng.uniform() < 0.3;
        return max_error([&] { return finish(loss::classification_loss(logits, positive)); }, all_entries({logits}),
                         kOpFloor);
    });
    for (auto kind : {loss::RankingLoss::l1, loss::RankingLoss::smooth_l1, loss::RankingLoss::l2}) {
        op("ranking_" + loss::to_string(kind), [kind](Rng& rng, const Finish& finish, int&) {
            const double target = rng.uniform(1.0, 40.0);
            // keep clear of the kinks at |y* - y| in {0, 1}
            double offset = rng.uniform(0.05, 0.95) + static_cast<double>(rng.integer(0, 5));
            if (rng.uniform() < 0.5) offset = -std::min(offset, target - 0.05);
            Tensor y_star({1}, {target + offset});
            y_star.set_requires_grad(true);
            return max_error([&] { return finish(loss::ranking_loss(kind, y_star, {target})); }, all_entries({y_star}),
                             kOpFloor);
        });
    }

    auto layer = [&](const std::string& name, std::function<double(Rng&, const Finish&, int&)> run) {
        checks.push_back({name, "layer", 1e-4, std::move(run)});
    };
    layer("linear", [](Rng& rng, const Finish& finish, int&) {
        ad::ParameterSet ps;
        const std::size_t in = dim(rng, 1, 5), out = dim(rng, 1, 5);
        auto lin = model::Linear::create(ps, "lin", in, out, rng);
        Tensor x = random_leaf(rng, {dim(rng, 1, 4), in}, -1, 1);
        const Tensor w = constant_like(rng, {x.rows(), out});
        return max_error([&] { return finish(project(lin(x), w)); }, all_entries({x, lin.weight, lin.bias}),
                         kOpFloor);
    });
    layer("multi_head_attention", [](Rng& rng, const Finish& finish, int&) {
        ad::ParameterSet ps;
        const std::size_t heads = dim(rng, 1, 2), width = heads * dim(rng, 1, 3);
        auto mha = model::MultiHeadAttention::create(ps, "mha", width, heads, rng);
        Tensor q = random_leaf(rng, {dim(rng, 1, 4), width}, -1, 1);
        Tensor kv = random_leaf(rng, {dim(rng, 1, 5), width}, -1, 1);
        const Tensor w = constant_like(rng, {q.rows(), width});
        return max_error([&] { return finish(project(mha(q, kv, kv), w)); },
                         all_entries({q, kv, mha.q.weight, mha.k.weight, mha.v.weight, mha.out.weight}), kOpFloor);
    });
    layer("feed_forward", [](Rng& rng, const Finish& finish, int&) {
        ad::ParameterSet ps;
        const std::size_t width = dim(rng, 1, 5);
        auto ffn = model::FeedForward::create(ps, "ffn", width, dim(rng, 1, 6), rng);
        Tensor x = random_leaf(rng, {dim(rng, 1, 4), width}, -1, 1);
        const Tensor w = constant_like(rng, {x.rows(), width});
        return max_error([&] { return finish(project(ffn(x), w)); }, all_entries({x, ffn.in.weight, ffn.out.weight}),
                         kOpFloor);
    });
    layer("ranking_head", [](Rng& rng, const Finish& finish, int&) {
        model::Detector det(small_model(), rng.integer(0, 1 << 30));
        randomize(det.parameters(), rng, 0.5);
        Tensor x = random_leaf(rng, {dim(rng, 1, 6), 8}, -1, 1);
        return max_error([&] { return finish(ad::scale(det.ranking_head_forward(x), 1.0)); }, all_entries({x}),
                         kOpFloor);
    });
    layer("backbone", [](Rng& rng, const Finish& finish, int&) {
        model::Detector det(small_model(), rng.integer(0, 1 << 30));
        Tensor image = random_leaf(rng, {3, 16, 16}, 0, 1);
        const Tensor w = constant_like(rng, {4, 8});
        const Tensor proj = det.parameters().find("backbone.proj.weight")->tensor;
        std::vector<ad::Probe> probes;
        for (int i = 0; i < 16; ++i) probes.push_back({proj, dim(rng, 0, proj.size() - 1)});
        return max_error([&] { return finish(project(det.backbone_forward(image), w)); }, probes, kOpFloor);
    });
    layer("decoder", [](Rng& rng, const Finish& finish, int&) {
        model::Detector det(small_model(), rng.integer(0, 1 << 30));
        randomize(det.parameters(), rng, 0.5);
        const std::size_t x = dim(rng, 1, 4);
        model::QuerySet q;
        std::vector<double> logits;
        for (std::size_t i = 0; i < x; ++i) {
            const geom::Box b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)};
            q.anchors.push_back(b);
            for (double v : {b.cx, b.cy, b.w, b.h}) logits.push_back(model::inverse_sigmoid(v));
        }
        q.anchor_logits = Tensor({x, 4}, logits);
        q.embeddings = random_leaf(rng, {x, 8}, -1, 1);
        Tensor enc = random_leaf(rng, {4, 8}, -1, 1);
        const Tensor w = constant_like(rng, {x, 8});
        return max_error([&] { return finish(project(det.decoder_forward(enc, q), w)); },
                         all_entries({q.embeddings, enc}), kOpFloor);
    });
    layer("detection_heads", [](Rng& rng, const Finish& finish, int&) {
        model::Detector det(small_model(), rng.integer(0, 1 << 30));
        randomize(det.parameters(), rng, 0.5);
        const std::size_t x = dim(rng, 1, 4);
        model::QuerySet q;
        std::vector<double> logits;
        for (std::size_t i = 0; i < x * 4; ++i) logits.push_back(rng.uniform(-2, 1));
        q.anchor_logits = Tensor({x, 4}, logits);
        Tensor x_dec = random_leaf(rng, {x, 8}, -1, 1);
        const Tensor wl = constant_like(rng, {x, 1}), wb = constant_like(rng, {x, 4});
        return max_error([&] {
            const auto d = det.detection_heads(x_dec, q);
            return finish(ad::add(project(d.logits, wl), project(d.boxes, wb)));
        }, all_entries({x_dec}), kOpFloor);
    });

    checks.push_back({"model_spot_check", "model", 1e-4, [](Rng& rng, const Finish& finish, int& redrawn) {
        train::TrainConfig cfg;
        // SGL1 deliberately departs from the derivative of its value; Smooth-L1
        // keeps every path differentiable and the loss value small.
        cfg.ranking_loss = loss::RankingLoss::smooth_l1;
        data::DatasetSpec spec;
        spec.n_images = 1;
        Rng scene_rng = Rng::stream(rng.integer(0, 1 << 30), "data");
        const data::Scene scene = data::generate_scene(spec, scene_rng, 0);
        model::Detector det(cfg.resolved_model(), rng.integer(0, 1 << 30));
        const auto strategy = cfg.strategy.resolved(det.config().tokens());
        // Matching, selection and anchors are piecewise constant or detached by
        // design; hold them at their unperturbed values.
        const train::FrozenProposals frozen = [&] {
            ad::NoGradGuard no_grad;
            return train::forward_loss(det, cfg, strategy, scene, 0).proposals;
        }();
        const auto loss = [&] { return finish(train::forward_loss(det, cfg, strategy, scene, 0, &frozen).total); };
        auto params = det.parameters().items();
        double worst = 0.0;
        for (int i = 0; i < kModelProbes; ++i) {
            for (int attempt = 0;; ++attempt) {
                const auto& p = params[dim(rng, 0, params.size() - 1)];
                ad::Probe probe{p.tensor, dim(rng, 0, p.tensor.size() - 1)};
                const double err = max_error(loss, {probe}, kModelFloor, kModelEps);
                if (err <= 1e-4 || attempt >= kMaxRedraws || !near_kink(loss, probe)) {
                    worst = std::max(worst, err);
                    break;
                }
                ++redrawn;
            }
        }
        return worst;
    }});

    checks.push_back({"sgl1_closed_form", "closed-form", 1e-9, [](Rng& rng, const Finish& finish, int&) {
        const double y = rng.uniform(0.1, 50.0);
        const double y_star_value = rng.uniform() < 0.1 ? y : rng.uniform(0.0, 50.0);
        Tensor y_star({1}, {y_star_value});
        y_star.set_requires_grad(true);
        Tensor out = finish(loss::sgl1(y_star, {y}));
        out.backward();
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        const double guard = 1e-8;
        const double expected = y_star_value >= y ? sig(1.0) - sig(y / std::max(y_star_value, guard))
                                                  : sig(y_star_value / std::max(y, guard)) - sig(1.0);
        return std::abs(y_star.grad()[0] - expected);
    }});
    return checks;
}

}  // namespace

std::vector<std::string> check_names() {
    std::vector<std::string> names;
    for (const auto& c : build_checks()) names.push_back(c.name);
    return names;
}

std::vector<CheckReport> run(const Options& options) {
    std::vector<CheckReport> reports;
    for (const auto& check : build_checks()) {
        const bool corrupt = check.name == options.corrupt;
        const Finish finish = [corrupt](Tensor t) { return corrupt ? scale_backward(t, 1.01) : t; };
        Rng rng = Rng::stream(options.seed, "gradcheck." + check.name);
        CheckReport r{check.name, check.kind, options.cases, 0.0, check.tolerance, false};
        for (int i = 0; i < options.cases; ++i) r.max_error = std::max(r.max_error, check.run(rng, finish, r.redrawn));
        r.passed = r.max_error <= r.tolerance;
        reports.push_back(r);
    }
    return reports;
}

bool all_passed(const std::vector<CheckReport>& reports) {
    return std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.passed; });
}

std::string format_report(const std::vector<CheckReport>& reports) {
    std::ostringstream os;
    for (const auto& r : reports) {
        os << fmt::format("{:<22} {:<12} cases {:>3}  max error {:.3e}  tol {:.0e}  {}", r.name, r.kind, r.cases,
                          r.max_error, r.tolerance, r.passed ? "PASS" : "FAIL");
        if (r.redrawn > 0) os << fmt::format("  ({} probes redrawn at kinks)", r.redrawn);
        os << '\n';
    }
    os << fmt::format("sgl1 gradient at (2, 1): {:.7f}\n", loss::sgl1_gradient(2.0, 1.0));
    return os.str();
}

}  // namespace detlab::gradsuite
