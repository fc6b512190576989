#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detlab/autodiff/gradcheck.hpp"
#include "detlab/autodiff/ops.hpp"
#include "detlab/data.hpp"
#include "detlab/model.hpp"
#include "test_util.hpp"

using namespace detlab;
using ad::Tensor;

namespace {

model::ModelConfig tiny() {
    model::ModelConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.hidden_dim = 8;
    c.embed_dim = 8;
    c.heads = 2;
    c.ffn_dim = 16;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.anchor_frequencies = 2;
    return c;
}

Tensor scene_image(int size) {
    data::Scene s;
    s.gt_boxes = {{0.3, 0.4, 0.2, 0.3}, {0.7, 0.6, 0.25, 0.2}};
    return data::render_scene(s, size);
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) { return ad::gather_rows(x, perm); }

}  // namespace

TEST_CASE("default model shapes") {
    const model::Detector m(model::ModelConfig{}, 0);
    CHECK(m.config().tokens() == 64);
    const Tensor x = m.backbone_forward(scene_image(64));
    CHECK(x.shape() == ad::Shape{64, 64});
    const auto enc = m.encoder_forward(x);
    CHECK(enc.features.shape() == ad::Shape{64, 64});
    CHECK(enc.proposals.scores.size() == 64);
    for (std::size_t t = 0; t < 64; ++t) {
        CHECK(enc.proposals.scores[t] > 0.0);
        CHECK(enc.proposals.scores[t] < 1.0);
        const auto& b = enc.proposals.box_values[t];
        for (double v : {b.cx, b.cy, b.w, b.h}) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK_THROWS_AS(m.backbone_forward(scene_image(32)), model::ConfigError);
    model::ModelConfig bad;
    bad.patch_size = 7;
    CHECK_THROWS_AS(bad.validate(), model::ConfigError);
}

TEST_CASE("zero image gives positional embedding plus projection bias") {
    const model::Detector m(tiny(), 1);
    const Tensor x = m.backbone_forward(Tensor::zeros({3, 16, 16}));
    const auto* pos = m.parameters().find("backbone.pos_embed");
    const auto* bias = m.parameters().find("backbone.proj.bias");
    REQUIRE(pos);
    REQUIRE(bias);
    for (std::size_t t = 0; t < x.rows(); ++t)
        for (std::size_t c = 0; c < x.cols(); ++c)
            CHECK(x.at(t, c) == doctest::Approx(pos->tensor.at(t, c) + bias->tensor[c]).epsilon(1e-14));
}

TEST_CASE("encoder is permutation-equivariant in features and scores") {
    const model::Detector m(tiny(), 2);
    const Tensor x = m.backbone_forward(scene_image(16));
    std::vector<std::size_t> perm(x.rows());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    const auto a = m.encoder_forward(x);
    const auto b = m.encoder_forward(permute_rows(x, perm));
    for (std::size_t i = 0; i < perm.size(); ++i) {
        CHECK(b.proposals.scores[i] == doctest::Approx(a.proposals.scores[perm[i]]).epsilon(1e-12));
        for (std::size_t c = 0; c < a.features.cols(); ++c)
            CHECK(b.features.at(i, c) == doctest::Approx(a.features.at(perm[i], c)).epsilon(1e-12));
    }
}

TEST_CASE("ranking head") {
    const model::Detector m(tiny(), 4);
    Rng rng(5);
    for (std::size_t n : {1u, 3u, 16u}) {
        const Tensor r = m.ranking_head_forward(test::random_tensor({n, 8}, rng));
        CHECK(r.size() == 1);
        CHECK(r.item() >= 0.0);
    }
    const double err = ad::finite_difference_check([&](const Tensor& x) { return m.ranking_head_forward(x); },
                                                   test::random_tensor({6, 8}, rng, true), 1e-6, 1e-8);
    CHECK(err <= 1e-4);
}

TEST_CASE("query generation selects the top-scoring proposals") {
    const model::Detector m(tiny(), 6);
    model::DenseProposals p;
    p.scores = {0.9, 0.1, 0.5};
    p.box_values = {{0.2, 0.2, 0.1, 0.1}, {0.5, 0.5, 0.1, 0.1}, {0.8, 0.8, 0.1, 0.1}};
    p.logits = Tensor::matrix(3, 1, {2.2, -2.2, 0.0});
    const auto q = m.query_generate(p, 2);
    CHECK(q.token_indices == std::vector<std::size_t>{0, 2});
    CHECK(q.anchors[1] == p.box_values[2]);
    CHECK(q.embeddings.shape() == ad::Shape{2, 8});
    CHECK(m.query_generate(p, 3).count() == 3);
    CHECK(m.query_generate(p, 10).count() == 3);

    const auto enc = m.encoder_forward(m.backbone_forward(scene_image(16)));
    const auto q5 = m.query_generate(enc.proposals, 5);
    double min_sel = 1.0, max_rest = 0.0;
    for (std::size_t t = 0; t < enc.proposals.scores.size(); ++t) {
        const bool selected = std::find(q5.token_indices.begin(), q5.token_indices.end(), t) != q5.token_indices.end();
        if (selected) min_sel = std::min(min_sel, enc.proposals.scores[t]);
        else max_rest = std::max(max_rest, enc.proposals.scores[t]);
    }
    CHECK(min_sel >= max_rest);
}

TEST_CASE("decoder and heads") {
    const model::Detector m(tiny(), 7);
    const auto enc = m.encoder_forward(m.backbone_forward(scene_image(16)));
    for (std::size_t x : {1u, 4u}) {
        const auto q = m.query_generate(enc.proposals, x);
        const Tensor dec = m.decoder_forward(enc.features, q);
        CHECK(dec.shape() == ad::Shape{x, 8});
        const auto det = m.detection_heads(dec, q);
        for (std::size_t i = 0; i < x; ++i) {
            CHECK(det.scores[i] > 0.0);
            CHECK(det.scores[i] < 1.0);
            // the delta network starts at zero: boxes equal anchors
            CHECK(det.box_values[i].cx == doctest::Approx(q.anchors[i].cx).epsilon(1e-9));
            CHECK(det.box_values[i].h == doctest::Approx(q.anchors[i].h).epsilon(1e-9));
        }
    }
    CHECK(m.decoder_forward_all(enc.features, m.query_generate(enc.proposals, 3)).size() == 1);
}

TEST_CASE("learnable slots are image independent") {
    model::ModelConfig c = tiny();
    c.learnable_queries = 6;
    const model::Detector m(c, 8);
    const auto a = m.learnable_queries();
    const auto b = m.learnable_queries();
    CHECK(a.count() == 6);
    CHECK(a.anchors == b.anchors);
    CHECK_THROWS_AS(model::Detector(tiny(), 8).learnable_queries(), model::ConfigError);
}

TEST_CASE("same seed builds identical parameters") {
    const model::Detector a(tiny(), 9), b(tiny(), 9), c(tiny(), 10);
    bool differs = false;
    for (std::size_t i = 0; i < a.parameters().items().size(); ++i) {
        const auto x = a.parameters().items()[i].tensor.data();
        const auto y = b.parameters().items()[i].tensor.data();
        const auto z = c.parameters().items()[i].tensor.data();
        CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
        differs = differs || !std::equal(x.begin(), x.end(), z.begin(), z.end());
    }
    CHECK(differs);
    CHECK(nlohmann::json(tiny()).get<model::ModelConfig>().anchor_frequencies == 2);
}
