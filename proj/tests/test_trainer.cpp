#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "detlab/io.hpp"
#include "detlab/trainer.hpp"
#include "test_util.hpp"

using namespace detlab;

namespace {

data::Dataset scenes(std::int64_t n, std::uint64_t seed) {
    data::DatasetSpec spec;
    spec.n_images = n;
    spec.seed = seed;
    return data::generate_dataset(spec);
}

train::TrainConfig quick(int epochs, std::uint64_t seed = 0) {
    train::TrainConfig c;
    c.epochs = epochs;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("config JSON round trip, hash and validation") {
    train::TrainConfig c;
    c.strategy = raqg::QueryStrategy::two_stage(30);
    c.ranking_loss = loss::RankingLoss::l2;
    c.lr = 2e-4;
    c.seed = 11;
    const auto back = nlohmann::json(c).get<train::TrainConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(c));
    train::TrainConfig other_seed = c;
    other_seed.seed = 12;
    CHECK(train::config_hash(c) == train::config_hash(other_seed));
    other_seed.lr = 1e-3;
    CHECK(train::config_hash(c) != train::config_hash(other_seed));

    train::TrainConfig too_many;
    too_many.strategy = raqg::QueryStrategy::two_stage(300);
    CHECK_THROWS(too_many.validate());
    train::TrainConfig no_epochs;
    no_epochs.epochs = 0;
    CHECK_THROWS(no_epochs.validate());
    train::TrainConfig lp;
    lp.strategy = raqg::QueryStrategy::learnable_parameters(20);
    CHECK(lp.resolved_model().learnable_queries == 20);
}

TEST_CASE("learning rate schedule drops tenfold at epoch 40") {
    train::TrainConfig c;
    c.lr = 1e-4;
    CHECK(ad::effective_learning_rate(c.optimizer_config(), 39) == 1e-4);
    CHECK(ad::effective_learning_rate(c.optimizer_config(), 40) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(ad::effective_learning_rate(c.optimizer_config(), 59) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("train step: finite components and the empty-scene path") {
    const train::TrainConfig config = quick(1);
    model::Detector model(config.resolved_model(), 0);
    train::Trainer trainer(model, config);
    for (const auto& scene : scenes(4, 3)) {
        const auto r = trainer.train_step(scene, 0);
        CHECK(std::isfinite(r.total));
        CHECK(std::isfinite(r.cls));
        REQUIRE(r.ranking);
        CHECK(std::isfinite(*r.ranking));
        CHECK(r.query_count >= scene.gt_boxes.size());
    }
    const auto empty = trainer.train_step(data::Scene{}, 0);
    CHECK_FALSE(empty.ranking);
    CHECK(std::isfinite(empty.cls));
    CHECK(empty.cls > 0.0);
    CHECK(empty.query_count == 1);
}

TEST_CASE("two hundred steps reduce the loss") {
    const auto data = scenes(20, 4);
    double first = 0.0, last = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const train::TrainConfig config = quick(10, seed);
        model::Detector model(config.resolved_model(), seed);
        train::Trainer trainer(model, config);
        for (int step = 0; step < 200; ++step) {
            const auto r = trainer.train_step(data[static_cast<std::size_t>(step) % data.size()], step / 20);
            if (step < 20) first += r.total;
            if (step >= 180) last += r.total;
        }
    }
    CHECK(last < first);
}

TEST_CASE("train writes its artifacts and is deterministic") {
    const auto dir = test::temp_dir("train");
    const auto one = scenes(1, 5);
    model::Detector m(quick(1).resolved_model(), 0);
    const auto outcome = train::train(m, one, quick(1), dir / "one");
    for (const char* f : {"checkpoint.json", "checkpoint.bin", "loss.csv", "eval.json"}) CHECK(std::filesystem::exists(dir / "one" / f));
    CHECK(outcome.epochs.size() == 1);

    const auto five = scenes(5, 6);
    for (const char* run : {"a", "b"}) {
        model::Detector mm(quick(2, 9).resolved_model(), 9);
        train::train(mm, five, quick(2, 9), dir / run);
    }
    CHECK(io::read_file(dir / "a" / "checkpoint.bin") == io::read_file(dir / "b" / "checkpoint.bin"));
    CHECK(io::read_file(dir / "a" / "loss.csv") == io::read_file(dir / "b" / "loss.csv"));

    const auto loaded = train::load_trained(dir / "a" / "checkpoint");
    model::Detector again(quick(2, 9).resolved_model(), 9);
    train::train(again, five, quick(2, 9), dir / "c");
    const auto x = train::evaluate_model(loaded.model, loaded.config.strategy, five);
    const auto y = train::evaluate_model(again, quick(2, 9).strategy, five);
    CHECK(x.metrics.ap == y.metrics.ap);
    CHECK(x.query_counts == y.query_counts);
}

TEST_CASE("fixed strategies report exactly K queries") {
    const auto data = scenes(6, 7);
    train::TrainConfig c = quick(1);
    c.strategy = raqg::QueryStrategy::two_stage(10);
    model::Detector two(c.resolved_model(), 0);
    const auto s = train::evaluate_model(two, c.strategy, data);
    CHECK(s.mean_query_count == 10.0);
    c.strategy = raqg::QueryStrategy::learnable_parameters(7);
    model::Detector lp(c.resolved_model(), 0);
    for (auto q : train::evaluate_model(lp, c.strategy, data).query_counts) CHECK(q == 7);
}

TEST_CASE("ablation grid and table") {
    const auto data = scenes(6, 8);
    std::vector<train::AblationCell> cells;
    for (int m : {0, 5}) {
        train::TrainConfig c = quick(1);
        c.strategy = raqg::QueryStrategy::adaptive(m, true);
        cells.push_back({"M=" + std::to_string(m), c});
    }
    const auto rows = train::ablate(data, cells, test::temp_dir("ablate"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ok);
    const std::string table = train::render_ablation_table(rows, "M grid");
    CHECK(table.find("metric | M=0 | M=5") != std::string::npos);
    CHECK(table.find("Queries | ~") != std::string::npos);

    auto failed = rows;
    failed[1].ok = false;
    failed[1].error = "non-finite loss";
    const std::string ge = train::render_ablation_table(failed, "with divergence");
    CHECK(ge.find("| GE") != std::string::npos);
}
