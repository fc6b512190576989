#include <doctest.h>

#include <chrono>
#include <fstream>
#include <regex>
#include <sstream>

#include "detlab/autodiff/checkpoint.hpp"
#include "detlab/cli.hpp"
#include "detlab/gradsuite.hpp"
#include "detlab/io.hpp"
#include "test_util.hpp"

using namespace detlab;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "detlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& s) { io::write_atomic(p, s); }

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
    return n;
}

// Tag-balance check: every element closes in order, attributes are quoted.
bool well_formed_xml(const std::string& s) {
    std::vector<std::string> stack;
    std::size_t i = 0;
    bool root_seen = false;
    while ((i = s.find('<', i)) != std::string::npos) {
        const auto end = s.find('>', i);
        if (end == std::string::npos) return false;
        const std::string tag = s.substr(i + 1, end - i - 1);
        i = end + 1;
        if (tag.empty()) return false;
        if (tag[0] == '?') continue;
        if (tag[0] == '/') {
            if (stack.empty() || stack.back() != tag.substr(1)) return false;
            stack.pop_back();
            continue;
        }
        if (count(tag, "\"") % 2 != 0) return false;
        const std::string name = tag.substr(0, tag.find_first_of(" /"));
        if (stack.empty()) {
            if (root_seen) return false;
            root_seen = true;
        }
        if (tag.back() != '/') stack.push_back(name);
    }
    return root_seen && stack.empty();
}

struct Fixture {
    fs::path dir = test::temp_dir("cli");

    fs::path dataset(const std::string& name, const std::string& spec_json) {
        write(dir / (name + ".spec.json"), spec_json);
        const auto r = run_cli({"gen-data", "--config", (dir / (name + ".spec.json")).string(), "--out",
                            (dir / (name + ".jsonl")).string()});
        REQUIRE(r.code == 0);
        return dir / (name + ".jsonl");
    }

    fs::path fresh_checkpoint(const std::string& name, const train::TrainConfig& config) {
        model::Detector m(config.resolved_model(), config.seed);
        train::save_trained(dir / name, m, config);
        return dir / name;
    }
};

}  // namespace

TEST_CASE("usage: help, unknown flags, missing subcommand") {
    CHECK(run_cli({"--help"}).code == 0);
    CHECK(run_cli({"train", "--help"}).code == 0);
    CHECK(run_cli({"--bogus"}).code == 2);
    CHECK(run_cli({"grad-check", "--bogus"}).code == 2);
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"eval", "--dataset", "x.jsonl"}).code == 2);
}

TEST_CASE("gen-data") {
    Fixture f;
    const auto path = f.dataset("d", R"({"n_images": 12, "seed": 3})");
    std::ifstream in(path);
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 12);
    const auto summary = nlohmann::json::parse(io::read_file(f.dir / "d.summary.json"));
    CHECK(summary.at("images") == 12);
    CHECK(summary.at("crowd_histogram").size() == 10);

    const auto again = f.dataset("d2", R"({"n_images": 12, "seed": 3})");
    CHECK(io::fnv1a_hex(io::read_file(path)) == io::fnv1a_hex(io::read_file(again)));
    const auto reseeded = run_cli({"gen-data", "--config", (f.dir / "d.spec.json").string(), "--out",
                               (f.dir / "d3.jsonl").string(), "--seed", "4"});
    CHECK(reseeded.code == 0);
    CHECK(io::read_file(f.dir / "d3.jsonl") != io::read_file(path));

    write(f.dir / "bad.json", R"({"n_images": 12, "size_range": [0.5)");
    const auto bad = run_cli({"gen-data", "--config", (f.dir / "bad.json").string(), "--out", (f.dir / "bad.jsonl").string()});
    CHECK(bad.code == 2);
    CHECK_FALSE(bad.err.empty());
    CHECK_FALSE(fs::exists(f.dir / "bad.jsonl"));
    write(f.dir / "inverted.json", R"({"n_images": 12, "size_range": [0.5, 0.1]})");
    CHECK(run_cli({"gen-data", "--config", (f.dir / "inverted.json").string(), "--out", (f.dir / "inv.jsonl").string()})
              .code == 2);
    CHECK_FALSE(fs::exists(f.dir / "inv.jsonl"));
}

TEST_CASE("train smoke, manifest and strategy overrides") {
    Fixture f;
    const auto data = f.dataset("d", R"({"n_images": 5, "seed": 1})");
    write(f.dir / "cfg.json", R"({"epochs": 1})");
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_cli({"train", "--config", (f.dir / "cfg.json").string(), "--dataset", data.string(), "--out",
                        (f.dir / "runs").string(), "--seed", "2"});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(r.code == 0);
    CHECK(seconds < 60.0);
    CHECK(r.out.find("epoch   0") != std::string::npos);
    REQUIRE(fs::exists(f.dir / "runs"));
    const auto run_dir = fs::directory_iterator(f.dir / "runs")->path();
    CHECK(run_dir.filename().string().find("-seed2") != std::string::npos);
    for (const char* file : {"checkpoint.json", "checkpoint.bin", "loss.csv", "eval.json", "manifest.json"})
        CHECK(fs::exists(run_dir / file));
    const auto manifest = nlohmann::json::parse(io::read_file(run_dir / "manifest.json")).get<cli::RunManifest>();
    CHECK(manifest.seed == 2);
    CHECK(manifest.command.find("train") != std::string::npos);
    CHECK_FALSE(manifest.git_describe.empty());
    CHECK(manifest.outputs.size() >= 4);

    // 300 queries need a token grid of at least 300 cells
    write(f.dir / "fine.json",
          R"({"epochs": 1, "model": {"image_size": 40, "patch_size": 2, "hidden_dim": 8, "embed_dim": 8,
              "heads": 2, "ffn_dim": 16, "encoder_layers": 1, "decoder_layers": 1}})");
    write(f.dir / "small.spec.json", R"({"n_images": 2, "seed": 1, "object_count_range": [1, 3]})");
    const auto small = f.dataset("small", R"({"n_images": 2, "seed": 1, "object_count_range": [1, 3]})");
    const auto o = run_cli({"train", "--config", (f.dir / "fine.json").string(), "--dataset", small.string(), "--out",
                        (f.dir / "fine").string(), "--strategy", "two-stage", "--fixed-queries", "300"});
    CHECK(o.code == 0);
    const auto fine_dir = fs::directory_iterator(f.dir / "fine")->path();
    const auto cfg = nlohmann::json::parse(io::read_file(fine_dir / "config.json")).get<train::TrainConfig>();
    CHECK(cfg.strategy.kind == raqg::StrategyKind::two_stage);
    CHECK(cfg.strategy.fixed_queries == 300);

    const auto too_many = run_cli({"train", "--dataset", data.string(), "--out", (f.dir / "x").string(), "--strategy",
                               "two-stage", "--fixed-queries", "300"});
    CHECK(too_many.code == 2);
    CHECK(too_many.err.find("token count") != std::string::npos);
    CHECK(run_cli({"train", "--dataset", data.string(), "--out", (f.dir / "x").string(), "--strategy", "lp"}).code == 2);
    CHECK(run_cli({"train", "--dataset", (f.dir / "missing.jsonl").string(), "--out", (f.dir / "x").string()}).code == 2);
    CHECK(run_cli({"train", "--dataset", data.string(), "--out", (f.dir / "x").string(), "--ranking-loss", "huber"}).code == 2);
}

TEST_CASE("eval") {
    Fixture f;
    const auto data = f.dataset("d", R"({"n_images": 8, "seed": 2})");
    const auto fresh = f.fresh_checkpoint("fresh", train::TrainConfig{});
    const auto r = run_cli({"eval", "--checkpoint", fresh.string(), "--dataset", data.string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    for (const char* key : {"mr", "ap", "recall", "mean_query_count"}) CHECK(j.contains(key));
    CHECK(j.at("mr").get<double>() > 0.9);

    const auto fixed = run_cli({"eval", "--checkpoint", (f.dir / "fresh.json").string(), "--dataset", data.string(),
                            "--strategy", "two-stage", "--fixed-queries", "17"});
    REQUIRE(fixed.code == 0);
    CHECK(nlohmann::json::parse(fixed.out).at("mean_query_count") == 17.0);

    // parameters of a narrower model under a wider model's metadata
    train::TrainConfig narrow;
    narrow.model.hidden_dim = 32;
    model::Detector m(narrow.resolved_model(), 0);
    ad::save_checkpoint(f.dir / "mismatch", m.parameters(),
                        {{"train_config", train::TrainConfig{}}, {"model", train::TrainConfig{}.resolved_model()}});
    const auto bad = run_cli({"eval", "--checkpoint", (f.dir / "mismatch").string(), "--dataset", data.string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("backbone.") != std::string::npos);
}

TEST_CASE("compare: rows, column order and CSV round trip") {
    Fixture f;
    const auto data = f.dataset("d", R"({"n_images": 6, "seed": 3})");
    const auto a = f.fresh_checkpoint("raqg", train::TrainConfig{});
    train::TrainConfig lp;
    lp.strategy = raqg::QueryStrategy::learnable_parameters(12);
    const auto b = f.fresh_checkpoint("lp", lp);
    const auto r = run_cli({"compare", "--run", a.string(), "--run", b.string(), "--run", a.string() + "@two-stage:20",
                        "--dataset", data.string(), "--out", (f.dir / "cmp").string()});
    REQUIRE(r.code == 0);
    const auto header = r.out.substr(0, r.out.find('\n'));
    const std::regex order("strategy\\s+queries\\s+MR\\s+AP\\s+Recall");
    CHECK(std::regex_search(header, order));
    const auto rows = cli::parse_compare_csv(io::read_file(f.dir / "cmp" / "compare.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].strategy == "lp(12)");
    CHECK(rows[1].queries == 12.0);
    CHECK(rows[2].queries == 20.0);
    CHECK(cli::parse_compare_csv(cli::compare_csv(rows)) == rows);
    const auto audit = nlohmann::json::parse(io::read_file(f.dir / "cmp" / "audit.json"));
    CHECK(audit.size() == 3);
    CHECK(audit[0].at("images").size() == 6);

    CHECK(run_cli({"compare", "--run", a.string(), "--dataset", data.string()}).code == 2);
    CHECK(run_cli({"compare", "--run", a.string(), "--run", b.string() + "@lp:5", "--dataset", data.string()}).code == 2);
}

TEST_CASE("compare CSV quoting round trip") {
    const std::vector<cli::CompareRow> rows{{"raqg(removal,M=5)", 7.25, 0.5, 0.25, 0.125},
                                            {"odd \"name\"", 1.0 / 3.0, 1e-10, 0.0, 1.0}};
    CHECK(cli::parse_compare_csv(cli::compare_csv(rows)) == rows);
    CHECK_THROWS(cli::parse_compare_csv("queries,mr\n1,2\n"));
}

TEST_CASE("plot-queries") {
    Fixture f;
    write(f.dir / "d.jsonl", R"({"id": 0, "crowd_level": 0.0, "boxes": []})"
                             "\n"
                             R"({"id": 1, "crowd_level": 0.1, "boxes": [[0.3, 0.4, 0.2, 0.3], [0.7, 0.6, 0.2, 0.2]]})"
                             "\n");
    const auto ck = f.fresh_checkpoint("fresh", train::TrainConfig{});
    const auto empty = run_cli({"plot-queries", "--checkpoint", ck.string(), "--dataset", (f.dir / "d.jsonl").string(),
                            "--scene", "0", "--out", (f.dir / "empty.svg").string()});
    REQUIRE(empty.code == 0);
    const auto svg = io::read_file(f.dir / "empty.svg");
    CHECK(well_formed_xml(svg));
    CHECK(count(svg, "class=\"gt\"") == 0);
    CHECK(count(svg, "class=\"detection\"") == 0);
    CHECK(svg.find("X = 1,") != std::string::npos);

    const auto fixed = run_cli({"plot-queries", "--checkpoint", ck.string(), "--dataset", (f.dir / "d.jsonl").string(),
                            "--scene", "1", "--strategy", "two-stage", "--fixed-queries", "9", "--out",
                            (f.dir / "fixed.svg").string()});
    REQUIRE(fixed.code == 0);
    const auto svg2 = io::read_file(f.dir / "fixed.svg");
    CHECK(well_formed_xml(svg2));
    CHECK(count(svg2, "class=\"query\"") == 9);
    CHECK(count(svg2, "class=\"gt\"") == 2);
    CHECK(run_cli({"plot-queries", "--checkpoint", ck.string(), "--dataset", (f.dir / "d.jsonl").string(), "--scene", "5",
               "--out", (f.dir / "none.svg").string()})
              .code == 2);
}

TEST_CASE("grad-check exit codes") {
    const auto ok = run_cli({"grad-check", "--cases", "3"});
    CHECK(ok.code == 0);
    for (const auto& name : gradsuite::check_names()) CHECK(ok.out.find(name) != std::string::npos);
    CHECK(ok.out.find("0.1085992") != std::string::npos);
    const auto broken = run_cli({"grad-check", "--cases", "3", "--corrupt", "matmul"});
    CHECK(broken.code == 1);
    CHECK(broken.out.find("FAIL") != std::string::npos);
}

TEST_CASE("xml checker rejects broken documents") {
    CHECK(well_formed_xml("<a><b/></a>"));
    CHECK_FALSE(well_formed_xml("<a><b></a>"));
    CHECK_FALSE(well_formed_xml("<a x=\"1></a>"));
}
